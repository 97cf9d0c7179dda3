//! Latent-resolution mask geometries and resolution changes.
//!
//! Masks are drawn on the encoder's output grid (`8 × 8` for the default
//! `256 × 256` input at stride 32) and only ever expanded from there, so
//! every layer resolution sees an exact, block-aligned copy.
//!
//! Cell value `1` is visible context, `0` is hidden.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Binary occupancy grid; `0` = masked, `1` = visible.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

/// A mask at the encoder's latent resolution.
pub type LatentMask = BinaryMask;

impl BinaryMask {
    pub fn all_visible(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![1; rows * cols],
        }
    }

    pub fn from_cells(rows: usize, cols: usize, cells: Vec<u8>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::Shape(format!(
                "mask of {rows}x{cols} needs {} cells, got {}",
                rows * cols,
                cells.len()
            )));
        }
        if let Some(v) = cells.iter().find(|&&v| v > 1) {
            return Err(Error::Mask(format!("mask cell value {v} is not 0 or 1")));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.cells[r * self.cols + c]
    }

    #[inline]
    pub fn is_masked(&self, r: usize, c: usize) -> bool {
        self.get(r, c) == 0
    }

    pub fn set_masked(&mut self, r: usize, c: usize) {
        self.cells[r * self.cols + c] = 0;
    }

    pub fn masked_count(&self) -> usize {
        self.cells.iter().filter(|&&v| v == 0).count()
    }

    pub fn visible_count(&self) -> usize {
        self.cells.len() - self.masked_count()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked_count() as f64 / self.cells.len() as f64
    }

    /// The masked index set, row-major.
    pub fn masked_indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 0)
            .map(move |(k, _)| (k / self.cols, k % self.cols))
    }

    /// Cells as `0`/`1` multipliers.
    pub fn multipliers<T: Scalar>(&self) -> Vec<T> {
        self.cells
            .iter()
            .map(|&v| if v == 1 { T::one() } else { T::zero() })
            .collect()
    }

    fn mask_rect(&mut self, r0: usize, c0: usize, h: usize, w: usize) {
        for r in r0..r0 + h {
            self.cells[r * self.cols + c0..r * self.cols + c0 + w].fill(0);
        }
    }

    /// Plain-text PGM (`P2`): visible cells white (255), masked cells black (0).
    pub fn to_pgm(&self) -> String {
        let mut s = format!("P2\n{} {}\n255\n", self.cols, self.rows);
        for r in 0..self.rows {
            let row: Vec<&str> = self.cells[r * self.cols..(r + 1) * self.cols]
                .iter()
                .map(|&v| if v == 1 { "255" } else { "0" })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Random,
    Antenna,
    Time,
    Multiblock,
}

impl Geometry {
    pub const ALL: [Geometry; 4] = [
        Geometry::Random,
        Geometry::Antenna,
        Geometry::Time,
        Geometry::Multiblock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Geometry::Random => "random",
            Geometry::Antenna => "antenna",
            Geometry::Time => "time",
            Geometry::Multiblock => "multiblock",
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Geometry::Random),
            "antenna" => Ok(Geometry::Antenna),
            "time" => Ok(Geometry::Time),
            "multiblock" | "m.block" => Ok(Geometry::Multiblock),
            other => Err(Error::InvalidArgument(format!(
                "unknown mask geometry '{other}' (expected random, antenna, time or multiblock)"
            ))),
        }
    }
}

pub const DEFAULT_TARGET_FRACTION: f64 = 0.25;

/// Configuration of one mask geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub geometry: Geometry,
    /// Unit patch `(rows, cols)` in latent cells.
    pub patch_latent: (usize, usize),
    pub target_fraction: f64,
    pub seed: u64,
    /// Multi-block blocks are `block_units.0 × block_units.1` patches.
    #[serde(default = "default_block_units")]
    pub block_units: (usize, usize),
    /// Time masks pick scattered columns instead of one contiguous run.
    #[serde(default)]
    pub scattered_time: bool,
}

fn default_block_units() -> (usize, usize) {
    (2, 2)
}

impl MaskSpec {
    /// Defaults for the standard `256 × 256` grid at stride 32 (latent `8 × 8`,
    /// one antenna = 2 latent rows): random / multi-block units are `2 × 1`,
    /// antenna bands `2 × 8`, time columns `8 × 1`.
    pub fn default_for(geometry: Geometry) -> Self {
        Self::for_grid(geometry, (8, 8), 2)
    }

    /// Defaults for an arbitrary latent grid where one antenna spans
    /// `band_rows` latent rows.
    pub fn for_grid(geometry: Geometry, latent_dims: (usize, usize), band_rows: usize) -> Self {
        let (h, w) = latent_dims;
        let band = band_rows.max(1);
        let patch_latent = match geometry {
            Geometry::Random | Geometry::Multiblock => (band, 1),
            Geometry::Antenna => (band, w),
            Geometry::Time => (h, 1),
        };
        Self {
            geometry,
            patch_latent,
            target_fraction: DEFAULT_TARGET_FRACTION,
            seed: 0,
            block_units: default_block_units(),
            scattered_time: false,
        }
    }

    pub fn with_fraction(mut self, f: f64) -> Self {
        self.target_fraction = f;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// RNG for this spec's own seed.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn check_fraction(&self) -> Result<()> {
        let f = self.target_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Mask(format!(
                "target fraction {f} must lie strictly between 0 and 1"
            )));
        }
        Ok(())
    }
}

/// Seed for sample `index` of a batch drawn with `base`.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    base ^ index
}

/// Draws a mask of `spec.geometry`.
pub fn generate_mask(spec: &MaskSpec, dims: (usize, usize), rng: &mut impl Rng) -> Result<LatentMask> {
    match spec.geometry {
        Geometry::Random => gen_random_mask(spec, dims, rng),
        Geometry::Antenna => gen_antenna_mask(spec, dims, rng),
        Geometry::Time => gen_time_mask(spec, dims, rng),
        Geometry::Multiblock => gen_multiblock_mask(spec, dims, rng),
    }
}

fn place_until(
    dims: (usize, usize),
    unit: (usize, usize),
    target: f64,
    rng: &mut impl Rng,
) -> Result<LatentMask> {
    let (h, w) = dims;
    let (ph, pw) = unit;
    if ph == 0 || pw == 0 || ph > h || pw > w {
        return Err(Error::Mask(format!(
            "patch {ph}x{pw} does not fit a {h}x{w} latent grid"
        )));
    }
    let mut m = BinaryMask::all_visible(h, w);
    while m.masked_fraction() < target {
        let r0 = rng.random_range(0..=h - ph);
        let c0 = rng.random_range(0..=w - pw);
        m.mask_rect(r0, c0, ph, pw);
    }
    if m.visible_count() == 0 {
        return Err(Error::Mask("mask leaves no visible context".into()));
    }
    Ok(m)
}

/// Independently placed unit patches until the masked fraction reaches the target.
pub fn gen_random_mask(spec: &MaskSpec, dims: (usize, usize), rng: &mut impl Rng) -> Result<LatentMask> {
    spec.check_fraction()?;
    place_until(dims, spec.patch_latent, spec.target_fraction, rng)
}

/// Whole antenna bands, `round(fraction · bands)` of them (at least one).
pub fn gen_antenna_mask(spec: &MaskSpec, dims: (usize, usize), rng: &mut impl Rng) -> Result<LatentMask> {
    spec.check_fraction()?;
    let (h, w) = dims;
    let band = spec.patch_latent.0;
    if band == 0 || h % band != 0 {
        return Err(Error::Mask(format!(
            "antenna band of {band} rows does not divide {h} latent rows"
        )));
    }
    let bands = h / band;
    let k = ((spec.target_fraction * bands as f64).round() as usize).max(1);
    if k >= bands {
        return Err(Error::Mask(format!(
            "masking {k} of {bands} antenna bands leaves no context"
        )));
    }
    let mut m = BinaryMask::all_visible(h, w);
    for b in sample(rng, bands, k) {
        m.mask_rect(b * band, 0, band, w);
    }
    Ok(m)
}

/// Full-height columns: one contiguous run of `round(fraction · width)` columns,
/// or scattered columns when `spec.scattered_time` is set.
pub fn gen_time_mask(spec: &MaskSpec, dims: (usize, usize), rng: &mut impl Rng) -> Result<LatentMask> {
    spec.check_fraction()?;
    let (h, w) = dims;
    let k = ((spec.target_fraction * w as f64).round() as usize).max(1);
    if k >= w {
        return Err(Error::Mask(format!(
            "masking {k} of {w} latent columns leaves no context"
        )));
    }
    let mut m = BinaryMask::all_visible(h, w);
    if spec.scattered_time {
        for c in sample(rng, w, k) {
            m.mask_rect(0, c, h, 1);
        }
    } else {
        let start = rng.random_range(0..=w - k);
        m.mask_rect(0, start, h, k);
    }
    Ok(m)
}

/// Contiguous blocks of `block_units` patches until the target fraction is reached.
pub fn gen_multiblock_mask(
    spec: &MaskSpec,
    dims: (usize, usize),
    rng: &mut impl Rng,
) -> Result<LatentMask> {
    spec.check_fraction()?;
    let (ph, pw) = spec.patch_latent;
    let (gr, gc) = spec.block_units;
    place_until(dims, (ph * gr, pw * gc), spec.target_fraction, rng)
}

/// Area in cells of one placement unit for the geometry.
pub fn unit_area(spec: &MaskSpec) -> usize {
    match spec.geometry {
        Geometry::Multiblock => {
            spec.patch_latent.0 * spec.block_units.0 * spec.patch_latent.1 * spec.block_units.1
        }
        _ => spec.patch_latent.0 * spec.patch_latent.1,
    }
}

fn axis_map(src: usize, dst: usize) -> Result<Box<dyn Fn(usize) -> usize>> {
    if src == 0 || dst == 0 {
        return Err(Error::Mask("mask dimensions must be non-zero".into()));
    }
    if dst >= src {
        if !dst.is_multiple_of(src) {
            return Err(Error::Mask(format!(
                "layer size {dst} is not an integer multiple of mask size {src}"
            )));
        }
        let f = dst / src;
        Ok(Box::new(move |i| i / f))
    } else {
        if !src.is_multiple_of(dst) {
            return Err(Error::Mask(format!(
                "layer size {dst} is not an integer divisor of mask size {src}"
            )));
        }
        let f = src / dst;
        Ok(Box::new(move |i| i * f))
    }
}

/// Nearest-neighbour rescaling of a mask to `(h, w)` by integer ratios.
pub fn adapt_mask_to_layer(m: &BinaryMask, layer_dims: (usize, usize)) -> Result<BinaryMask> {
    let (h, w) = layer_dims;
    if (h, w) == m.dims() {
        return Ok(m.clone());
    }
    let row = axis_map(m.rows, h)?;
    let col = axis_map(m.cols, w)?;
    let src_cols: Vec<usize> = (0..w).map(&col).collect();
    let mut cells = Vec::with_capacity(h * w);
    for r in 0..h {
        let base = row(r) * m.cols;
        cells.extend(src_cols.iter().map(|&c| m.cells[base + c]));
    }
    Ok(BinaryMask {
        rows: h,
        cols: w,
        cells,
    })
}

/// Expands a latent mask to input resolution (each cell becomes `stride × stride`).
pub fn upsample_mask(m: &LatentMask, stride: usize) -> Result<BinaryMask> {
    if stride == 0 {
        return Err(Error::Mask("stride must be at least 1".into()));
    }
    adapt_mask_to_layer(m, (m.rows * stride, m.cols * stride))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seeded(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_patch_units() {
        assert_eq!(MaskSpec::default_for(Geometry::Random).patch_latent, (2, 1));
        assert_eq!(MaskSpec::default_for(Geometry::Multiblock).patch_latent, (2, 1));
        assert_eq!(MaskSpec::default_for(Geometry::Antenna).patch_latent, (2, 8));
        assert_eq!(MaskSpec::default_for(Geometry::Time).patch_latent, (8, 1));
    }

    #[test]
    fn random_mask_crosses_target_at_patch_granularity() {
        let spec = MaskSpec::default_for(Geometry::Random).with_seed(7);
        let m = gen_random_mask(&spec, (8, 8), &mut spec.rng()).unwrap();
        assert!((16..=17).contains(&m.masked_count()), "{}", m.masked_count());

        let single = spec.clone().with_fraction(2.0 / 64.0);
        let m = gen_random_mask(&single, (8, 8), &mut single.rng()).unwrap();
        assert_eq!(m.masked_count(), 2);

        let again = gen_random_mask(&single, (8, 8), &mut single.rng()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn fraction_outside_unit_interval_is_rejected() {
        for f in [0.0, 1.0, 1.5, -0.1] {
            for g in Geometry::ALL {
                let spec = MaskSpec::default_for(g).with_fraction(f);
                assert!(generate_mask(&spec, (8, 8), &mut seeded(0)).is_err(), "{g} {f}");
            }
        }
    }

    #[test]
    fn antenna_mask_bands() {
        let spec = MaskSpec::default_for(Geometry::Antenna).with_seed(3);
        let m = gen_antenna_mask(&spec, (8, 8), &mut spec.rng()).unwrap();
        assert_eq!(m.masked_count(), 16);
        for r in 0..8 {
            let masked = (0..8).filter(|&c| m.is_masked(r, c)).count();
            assert!(masked == 0 || masked == 8);
        }
        let half = spec.clone().with_fraction(0.5);
        assert_eq!(gen_antenna_mask(&half, (8, 8), &mut seeded(1)).unwrap().masked_count(), 32);
        assert_eq!(
            gen_antenna_mask(&spec, (8, 8), &mut spec.rng()).unwrap(),
            gen_antenna_mask(&spec, (8, 8), &mut spec.rng()).unwrap()
        );
        let all = spec.clone().with_fraction(0.9);
        assert!(gen_antenna_mask(&all, (8, 8), &mut seeded(1)).is_err());
    }

    #[test]
    fn antenna_mask_on_two_bands_masks_one() {
        let spec = MaskSpec::for_grid(Geometry::Antenna, (4, 4), 2);
        let m = gen_antenna_mask(&spec, (4, 4), &mut seeded(9)).unwrap();
        assert_eq!(m.masked_count(), 8);
    }

    #[test]
    fn time_mask_columns() {
        let spec = MaskSpec::default_for(Geometry::Time);
        let m = gen_time_mask(&spec, (8, 8), &mut seeded(5)).unwrap();
        assert_eq!(m.masked_count(), 16);
        let one = spec.clone().with_fraction(1.0 / 8.0);
        assert_eq!(gen_time_mask(&one, (8, 8), &mut seeded(5)).unwrap().masked_count(), 8);
        let all = spec.clone().with_fraction(0.95);
        assert!(gen_time_mask(&all, (8, 8), &mut seeded(5)).is_err());
    }

    #[test]
    fn multiblock_single_block() {
        let spec = MaskSpec::default_for(Geometry::Multiblock).with_fraction(8.0 / 64.0);
        let m = gen_multiblock_mask(&spec, (8, 8), &mut seeded(11)).unwrap();
        assert_eq!(m.masked_count(), 8);
        let (r0, c0) = m.masked_indices().next().unwrap();
        for r in r0..r0 + 4 {
            for c in c0..c0 + 2 {
                assert!(m.is_masked(r, c));
            }
        }
    }

    #[test]
    fn multiblock_quarter() {
        let spec = MaskSpec::default_for(Geometry::Multiblock);
        for seed in 0..50 {
            let m = gen_multiblock_mask(&spec, (8, 8), &mut seeded(seed)).unwrap();
            // two blocks of 8 suffice unless they collide
            assert!((16..=24).contains(&m.masked_count()));
        }
    }

    #[test]
    fn upsample_mask_blocks() {
        let mut m = BinaryMask::all_visible(8, 8);
        m.set_masked(1, 2);
        let up = upsample_mask(&m, 32).unwrap();
        assert_eq!(up.dims(), (256, 256));
        assert_eq!(up.masked_count(), 32 * 32);
        for r in 0..256 {
            for c in 0..256 {
                assert_eq!(up.is_masked(r, c), r / 32 == 1 && c / 32 == 2);
            }
        }
        assert_eq!(adapt_mask_to_layer(&up, (8, 8)).unwrap(), m);
        let ones = BinaryMask::all_visible(8, 8);
        assert_eq!(upsample_mask(&ones, 32).unwrap().masked_count(), 0);
    }

    #[test]
    fn adapt_rejects_fractional_ratio() {
        let m = BinaryMask::all_visible(8, 8);
        assert!(adapt_mask_to_layer(&m, (12, 8)).is_err());
        assert!(adapt_mask_to_layer(&m, (3, 8)).is_err());
        assert_eq!(adapt_mask_to_layer(&m, (8, 8)).unwrap(), m);
        assert_eq!(adapt_mask_to_layer(&m, (64, 64)).unwrap().dims(), (64, 64));
    }

    #[test]
    fn pgm_layout() {
        let mut m = BinaryMask::all_visible(2, 3);
        m.set_masked(1, 0);
        assert_eq!(m.to_pgm(), "P2\n3 2\n255\n255 255 255\n0 255 255\n");
    }

    proptest! {
        #[test]
        fn adapt_round_trip(
            cells in proptest::collection::vec(0u8..2, 16),
            fr in 1usize..6,
            fc in 1usize..6,
        ) {
            let m = BinaryMask::from_cells(4, 4, cells).unwrap();
            let up = adapt_mask_to_layer(&m, (4 * fr, 4 * fc)).unwrap();
            prop_assert_eq!(adapt_mask_to_layer(&up, (4, 4)).unwrap(), m);
        }

        #[test]
        fn time_mask_contiguous(seed in 0u64..10_000, f in 0.05f64..0.85) {
            let spec = MaskSpec::default_for(Geometry::Time).with_fraction(f);
            if let Ok(m) = gen_time_mask(&spec, (8, 8), &mut seeded(seed)) {
                let cols: Vec<usize> = (0..8).filter(|&c| m.is_masked(0, c)).collect();
                for w in cols.windows(2) {
                    prop_assert_eq!(w[1], w[0] + 1);
                }
                for &c in &cols {
                    prop_assert!((0..8).all(|r| m.is_masked(r, c)));
                }
            }
        }
    }
}
