//! Draws one latent mask per geometry on the default 8×8 grid and prints it
//! (`#` masked, `.` visible), then the 256×256 input-resolution coverage.
use iqjepa::masks::{generate_mask, upsample_mask, Geometry, MaskSpec};

fn main() -> iqjepa::Result<()> {
    for g in [Geometry::Random, Geometry::Antenna, Geometry::Time, Geometry::Multiblock] {
        let spec = MaskSpec::default_for(g).with_seed(4);
        let m = generate_mask(&spec, (8, 8), &mut spec.rng())?;
        println!("{g}: patch {:?}, {} of 64 cells masked", spec.patch_latent, m.masked_count());
        for i in 0..8 {
            let row: String = (0..8).map(|j| if m.is_masked(i, j) { '#' } else { '.' }).collect();
            println!("  {row}");
        }
        let big = upsample_mask(&m, 32)?;
        println!("  input grid {:?}: fraction {:.4}\n", big.dims(), big.masked_fraction());
    }
    Ok(())
}
