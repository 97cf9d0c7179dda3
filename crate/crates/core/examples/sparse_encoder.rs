//! Sparse vs dense forward through the default encoder: identical with nothing
//! masked, and exactly zero at masked latent cells under a time mask.
use iqjepa::backbone::{Encoder, EncoderArch, Mode};
use iqjepa::grid::{upsample_antennas, GridTensor};
use iqjepa::jepa::construct_masked_input;
use iqjepa::masks::{generate_mask, BinaryMask, Geometry, MaskSpec};
use iqjepa::synthdata::{generate_corpus, SyntheticDatasetSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> iqjepa::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut enc = Encoder::<f32>::new(EncoderArch::wj_cnn(), &mut rng)?;
    println!("{} parameters, stride {}", enc.net.num_params(), enc.stride());

    let spec = SyntheticDatasetSpec { replicas: 1, aoa_classes: 2, ..Default::default() };
    let (samples, _) = generate_corpus(&spec)?;
    let grids = samples[..4].iter().map(|s| upsample_antennas(s, 64)).collect::<iqjepa::Result<Vec<_>>>()?;
    let x = GridTensor::batch::<f32>(&grids)?;

    let dense = enc.dense_forward(x.clone(), Mode::Train)?;
    let ones = vec![BinaryMask::all_visible(8, 8); 4];
    let sparse = enc.sparse_forward(x.clone(), &ones, Mode::Train, None)?;
    println!("latent {:?}; all-visible max |sparse - dense| = {:e}", dense.shape(), dense.max_abs_diff(&sparse));

    let mspec = MaskSpec::default_for(Geometry::Time);
    let masks = (0..4).map(|_| generate_mask(&mspec, (8, 8), &mut rng)).collect::<iqjepa::Result<Vec<_>>>()?;
    let h = enc.sparse_forward(construct_masked_input(&x, &masks, 32)?, &masks, Mode::Train, None)?;
    let mut worst = 0.0f32;
    for (n, m) in masks.iter().enumerate() {
        for (i, j) in m.masked_indices() {
            for c in 0..h.c() {
                worst = worst.max(h.at(n, c, i, j).abs());
            }
        }
    }
    println!("time mask: max |latent| at masked cells = {worst}");
    Ok(())
}
