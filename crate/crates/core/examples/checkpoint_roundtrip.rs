//! Saves an encoder, reloads it, and confirms the latent output is bit-identical.
use iqjepa::backbone::{load_checkpoint, save_checkpoint, Encoder, EncoderArch, Mode};
use iqjepa::Tensor4;
use rand::{Rng, SeedableRng};

fn main() -> iqjepa::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let mut enc = Encoder::<f32>::new(EncoderArch::wj_cnn(), &mut rng)?;
    let dir = std::env::temp_dir().join("iqjepa_checkpoint_roundtrip");
    let manifest = save_checkpoint(&enc, &dir)?;
    println!("saved {} ({} tensors) to {}", manifest.checkpoint_id, manifest.tensors.len(), dir.display());

    let mut back = load_checkpoint(&dir)?.encoder;
    let x = Tensor4::from_vec([1, 2, 256, 256], (0..2 * 256 * 256).map(|_| rng.random_range(-1.0f32..1.0)).collect())?;
    let a = enc.dense_forward(x.clone(), Mode::Eval)?;
    let b = back.dense_forward(x, Mode::Eval)?;
    let same = a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits());
    println!("reloaded encoder output bit-identical: {same}");
    Ok(())
}
