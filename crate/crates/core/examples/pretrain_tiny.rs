//! A short pretraining run with the tiny encoder on 64-sample windows, printing
//! the per-epoch mean loss and the schedule endpoints.
use iqjepa::backbone::EncoderArch;
use iqjepa::jepa::{pretrain, TrainConfig};
use iqjepa::masks::{Geometry, MaskSpec};
use iqjepa::synthdata::{generate_corpus, SyntheticDatasetSpec};

fn main() -> iqjepa::Result<()> {
    let spec = SyntheticDatasetSpec {
        aoa_classes: 5,
        replicas: 4,
        window: 64,
        train_fraction: 1.0,
        ..Default::default()
    };
    let (samples, _) = generate_corpus(&spec)?;
    // 4 antennas × 16 = 64 rows; the tiny encoder has stride 4, so one antenna is 4 latent rows
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 16,
        base_lr: 3e-3,
        arch: EncoderArch::tiny(),
        upsample: 16,
        mask: MaskSpec::for_grid(Geometry::Antenna, (16, 16), 4),
        ..Default::default()
    };
    let dir = std::env::temp_dir().join("iqjepa_pretrain_tiny");
    let out = pretrain(&cfg, &samples, &dir)?;
    let per_epoch = out.reports.len() / cfg.epochs;
    for (e, chunk) in out.reports.chunks(per_epoch).enumerate() {
        let mean = chunk.iter().map(|r| r.loss).sum::<f64>() / chunk.len() as f64;
        println!("epoch {e}: loss {mean:.4}");
    }
    let last = out.reports.last().unwrap();
    println!("final tau {:.6}, lr {:e}", last.tau, last.lr);
    println!("checkpoint {} in {}", out.manifest.checkpoint_id, out.checkpoint_dir.display());
    Ok(())
}
