//! Few-shot linear probe and 5-NN on frozen embeddings of a random-weights
//! encoder, the baseline any pretrained encoder has to beat.
use iqjepa::backbone::{Encoder, EncoderArch};
use iqjepa::eval::{extract_embeddings, few_shot_eval, Method, ShotProtocol};
use iqjepa::synthdata::{generate_corpus, SyntheticDatasetSpec, Task};
use rand::SeedableRng;

fn main() -> iqjepa::Result<()> {
    let spec = SyntheticDatasetSpec {
        aoa_classes: 5,
        replicas: 12,
        train_fraction: 0.75,
        seed: 3,
        ..Default::default()
    };
    let (train, test) = generate_corpus(&spec)?;
    let names = spec.label_names();
    let enc = Encoder::<f32>::new(EncoderArch::wj_cnn(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(1))?;
    let tr = extract_embeddings(&enc, &train, 64, &names, "random")?;
    let te = extract_embeddings(&enc, &test, 64, &names, "random")?;
    println!("{} x {} train embeddings", tr.len(), tr.dim);
    for task in Task::ALL {
        let classes = match task {
            Task::Modulation => &names.modulation,
            Task::Aoa => &names.aoa,
        };
        for shots in [1, 10] {
            for m in [Method::linear(), Method::knn()] {
                let r = few_shot_eval(&tr.task(task)?, &te.task(task)?, &ShotProtocol::new(shots, 3), &m, classes)?;
                println!("{:>10} {:>6} {shots:>2}-shot: {:.3} ± {:.3} (chance {:.3})", task.to_string(), m.to_string(), r.mean, r.std, 1.0 / classes.len() as f64);
            }
        }
    }
    Ok(())
}
