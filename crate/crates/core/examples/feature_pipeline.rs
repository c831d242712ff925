//! End-to-end run on precomputed features: write an OVAFEAT1 file, read it
//! back, train one expert per class and evaluate in both heads.
//!
//! cargo run --release --example feature_pipeline

use ova_inn::continual::{self, EvalMode, ExpertRegistry, TaskPartition};
use ova_inn::dataio::{self, LabeledVectors};
use ova_inn::numkit::{Rng, Vector};
use ova_inn::optim::{self, TrainConfig};

fn synthetic(rng: &mut Rng, centers: &[Vec<f64>], per_class: usize) -> ova_inn::Result<LabeledVectors> {
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (c, mu) in centers.iter().enumerate() {
        for _ in 0..per_class {
            vectors.push(Vector::from(mu.iter().map(|m| m + 0.3 * rng.normal()).collect::<Vec<_>>()));
            labels.push(c as u32);
        }
    }
    LabeledVectors::new(centers[0].len(), vectors, labels)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Rng::new(5);
    let centers: Vec<Vec<f64>> = (0..4).map(|_| (0..32).map(|_| rng.uniform(3.0)).collect()).collect();
    let dir = std::env::temp_dir().join("ova-inn-feature-pipeline");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("train.feat");
    dataio::write_feature_file(&synthetic(&mut rng, &centers, 150)?, &path)?;
    let train = dataio::load_feature_file(&path)?;
    let test = synthetic(&mut rng, &centers, 50)?;
    println!("read {} records of dim {} from {}", train.len(), train.dim(), path.display());

    let cfg = TrainConfig { epochs: 30, batch_size: 32, rank: 8, ..TrainConfig::cifar100() };
    let mut reg = ExpertRegistry::new();
    for (c, batch) in &dataio::make_class_stream(&train, &train.classes())?.batches {
        reg.add_class(*c, optim::train_class(batch.vectors(), &cfg, &mut Rng::new(cfg.class_seed(*c)))?.net)?;
    }

    let single = continual::evaluate(&reg, &test, EvalMode::SingleHead, None)?;
    let tasks: TaskPartition = "0,1;2,3".parse()?;
    let multi = continual::evaluate(&reg, &test, EvalMode::MultiHead, Some(&tasks))?;
    println!("single-head {:.4}", single.final_accuracy().unwrap_or(0.0));
    println!("multi-head  {:.4}", multi.final_accuracy().unwrap_or(0.0));
    println!("confusion {:?}", single.confusion_matrix);
    Ok(())
}
