//! Nearest-class-mean baseline next to OvA experts on the same stream.
//!
//! cargo run --release --example prototype_baseline

use ova_inn::continual::{self, EvalMode, ExpertRegistry, PrototypeModel};
use ova_inn::dataio::{self, LabeledVectors};
use ova_inn::numkit::{Rng, Vector};
use ova_inn::optim::{self, TrainConfig};

/// Two classes share a mean but differ in spread, which a mean-only model cannot tell apart.
fn rings(rng: &mut Rng, n: usize) -> ova_inn::Result<LabeledVectors> {
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (c, radius) in [(0u32, 0.5), (1, 3.0)] {
        for _ in 0..n {
            let a = rng.uniform(std::f64::consts::PI);
            let r = radius + 0.1 * rng.normal();
            vectors.push(Vector::from(vec![r * a.cos(), r * a.sin()]));
            labels.push(c);
        }
    }
    LabeledVectors::new(2, vectors, labels)
}

fn main() -> ova_inn::Result<()> {
    let mut rng = Rng::new(9);
    let train = rings(&mut rng, 400)?;
    let test = rings(&mut rng, 200)?;
    let stream = dataio::make_class_stream(&train, &[0, 1])?;

    let protos = PrototypeModel::from_stream(&stream)?;
    let proto = continual::evaluate(&protos, &test, EvalMode::SingleHead, None)?;

    let cfg = TrainConfig { epochs: 80, batch_size: 32, rank: 16, ..TrainConfig::mnist() };
    let mut reg = ExpertRegistry::new();
    for (c, batch) in &stream.batches {
        reg.add_class(*c, optim::train_class(batch.vectors(), &cfg, &mut Rng::new(cfg.class_seed(*c)))?.net)?;
    }
    let ova = continual::evaluate(&reg, &test, EvalMode::SingleHead, None)?;

    println!("prototype accuracy {:.4}", proto.final_accuracy().unwrap_or(0.0));
    println!("ova-inn accuracy   {:.4}", ova.final_accuracy().unwrap_or(0.0));
    Ok(())
}
