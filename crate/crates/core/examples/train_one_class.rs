//! Fit a single expert with Adam and the plateau scheduler, printing the
//! per-epoch loss.
//!
//! cargo run --release --example train_one_class

use ova_inn::numkit::{Rng, Vector};
use ova_inn::optim::{self, TrainConfig};

fn main() -> ova_inn::Result<()> {
    let mut rng = Rng::new(3);
    let samples: Vec<Vector> = (0..500)
        .map(|_| {
            let t = rng.normal();
            vec![t, 2.0 * t + 0.1 * rng.normal(), -t, 0.5 + 0.1 * rng.normal()].into()
        })
        .collect();

    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 50,
        rank: 8,
        patience: 5,
        ..TrainConfig::mnist()
    };
    let trained = optim::train_class(&samples, &cfg, &mut Rng::new(cfg.class_seed(0)))?;
    for (epoch, loss) in trained.epoch_losses.iter().enumerate().step_by(5) {
        println!("epoch {epoch:3}  loss {loss:.5}");
    }
    println!(
        "initial {:.4} -> final {:.4}, lr ended at {:.2e}",
        trained.initial_loss, trained.final_loss, trained.final_lr
    );
    Ok(())
}
