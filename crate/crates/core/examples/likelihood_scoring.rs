//! Exact log-likelihood of a volume-preserving flow, and how scores separate
//! in-distribution points from outliers once a net has been fit.
//!
//! cargo run --release --example likelihood_scoring

use ova_inn::flowcore::{self, gaussian_log_normalizer};
use ova_inn::numkit::{Rng, Vector};
use ova_inn::optim::{self, TrainConfig};

fn cluster(rng: &mut Rng, n: usize, center: f64) -> Vec<Vector> {
    (0..n)
        .map(|_| (0..6).map(|i| center + 0.3 * (i as f64) + 0.2 * rng.normal()).collect::<Vec<_>>().into())
        .collect()
}

fn main() -> ova_inn::Result<()> {
    let mut rng = Rng::new(1);
    let inliers = cluster(&mut rng, 300, 1.0);
    let cfg = TrainConfig { epochs: 40, batch_size: 32, rank: 4, ..TrainConfig::mnist() };
    let trained = optim::train_class(&inliers, &cfg, &mut rng)?;
    let net = trained.net;

    println!("beta(6) = {:.6}", gaussian_log_normalizer(6));
    for (name, set) in [("inlier", cluster(&mut rng, 5, 1.0)), ("outlier", cluster(&mut rng, 5, -3.0))] {
        for x in &set {
            let ll = flowcore::log_likelihood(&net, x)?;
            println!("{name:8} |f(x)|^2 = {:9.4}  log p(x) = {ll:10.4}", net.score(x)?);
        }
    }
    Ok(())
}
