//! Compare backprop gradients with central finite differences.
//!
//! cargo run --example gradient_check

use ova_inn::flowcore::{self, Activation, InvertibleNet, NetShape};
use ova_inn::numkit::{Rng, Vector};

fn main() -> ova_inn::Result<()> {
    let mut rng = Rng::new(11);
    let shape = NetShape { dim: 8, rank: 4, blocks: 2, activation: Activation::Tanh };
    let net = InvertibleNet::init(&shape, 1.0, &mut rng)?;
    let x: Vector = (0..8).map(|_| rng.normal()).collect::<Vec<_>>().into();

    let grad = flowcore::loss_gradients(&net, &x)?;
    let base = net.params();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for j in 0..base.len() {
        let mut p = base.clone();
        p[j] += h;
        probe.set_params(&p)?;
        let plus = probe.score(&x)?;
        p[j] -= 2.0 * h;
        probe.set_params(&p)?;
        let minus = probe.score(&x)?;
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-3));
    }
    println!("{} parameters, worst relative error {worst:.2e}", base.len());
    Ok(())
}
