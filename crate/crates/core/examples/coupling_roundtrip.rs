//! Push a random input through a two-block additive coupling net and back.
//!
//! cargo run --example coupling_roundtrip

use ova_inn::flowcore::{self, Activation, InvertibleNet, NetShape};
use ova_inn::numkit::{Rng, Vector};

fn main() -> ova_inn::Result<()> {
    let mut rng = Rng::new(7);
    let shape = NetShape { dim: 8, rank: 4, blocks: 2, activation: Activation::Tanh };
    let net = InvertibleNet::init(&shape, 1.0, &mut rng)?;
    println!("dim {} rank {} params {}", net.dim(), net.rank(), net.param_count());

    let x: Vector = (0..8).map(|_| rng.normal()).collect::<Vec<_>>().into();
    let (z, trace) = flowcore::net_forward(&net, &x)?;
    let back = flowcore::net_inverse(&net, &z)?;
    let err = back.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    println!("x      = {:?}", &x[..]);
    println!("f(x)   = {:?}", &z[..]);
    println!("blocks traced: {}", trace.blocks.len());
    println!("max |f^-1(f(x)) - x| = {err:.2e}");
    Ok(())
}
