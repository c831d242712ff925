//! Save a registry, grow it by one class, and show the earlier experts'
//! bytes are untouched.
//!
//! cargo run --example registry_io

use ova_inn::continual::{self, ExpertRegistry};
use ova_inn::flowcore::{Activation, InvertibleNet, NetShape};
use ova_inn::numkit::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Rng::new(2);
    let shape = NetShape { dim: 16, rank: 4, blocks: 2, activation: Activation::LeakyRelu };
    let path = std::env::temp_dir().join("ova-inn-example-registry.bin");

    let mut reg = ExpertRegistry::new();
    reg.add_class(3, InvertibleNet::init(&shape, 1.0, &mut rng)?)?;
    reg.add_class(8, InvertibleNet::init(&shape, 1.0, &mut rng)?)?;
    continual::save_registry(&reg, &path)?;
    let before = std::fs::read(&path)?;

    let mut reloaded = continual::load_registry(&path)?;
    reloaded.add_class(1, InvertibleNet::init(&shape, 1.0, &mut rng)?)?;
    continual::save_registry(&reloaded, &path)?;
    let after = std::fs::read(&path)?;

    // The header's net count changes; everything after it is append-only.
    let header = 8 + 2 + 4 + 4;
    println!("{} -> {} bytes", before.len(), after.len());
    println!("expert bytes preserved: {}", after[header..].starts_with(&before[header..]));
    for (c, net) in reloaded.iter() {
        println!("class {c}: {} params, {}", net.param_count(), net.activation());
    }
    Ok(())
}
