//! Class-incremental MNIST: one expert per digit, trained in order, with the
//! single-head accuracy curve printed after every class.
//!
//! cargo run --release --example continual_mnist -- <idx-dir> [epochs] [max-per-class]

use std::path::PathBuf;

use ova_inn::continual::{self, EvalMode, ExpertRegistry};
use ova_inn::dataio::{self, Normalization};
use ova_inn::numkit::Rng;
use ova_inn::optim::{self, TrainConfig};

fn main() -> ova_inn::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().expect("usage: continual_mnist <idx-dir> [epochs] [max-per-class]"));
    let epochs = args.next().map_or(20, |s| s.parse().expect("epochs"));
    let max_per_class = args.next().map_or(1000, |s| s.parse().expect("max-per-class"));

    let load = |images: &str, labels: &str| -> ova_inn::Result<_> {
        let ds = dataio::load_mnist_idx(dir.join(images), dir.join(labels))?;
        dataio::normalize(ds, Normalization::Scale255)
    };
    let train = load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?.take_per_class(max_per_class);
    let test = load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;

    let cfg = TrainConfig { epochs, ..TrainConfig::mnist() };
    let stream = dataio::make_class_stream(&train, &train.classes())?;
    let mut reg = ExpertRegistry::new();
    for (c, batch) in &stream.batches {
        let trained = optim::train_class(batch.vectors(), &cfg, &mut Rng::new(cfg.class_seed(*c)))?;
        reg.add_class(*c, trained.net)?;
    }

    let report = continual::evaluate_curve(&reg, &test, EvalMode::SingleHead, None)?;
    print!("{}", report.to_csv());
    println!("# {} parameters", reg.param_count());
    Ok(())
}
