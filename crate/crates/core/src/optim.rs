//! Adam, a reduce-on-plateau learning-rate schedule, and the per-class
//! training loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::{self, Activation, InvertibleNet, NetShape};
use crate::numkit::{Rng, Vector};

/// First/second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Apply weight decay directly to the parameters (AdamW) instead of
    /// adding it to the gradient.
    pub decoupled_weight_decay: bool,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decoupled_weight_decay: false,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != state.len() {
        return Err(Error::dim("adam_step (state)", state.len(), params.len()));
    }
    if grads.len() != params.len() {
        return Err(Error::dim("adam_step (grads)", params.len(), grads.len()));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decoupled = state.decoupled_weight_decay;

    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let g = if decoupled {
            *p -= lr * weight_decay * *p;
            g
        } else {
            g + weight_decay * *p
        };
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Halves the learning rate when the monitored loss stops improving.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    current_lr: f64,
    pub factor: f64,
    pub patience: usize,
    best_loss: f64,
    epochs_since_best: usize,
    /// Relative improvement required to reset the counter.
    pub min_improvement: f64,
    pub min_lr: f64,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize) -> Self {
        Self {
            current_lr: lr,
            factor: 0.5,
            patience,
            best_loss: f64::INFINITY,
            epochs_since_best: 0,
            min_improvement: 1e-4,
            min_lr: 1e-6,
        }
    }

    pub fn lr(&self) -> f64 {
        self.current_lr
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn epochs_since_best(&self) -> usize {
        self.epochs_since_best
    }

    /// Records one epoch's loss and returns the learning rate for the next epoch.
    pub fn update(&mut self, epoch_loss: f64) -> f64 {
        if epoch_loss < self.best_loss * (1.0 - self.min_improvement) {
            self.best_loss = epoch_loss;
            self.epochs_since_best = 0;
        } else {
            self.epochs_since_best += 1;
        }
        if self.epochs_since_best > self.patience {
            self.current_lr = (self.current_lr * self.factor).max(self.min_lr);
            self.epochs_since_best = 0;
        }
        self.current_lr
    }
}

pub fn plateau_update(mut s: PlateauScheduler, epoch_loss: f64) -> (PlateauScheduler, f64) {
    let lr = s.update(epoch_loss);
    (s, lr)
}

/// Hyperparameters for training one class's network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub rank: usize,
    pub blocks: usize,
    pub activation: Activation,
    pub seed: u64,
    pub min_lr: f64,
    pub init_bound: f64,
    pub min_improvement: f64,
    pub decoupled_weight_decay: bool,
    pub swap_halves_between_blocks: bool,
}

impl TrainConfig {
    /// MNIST settings: lr 0.002, 200 epochs, no weight decay, patience 20, rank 16.
    pub fn mnist() -> Self {
        Self {
            learning_rate: 0.002,
            epochs: 200,
            weight_decay: 0.0,
            patience: 20,
            batch_size: 128,
            rank: 16,
            blocks: 2,
            activation: Activation::Relu,
            seed: 0,
            min_lr: 1e-6,
            init_bound: 1.0,
            min_improvement: 1e-4,
            decoupled_weight_decay: false,
            swap_halves_between_blocks: false,
        }
    }

    /// Settings for pretrained features: lr 0.002, 1000 epochs, weight decay
    /// 2e-4, patience 30, rank 32.
    pub fn cifar100() -> Self {
        Self {
            epochs: 1000,
            weight_decay: 0.0002,
            patience: 30,
            rank: 32,
            ..Self::mnist()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.rank == 0 {
            return bad("rank must be >= 1".into());
        }
        if self.blocks == 0 {
            return bad("blocks must be >= 1".into());
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if self.min_lr.is_nan() || self.min_lr <= 0.0 {
            return bad(format!("min_lr must be > 0, got {}", self.min_lr));
        }
        if self.init_bound.is_nan() || self.init_bound < 0.0 {
            return bad(format!("init_bound must be >= 0, got {}", self.init_bound));
        }
        Ok(())
    }

    pub fn shape(&self, dim: usize) -> NetShape {
        NetShape {
            dim,
            rank: self.rank,
            blocks: self.blocks,
            activation: self.activation,
        }
    }

    /// Seed for one class, so classes train independently of order.
    pub fn class_seed(&self, class_id: crate::ClassId) -> u64 {
        self.seed ^ u64::from(class_id)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::mnist()
    }
}

/// A trained, frozen network and its loss history.
#[derive(Debug, Clone)]
pub struct TrainedClass {
    pub net: InvertibleNet,
    /// Full-set loss before the first update.
    pub initial_loss: f64,
    /// Full-set loss after the last update.
    pub final_loss: f64,
    /// Mean of the per-sample losses seen during each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_lr: f64,
}

/// Trains a fresh network on the samples of a single class by minimizing the
/// mean squared output norm with mini-batch Adam.
pub fn train_class(samples: &[Vector], cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainedClass> {
    cfg.validate()?;
    let first = samples.first().ok_or(Error::EmptyDataset("train_class"))?;
    let dim = first.len();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::dim("train_class", dim, bad.len()));
    }
    let shape = cfg.shape(dim);
    shape.validate()?;

    let mut net = InvertibleNet::init(&shape, cfg.init_bound, rng)?
        .with_swap_halves(cfg.swap_halves_between_blocks);
    let initial_loss = flowcore::loss_batch(&net, samples)?;

    let mut params = net.params();
    let mut grad = vec![0.0; params.len()];
    let mut adam = AdamState::new(params.len());
    adam.decoupled_weight_decay = cfg.decoupled_weight_decay;
    let mut sched = PlateauScheduler::new(cfg.learning_rate, cfg.patience);
    sched.min_lr = cfg.min_lr;
    sched.min_improvement = cfg.min_improvement;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                total += net.accumulate_gradients(&samples[i], scale, &mut grad);
            }
            adam_step(&mut params, &grad, &mut adam, sched.lr(), cfg.weight_decay)?;
            net.set_params(&params)?;
        }
        let epoch_loss = total / samples.len() as f64;
        epoch_losses.push(epoch_loss);
        let lr = sched.update(epoch_loss);
        log::trace!("epoch {epoch}: loss {epoch_loss:.6}, lr {lr:e}");
    }

    let final_loss = flowcore::loss_batch(&net, samples)?;
    Ok(TrainedClass {
        net,
        initial_loss,
        final_loss,
        epoch_losses,
        final_lr: sched.lr(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5, -1.0, 2.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 0.002, 0.0).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.002, 0.0).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expected = -0.002 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "{}", p[0]);
    }

    #[test]
    fn coupled_weight_decay_acts_as_gradient() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[0.0], &mut s, 0.002, 0.1).unwrap();
        assert!(p[0] < 1.0);
        // effective gradient 0.1 -> first step is still -lr after bias correction
        assert!((p[0] - (1.0 - 0.002 * 0.1 / (0.1 + 1e-8))).abs() < 1e-15);

        let mut q = vec![1.0];
        let mut s = AdamState::new(1);
        s.decoupled_weight_decay = true;
        adam_step(&mut q, &[0.0], &mut s, 0.002, 0.1).unwrap();
        assert!((q[0] - (1.0 - 0.002 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = vec![0.3, -0.7];
        let mut s = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[1.0, -2.0], &mut s, 0.0, 0.5).unwrap();
        }
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut s, 0.1, 0.0).is_err());
        assert!(adam_step(&mut [0.0; 2], &[0.0; 1], &mut s, 0.1, 0.0).is_err());
    }

    #[test]
    fn decreasing_losses_keep_lr() {
        let mut s = PlateauScheduler::new(0.002, 2);
        for i in 0..50 {
            assert_eq!(s.update(100.0 - i as f64), 0.002);
        }
    }

    #[test]
    fn constant_losses_halve_after_patience() {
        let mut s = PlateauScheduler::new(0.002, 2);
        assert_eq!(s.update(1.0), 0.002); // first epoch sets the best
        assert_eq!(s.update(1.0), 0.002);
        assert_eq!(s.update(1.0), 0.002);
        assert_eq!(s.update(1.0), 0.001); // third non-improving epoch
        assert_eq!(s.epochs_since_best(), 0);
        assert_eq!(s.update(1.0), 0.001);
        assert_eq!(s.update(1.0), 0.001);
        assert_eq!(s.update(1.0), 0.0005);
    }

    #[test]
    fn plateau_respects_min_lr() {
        let mut s = PlateauScheduler::new(4e-6, 0);
        s.update(1.0);
        for _ in 0..10 {
            s.update(1.0);
        }
        assert_eq!(s.lr(), 1e-6);
    }

    #[test]
    fn tiny_improvements_do_not_count() {
        let mut s = PlateauScheduler::new(0.002, 0);
        s.update(1.0);
        assert_eq!(s.update(1.0 - 1e-6), 0.001);
    }

    #[test]
    fn pure_plateau_update() {
        let s = PlateauScheduler::new(0.002, 0);
        let (s, lr) = plateau_update(s, 1.0);
        assert_eq!(lr, 0.002);
        let (_, lr) = plateau_update(s, 2.0);
        assert_eq!(lr, 0.001);
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            rank: 4,
            batch_size: 32,
            ..TrainConfig::mnist()
        }
    }

    #[test]
    fn degenerate_set_collapses_to_origin() {
        let samples = vec![Vector::from([0.8, -0.5]); 200];
        let out = train_class(&samples, &small_cfg(50), &mut Rng::new(1)).unwrap();
        assert!(
            out.final_loss < 0.01 * out.initial_loss,
            "{} vs {}",
            out.final_loss,
            out.initial_loss
        );
        assert_eq!(out.epoch_losses.len(), 50);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = small_cfg(1);
        assert!(matches!(
            train_class(&[], &cfg, &mut Rng::new(0)),
            Err(Error::EmptyDataset(_))
        ));
        let mixed = vec![Vector::from([1.0, 2.0]), Vector::from([1.0, 2.0, 3.0, 4.0])];
        assert!(matches!(
            train_class(&mixed, &cfg, &mut Rng::new(0)),
            Err(Error::Dimension { .. })
        ));
        let odd = vec![Vector::from([1.0, 2.0, 3.0])];
        assert!(train_class(&odd, &cfg, &mut Rng::new(0)).is_err());
        assert!(matches!(
            train_class(&[Vector::from([1.0, 2.0])], &small_cfg(0), &mut Rng::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = Rng::new(5);
        let samples: Vec<Vector> = (0..60)
            .map(|_| Vector::from(vec![rng.normal(), rng.normal(), rng.normal(), rng.normal()]))
            .collect();
        let a = train_class(&samples, &small_cfg(5), &mut Rng::new(42)).unwrap();
        let b = train_class(&samples, &small_cfg(5), &mut Rng::new(42)).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert!(a.final_loss <= a.initial_loss);
    }

    #[test]
    fn presets() {
        let m = TrainConfig::mnist();
        assert_eq!((m.learning_rate, m.epochs, m.weight_decay, m.patience), (0.002, 200, 0.0, 20));
        let c = TrainConfig::cifar100();
        assert_eq!((c.learning_rate, c.epochs, c.weight_decay, c.patience), (0.002, 1000, 0.0002, 30));
        assert_eq!(c.rank, 32);
    }
}
