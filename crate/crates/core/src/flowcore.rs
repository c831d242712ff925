//! Additive coupling networks.
//!
//! A coupling block splits its input `x = (x1, x2)` into contiguous halves and
//! computes
//!
//! ```text
//! y1 = x1 + f1(x2)
//! y2 = x2 + f2(y1)
//! ```
//!
//! which is inverted exactly by `x2 = y2 - f2(y1)`, `x1 = y1 - f1(x2)`. The
//! Jacobian is unit lower/upper triangular per half, so every stack of blocks
//! preserves volume and the log-likelihood under a standard normal prior is
//! `-0.5 * |f(x)|^2 + beta` with `beta = -(n/2) log(2 pi)`.
//!
//! Each `f` is a rank-`m` bottleneck `f(u) = up * act(down * u + down_bias) + up_bias`.
//!
//! Parameters are also exposed as one flat vector. Per subnet the layout is
//! `down (m x half, row-major) | down_bias (m) | up (half x m) | up_bias (half)`,
//! and subnets follow block order, `f1` before `f2`. This is the same order the
//! registry file uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{self, Matrix, Rng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Negative slope 0.01.
    LeakyRelu,
    Tanh,
    Identity,
}

pub const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu => 1,
            Activation::Tanh => 2,
            Activation::Identity => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::LeakyRelu,
            2 => Activation::Tanh,
            3 => Activation::Identity,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`, given `h = apply(z)`.
    #[inline]
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - h * h,
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "relu" => Ok(Activation::Relu),
            "leaky_relu" | "leakyrelu" => Ok(Activation::LeakyRelu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Low-rank coupling function `R^half -> R^half`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubNet {
    down: Matrix,
    down_bias: Vector,
    up: Matrix,
    up_bias: Vector,
    activation: Activation,
}

impl SubNet {
    pub fn new(
        down: Matrix,
        down_bias: Vector,
        up: Matrix,
        up_bias: Vector,
        activation: Activation,
    ) -> Result<Self> {
        let rank = down.rows();
        let half = down.cols();
        if down_bias.len() != rank {
            return Err(Error::dim("SubNet::new (down_bias)", rank, down_bias.len()));
        }
        if up.cols() != rank {
            return Err(Error::dim("SubNet::new (up cols)", rank, up.cols()));
        }
        if up.rows() != half {
            return Err(Error::dim("SubNet::new (up rows)", half, up.rows()));
        }
        if up_bias.len() != half {
            return Err(Error::dim("SubNet::new (up_bias)", half, up_bias.len()));
        }
        Ok(Self {
            down,
            down_bias,
            up,
            up_bias,
            activation,
        })
    }

    pub fn zeros(half: usize, rank: usize, activation: Activation) -> Self {
        Self {
            down: Matrix::zeros(rank, half),
            down_bias: Vector::zeros(rank),
            up: Matrix::zeros(half, rank),
            up_bias: Vector::zeros(half),
            activation,
        }
    }

    /// Each factor and its bias drawn from `U[-b, b]`, `b = init_bound / sqrt(fan_in)`.
    pub fn init(
        half: usize,
        rank: usize,
        activation: Activation,
        init_bound: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let down_b = init_bound / (half as f64).sqrt();
        let up_b = init_bound / (rank as f64).sqrt();
        let down = numkit::uniform_init(rank, half, down_b, rng)?;
        let down_bias = numkit::uniform_init(1, rank, down_b, rng)?;
        let up = numkit::uniform_init(half, rank, up_b, rng)?;
        let up_bias = numkit::uniform_init(1, half, up_b, rng)?;
        Ok(Self {
            down,
            down_bias: down_bias.as_slice().into(),
            up,
            up_bias: up_bias.as_slice().into(),
            activation,
        })
    }

    pub fn half(&self) -> usize {
        self.down.cols()
    }

    pub fn rank(&self) -> usize {
        self.down.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn down(&self) -> &Matrix {
        &self.down
    }

    pub fn down_bias(&self) -> &Vector {
        &self.down_bias
    }

    pub fn up(&self) -> &Matrix {
        &self.up
    }

    pub fn up_bias(&self) -> &Vector {
        &self.up_bias
    }

    pub fn param_count(&self) -> usize {
        subnet_param_count(self.half(), self.rank())
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.down.as_slice());
        out.extend_from_slice(&self.down_bias);
        out.extend_from_slice(self.up.as_slice());
        out.extend_from_slice(&self.up_bias);
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for dst in [
            self.down.as_mut_slice(),
            &mut self.down_bias,
            self.up.as_mut_slice(),
            &mut self.up_bias,
        ] {
            dst.copy_from_slice(&src[at..at + dst.len()]);
            at += dst.len();
        }
        at
    }

    /// Forward pass writing the pre-activation, activation and output.
    fn forward_into(&self, u: &[f64], pre: &mut [f64], act: &mut [f64], out: &mut [f64]) {
        numkit::matvec_into(&self.down, u, pre);
        for ((z, h), bias) in pre.iter_mut().zip(act.iter_mut()).zip(self.down_bias.iter()) {
            *z += bias;
            *h = self.activation.apply(*z);
        }
        numkit::matvec_into(&self.up, act, out);
        for (o, bias) in out.iter_mut().zip(self.up_bias.iter()) {
            *o += bias;
        }
    }

    fn eval(&self, u: &[f64]) -> Vec<f64> {
        let mut pre = vec![0.0; self.rank()];
        let mut act = vec![0.0; self.rank()];
        let mut out = vec![0.0; self.half()];
        self.forward_into(u, &mut pre, &mut act, &mut out);
        out
    }

    /// Reverse pass for upstream gradient `g_out`. Parameter gradients are
    /// accumulated into `grad` scaled by `scale`; the input gradient
    /// `J^T g_out` is added to `g_in`.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        u: &[f64],
        pre: &[f64],
        act: &[f64],
        g_out: &[f64],
        scale: f64,
        grad: &mut [f64],
        g_in: &mut [f64],
    ) {
        let rank = self.rank();
        let half = self.half();
        let (g_down, rest) = grad.split_at_mut(rank * half);
        let (g_down_bias, rest) = rest.split_at_mut(rank);
        let (g_up, g_up_bias) = rest.split_at_mut(half * rank);

        numkit::axpy(scale, g_out, g_up_bias);
        numkit::outer_acc(g_up, rank, g_out, act, scale);

        let mut g_pre = vec![0.0; rank];
        numkit::matvec_transposed_acc(&self.up, g_out, &mut g_pre);
        for ((g, &z), &h) in g_pre.iter_mut().zip(pre).zip(act) {
            *g *= self.activation.derivative(z, h);
        }

        numkit::axpy(scale, &g_pre, g_down_bias);
        numkit::outer_acc(g_down, half, &g_pre, u, scale);
        numkit::matvec_transposed_acc(&self.down, &g_pre, g_in);
    }
}

fn subnet_param_count(half: usize, rank: usize) -> usize {
    2 * rank * half + rank + half
}

/// One additive coupling block.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    f1: SubNet,
    f2: SubNet,
}

impl CouplingBlock {
    pub fn new(f1: SubNet, f2: SubNet) -> Result<Self> {
        if f1.half() != f2.half() {
            return Err(Error::dim("CouplingBlock::new", f1.half(), f2.half()));
        }
        Ok(Self { f1, f2 })
    }

    pub fn half(&self) -> usize {
        self.f1.half()
    }

    pub fn f1(&self) -> &SubNet {
        &self.f1
    }

    pub fn f2(&self) -> &SubNet {
        &self.f2
    }

    fn check_len(&self, op: &'static str, len: usize) -> Result<()> {
        if len != 2 * self.half() {
            return Err(Error::dim(op, 2 * self.half(), len));
        }
        Ok(())
    }

    fn forward_traced(&self, x: &[f64]) -> (Vec<f64>, BlockTrace) {
        let half = self.half();
        let (x1, x2) = x.split_at(half);
        let rank1 = self.f1.rank();
        let rank2 = self.f2.rank();
        let mut t = BlockTrace {
            x1: x1.to_vec(),
            x2: x2.to_vec(),
            f1_pre: vec![0.0; rank1],
            f1_act: vec![0.0; rank1],
            y1: vec![0.0; half],
            f2_pre: vec![0.0; rank2],
            f2_act: vec![0.0; rank2],
        };
        self.f1.forward_into(x2, &mut t.f1_pre, &mut t.f1_act, &mut t.y1);
        numkit::axpy(1.0, x1, &mut t.y1);

        let mut y = vec![0.0; 2 * half];
        let (out1, out2) = y.split_at_mut(half);
        out1.copy_from_slice(&t.y1);
        self.f2.forward_into(&t.y1, &mut t.f2_pre, &mut t.f2_act, out2);
        numkit::axpy(1.0, x2, out2);
        (y, t)
    }

    fn inverse_unchecked(&self, y: &[f64]) -> Vec<f64> {
        let half = self.half();
        let (y1, y2) = y.split_at(half);
        let f2 = self.f2.eval(y1);
        let x2: Vec<f64> = y2.iter().zip(&f2).map(|(a, b)| a - b).collect();
        let f1 = self.f1.eval(&x2);
        let mut x: Vec<f64> = y1.iter().zip(&f1).map(|(a, b)| a - b).collect();
        x.extend_from_slice(&x2);
        x
    }
}

/// Intermediates of one block's forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub f1_pre: Vec<f64>,
    pub f1_act: Vec<f64>,
    pub y1: Vec<f64>,
    pub f2_pre: Vec<f64>,
    pub f2_act: Vec<f64>,
}

/// Per-block cache from [`net_forward`], consumed by the gradient pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub blocks: Vec<BlockTrace>,
}

/// Shape of a per-class network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub dim: usize,
    pub rank: usize,
    pub blocks: usize,
    pub activation: Activation,
}

impl NetShape {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "network dimension must be even and positive, got {}",
                self.dim
            )));
        }
        if self.rank == 0 {
            return Err(Error::Config("rank must be >= 1".into()));
        }
        if self.blocks == 0 {
            return Err(Error::Config("a network needs at least one block".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.blocks * 2 * subnet_param_count(self.dim / 2, self.rank)
    }
}

/// An ordered stack of coupling blocks over `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertibleNet {
    blocks: Vec<CouplingBlock>,
    dim: usize,
    swap_halves: bool,
}

impl InvertibleNet {
    /// All subnets must share one rank and activation (the registry stores
    /// them once per net).
    pub fn new(blocks: Vec<CouplingBlock>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::Config("a network needs at least one block".into()))?;
        let half = first.half();
        let rank = first.f1.rank();
        let activation = first.f1.activation;
        for b in &blocks {
            if b.half() != half {
                return Err(Error::dim("InvertibleNet::new", half, b.half()));
            }
            for s in [&b.f1, &b.f2] {
                if s.rank() != rank {
                    return Err(Error::Config(format!(
                        "mixed subnet ranks {rank} and {}",
                        s.rank()
                    )));
                }
                if s.activation != activation {
                    return Err(Error::Config("mixed subnet activations".into()));
                }
            }
        }
        Ok(Self {
            blocks,
            dim: 2 * half,
            swap_halves: false,
        })
    }

    pub fn zeros(shape: &NetShape) -> Result<Self> {
        shape.validate()?;
        let half = shape.dim / 2;
        let blocks = (0..shape.blocks)
            .map(|_| CouplingBlock {
                f1: SubNet::zeros(half, shape.rank, shape.activation),
                f2: SubNet::zeros(half, shape.rank, shape.activation),
            })
            .collect();
        Self::new(blocks)
    }

    /// Fresh parameters, drawn block by block (`f1` then `f2`).
    pub fn init(shape: &NetShape, init_bound: f64, rng: &mut Rng) -> Result<Self> {
        shape.validate()?;
        let half = shape.dim / 2;
        let mut blocks = Vec::with_capacity(shape.blocks);
        for _ in 0..shape.blocks {
            let f1 = SubNet::init(half, shape.rank, shape.activation, init_bound, rng)?;
            let f2 = SubNet::init(half, shape.rank, shape.activation, init_bound, rng)?;
            blocks.push(CouplingBlock { f1, f2 });
        }
        Self::new(blocks)
    }

    /// Swaps the two halves between consecutive blocks (off by default).
    pub fn with_swap_halves(mut self, swap: bool) -> Self {
        self.swap_halves = swap;
        self
    }

    pub fn swap_halves(&self) -> bool {
        self.swap_halves
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.blocks[0].f1.rank()
    }

    pub fn activation(&self) -> Activation {
        self.blocks[0].f1.activation
    }

    pub fn blocks(&self) -> &[CouplingBlock] {
        &self.blocks
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            dim: self.dim,
            rank: self.rank(),
            blocks: self.blocks.len(),
            activation: self.activation(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.f1.param_count() + b.f2.param_count())
            .sum()
    }

    /// Flat parameter vector in canonical order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.blocks {
            b.f1.write_params(&mut out);
            b.f2.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim("InvertibleNet::set_params", self.param_count(), params.len()));
        }
        let mut at = 0;
        for b in &mut self.blocks {
            at += b.f1.read_params(&params[at..]);
            at += b.f2.read_params(&params[at..]);
        }
        Ok(())
    }

    fn check_len(&self, op: &'static str, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::dim(op, self.dim, len));
        }
        Ok(())
    }

    fn swap_between(&self, v: &mut [f64]) {
        let half = self.dim / 2;
        let (a, b) = v.split_at_mut(half);
        a.swap_with_slice(b);
    }

    /// Squared output norm; the per-class score used for prediction.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let (z, _) = net_forward(self, x)?;
        Ok(z.norm_squared())
    }

    /// Accumulates `scale * d|f(x)|^2 / d theta` into `grad` and returns
    /// `|f(x)|^2`.
    pub(crate) fn accumulate_gradients(&self, x: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.param_count());
        let (z, trace) = forward_unchecked(self, x);
        let loss = z.norm_squared();

        let half = self.dim / 2;
        let per_subnet = subnet_param_count(half, self.rank());
        let mut g: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        let last = self.blocks.len() - 1;

        for (i, (block, t)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            if self.swap_halves && i < last {
                self.swap_between(&mut g);
            }
            let (g_y1, g_y2) = g.split_at_mut(half);
            let offset = 2 * i * per_subnet;
            let (grad_f1, grad_f2) =
                grad[offset..offset + 2 * per_subnet].split_at_mut(per_subnet);

            // y2 = x2 + f2(y1): g_x2 = g_y2, g_y1 += J_f2^T g_y2
            block
                .f2
                .backward(&t.y1, &t.f2_pre, &t.f2_act, g_y2, scale, grad_f2, g_y1);
            // y1 = x1 + f1(x2): g_x1 = g_y1, g_x2 += J_f1^T g_y1
            block
                .f1
                .backward(&t.x2, &t.f1_pre, &t.f1_act, g_y1, scale, grad_f1, g_y2);
        }
        loss
    }
}

fn forward_unchecked(net: &InvertibleNet, x: &[f64]) -> (Vector, ForwardTrace) {
    let mut cur = x.to_vec();
    let mut blocks = Vec::with_capacity(net.blocks.len());
    let last = net.blocks.len() - 1;
    for (i, b) in net.blocks.iter().enumerate() {
        let (y, t) = b.forward_traced(&cur);
        blocks.push(t);
        cur = y;
        if net.swap_halves && i < last {
            net.swap_between(&mut cur);
        }
    }
    (Vector::from(cur), ForwardTrace { blocks })
}

/// `up * act(down * u + down_bias) + up_bias`
pub fn subnet_forward(s: &SubNet, u: &[f64]) -> Result<Vector> {
    if u.len() != s.half() {
        return Err(Error::dim("subnet_forward", s.half(), u.len()));
    }
    Ok(s.eval(u).into())
}

pub fn block_forward(block: &CouplingBlock, x: &[f64]) -> Result<Vector> {
    block.check_len("block_forward", x.len())?;
    Ok(block.forward_traced(x).0.into())
}

pub fn block_inverse(block: &CouplingBlock, y: &[f64]) -> Result<Vector> {
    block.check_len("block_inverse", y.len())?;
    Ok(block.inverse_unchecked(y).into())
}

pub fn net_forward(net: &InvertibleNet, x: &[f64]) -> Result<(Vector, ForwardTrace)> {
    net.check_len("net_forward", x.len())?;
    Ok(forward_unchecked(net, x))
}

pub fn net_inverse(net: &InvertibleNet, y: &[f64]) -> Result<Vector> {
    net.check_len("net_inverse", y.len())?;
    let mut cur = y.to_vec();
    let last = net.blocks.len() - 1;
    for (i, b) in net.blocks.iter().enumerate().rev() {
        if net.swap_halves && i < last {
            net.swap_between(&mut cur);
        }
        cur = b.inverse_unchecked(&cur);
    }
    Ok(cur.into())
}

/// `beta = -(n/2) log(2 pi)`, the normalizer of an `n`-dimensional standard normal.
pub fn gaussian_log_normalizer(n: usize) -> f64 {
    -0.5 * n as f64 * std::f64::consts::TAU.ln()
}

/// Exact log-density of `x` under the flow with a standard normal prior.
pub fn log_likelihood(net: &InvertibleNet, x: &[f64]) -> Result<f64> {
    let (z, _) = net_forward(net, x)?;
    Ok(-0.5 * z.norm_squared() + gaussian_log_normalizer(net.dim))
}

/// Mean squared output norm over `xs` (no factor one half).
pub fn loss_batch(net: &InvertibleNet, xs: &[Vector]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyDataset("loss_batch"));
    }
    let mut total = 0.0;
    for x in xs {
        total += net.score(x)?;
    }
    Ok(total / xs.len() as f64)
}

/// Gradient of `|f(x)|^2` with respect to every parameter, in flat order.
pub fn loss_gradients(net: &InvertibleNet, x: &[f64]) -> Result<Vec<f64>> {
    net.check_len("loss_gradients", x.len())?;
    let mut grad = vec![0.0; net.param_count()];
    net.accumulate_gradients(x, 1.0, &mut grad);
    Ok(grad)
}

pub fn param_count(net: &InvertibleNet) -> usize {
    net.param_count()
}
