//! The one-versus-all learner: a registry of frozen per-class experts,
//! single- and multi-head prediction, the nearest-prototype baseline,
//! evaluation, and the registry file format.
//!
//! Registry file (little-endian, no padding):
//!
//! ```text
//! "OVAINN01"  8 bytes
//! version     u16 = 1
//! net_count   u32
//! dim         u32
//! per net:    class_id u32, n_blocks u16, rank u32, activation u8
//!             per block, f1 then f2:
//!               down (rank x dim/2) f32, down_bias (rank) f32,
//!               up (dim/2 x rank) f32, up_bias (dim/2) f32
//! ```
//!
//! Activation codes: 0 relu, 1 leaky_relu, 2 tanh, 3 identity.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, ByteReader};
use crate::dataio::{ClassStream, LabeledVectors};
use crate::error::{Error, Result};
use crate::flowcore::{self, Activation, CouplingBlock, InvertibleNet, SubNet};
use crate::numkit::{Matrix, Vector};
use crate::ClassId;

pub const REGISTRY_MAGIC: &[u8; 8] = b"OVAINN01";
pub const REGISTRY_VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 + 4 + 4;

/// Anything that scores every known class for an input, lower is better.
pub trait Classifier: Sync {
    /// Known classes in learning order.
    fn class_ids(&self) -> Vec<ClassId>;

    fn input_dim(&self) -> Option<usize>;

    /// `(class, score)` for every class, in learning order.
    fn scores(&self, x: &[f64]) -> Result<Vec<(ClassId, f64)>>;
}

/// Frozen per-class networks in the order they were learned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpertRegistry {
    dim: Option<usize>,
    experts: Vec<(ClassId, InvertibleNet)>,
}

impl ExpertRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn contains(&self, class_id: ClassId) -> bool {
        self.experts.iter().any(|(c, _)| *c == class_id)
    }

    pub fn get(&self, class_id: ClassId) -> Option<&InvertibleNet> {
        self.experts.iter().find(|(c, _)| *c == class_id).map(|(_, n)| n)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &InvertibleNet)> {
        self.experts.iter().map(|(c, n)| (*c, n))
    }

    pub fn param_count(&self) -> usize {
        self.experts.iter().map(|(_, n)| n.param_count()).sum()
    }

    /// Registers a trained network. Existing experts are never touched.
    pub fn add_class(&mut self, class_id: ClassId, net: InvertibleNet) -> Result<()> {
        if self.contains(class_id) {
            return Err(Error::Conflict(class_id));
        }
        if let Some(dim) = self.dim {
            if net.dim() != dim {
                return Err(Error::dim("add_class", dim, net.dim()));
            }
        }
        self.dim = Some(net.dim());
        self.experts.push((class_id, net));
        Ok(())
    }

    /// The first `k` experts, i.e. the state after `k` classes were learned.
    pub fn prefix(&self, k: usize) -> Self {
        let experts: Vec<_> = self.experts.iter().take(k).cloned().collect();
        Self {
            dim: if experts.is_empty() { None } else { self.dim },
            experts,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        match self.dim {
            None => Err(Error::State("the expert registry is empty")),
            Some(d) if d != x.len() => Err(Error::dim("predict", d, x.len())),
            Some(_) => Ok(()),
        }
    }
}

impl Classifier for ExpertRegistry {
    fn class_ids(&self) -> Vec<ClassId> {
        self.experts.iter().map(|(c, _)| *c).collect()
    }

    fn input_dim(&self) -> Option<usize> {
        self.dim
    }

    fn scores(&self, x: &[f64]) -> Result<Vec<(ClassId, f64)>> {
        self.check_input(x)?;
        self.experts
            .iter()
            .map(|(c, net)| Ok((*c, net.score(x)?)))
            .collect()
    }
}

/// Argmin result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub class_id: ClassId,
    /// Winning squared output norm (or squared distance for prototypes).
    pub score: f64,
    /// Every candidate's score, in learning order.
    pub per_class_scores: Vec<(ClassId, f64)>,
}

/// Lowest score wins; exact ties go to the smaller class id.
fn argmin<'a>(candidates: impl Iterator<Item = &'a (ClassId, f64)>) -> Option<(ClassId, f64)> {
    candidates.fold(None, |best, &(c, s)| match best {
        Some((bc, bs)) if bs < s || (bs == s && bc < c) => Some((bc, bs)),
        _ => Some((c, s)),
    })
}

/// Single-head prediction over every registered class.
pub fn predict(reg: &ExpertRegistry, x: &[f64]) -> Result<Prediction> {
    let per_class_scores = reg.scores(x)?;
    let (class_id, score) = argmin(per_class_scores.iter()).expect("non-empty registry");
    Ok(Prediction {
        class_id,
        score,
        per_class_scores,
    })
}

/// Prediction restricted to `allowed` (the classes of one known task).
pub fn predict_multi_head(reg: &ExpertRegistry, x: &[f64], allowed: &[ClassId]) -> Result<Prediction> {
    if allowed.is_empty() {
        return Err(Error::Config("the allowed class set is empty".into()));
    }
    if let Some(&c) = allowed.iter().find(|&&c| !reg.contains(c)) {
        return Err(Error::Lookup(c));
    }
    reg.check_input(x)?;
    let per_class_scores: Vec<(ClassId, f64)> = reg
        .experts
        .iter()
        .filter(|(c, _)| allowed.contains(c))
        .map(|(c, net)| Ok((*c, net.score(x)?)))
        .collect::<Result<_>>()?;
    let (class_id, score) = argmin(per_class_scores.iter()).expect("non-empty allowed set");
    Ok(Prediction {
        class_id,
        score,
        per_class_scores,
    })
}

/// Per-class mean vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrototypeModel {
    prototypes: Vec<(ClassId, Vector)>,
}

impl PrototypeModel {
    pub fn get(&self, class_id: ClassId) -> Option<&Vector> {
        self.prototypes.iter().find(|(c, _)| *c == class_id).map(|(_, p)| p)
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Adds one class's prototype; used when learning a stream class by class.
    pub fn add_class(&mut self, class_id: ClassId, samples: &[Vector]) -> Result<()> {
        if self.get(class_id).is_some() {
            return Err(Error::Conflict(class_id));
        }
        let proto = mean_vector(samples)?;
        if let Some((_, first)) = self.prototypes.first() {
            if first.len() != proto.len() {
                return Err(Error::dim("PrototypeModel::add_class", first.len(), proto.len()));
            }
        }
        self.prototypes.push((class_id, proto));
        Ok(())
    }

    pub fn from_stream(stream: &ClassStream) -> Result<Self> {
        let mut model = Self::default();
        for (c, batch) in &stream.batches {
            model.add_class(*c, batch.vectors())?;
        }
        Ok(model)
    }
}

/// Coordinate-wise mean. Each coordinate is summed in sorted order, so the
/// result does not depend on sample order.
fn mean_vector(samples: &[Vector]) -> Result<Vector> {
    let first = samples.first().ok_or(Error::EmptyDataset("prototype"))?;
    let dim = first.len();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::dim("prototype", dim, bad.len()));
    }
    let n = samples.len() as f64;
    let mut column = Vec::with_capacity(samples.len());
    let mean = (0..dim)
        .map(|j| {
            column.clear();
            column.extend(samples.iter().map(|s| s[j]));
            column.sort_unstable_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect::<Vec<_>>();
    Ok(mean.into())
}

pub fn fit_prototypes(datasets: &BTreeMap<ClassId, Vec<Vector>>) -> Result<PrototypeModel> {
    let mut model = PrototypeModel::default();
    for (c, samples) in datasets {
        model.add_class(*c, samples)?;
    }
    Ok(model)
}

impl Classifier for PrototypeModel {
    fn class_ids(&self) -> Vec<ClassId> {
        self.prototypes.iter().map(|(c, _)| *c).collect()
    }

    fn input_dim(&self) -> Option<usize> {
        self.prototypes.first().map(|(_, p)| p.len())
    }

    fn scores(&self, x: &[f64]) -> Result<Vec<(ClassId, f64)>> {
        match self.input_dim() {
            None => return Err(Error::State("the prototype model is empty")),
            Some(d) if d != x.len() => return Err(Error::dim("predict_prototype", d, x.len())),
            Some(_) => {}
        }
        Ok(self
            .prototypes
            .iter()
            .map(|(c, p)| {
                let d2 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (*c, d2)
            })
            .collect())
    }
}

/// Nearest prototype under Euclidean distance; ties go to the smaller class id.
pub fn predict_prototype(model: &PrototypeModel, x: &[f64]) -> Result<ClassId> {
    let scores = model.scores(x)?;
    Ok(argmin(scores.iter()).expect("non-empty model").0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Candidates are all classes learned so far.
    SingleHead,
    /// Candidates are the classes of the sample's own task.
    MultiHead,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" | "single_head" | "single-head" => Ok(EvalMode::SingleHead),
            "multi" | "multi_head" | "multi-head" => Ok(EvalMode::MultiHead),
            other => Err(Error::Config(format!("unknown eval mode '{other}'"))),
        }
    }
}

/// Disjoint groups of classes; a multi-head evaluation knows which group a
/// test sample came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPartition(Vec<Vec<ClassId>>);

impl TaskPartition {
    pub fn new(tasks: Vec<Vec<ClassId>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for task in &tasks {
            if task.is_empty() {
                return Err(Error::Config("empty task in partition".into()));
            }
            for &c in task {
                if !seen.insert(c) {
                    return Err(Error::Config(format!("class {c} appears in two tasks")));
                }
            }
        }
        Ok(Self(tasks))
    }

    pub fn tasks(&self) -> &[Vec<ClassId>] {
        &self.0
    }

    pub fn task_of(&self, class_id: ClassId) -> Option<&[ClassId]> {
        self.0.iter().find(|t| t.contains(&class_id)).map(Vec::as_slice)
    }
}

impl std::str::FromStr for TaskPartition {
    type Err = Error;

    /// Tasks separated by `;` or `|`, classes by `,`; `a-b` is an inclusive
    /// range. Example: `0-4;5-9`.
    fn from_str(s: &str) -> Result<Self> {
        let tasks = s
            .split([';', '|'])
            .filter(|t| !t.trim().is_empty())
            .map(parse_class_list)
            .collect::<Result<Vec<_>>>()?;
        Self::new(tasks)
    }
}

/// Parses `0,2,5-7` into `[0, 2, 5, 6, 7]`.
pub fn parse_class_list(s: &str) -> Result<Vec<ClassId>> {
    let bad = |t: &str| Error::Config(format!("bad class id '{t}' in '{s}'"));
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match item.split_once('-') {
            Some((a, b)) => {
                let a: ClassId = a.trim().parse().map_err(|_| bad(item))?;
                let b: ClassId = b.trim().parse().map_err(|_| bad(item))?;
                if a > b {
                    return Err(bad(item));
                }
                out.extend(a..=b);
            }
            None => out.push(item.parse().map_err(|_| bad(item))?),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub classes_seen: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `ova_inn` or `prototype`.
    pub model: String,
    pub mode: EvalMode,
    pub accuracy_after_each_batch: Vec<CurvePoint>,
    /// Row/column order of the confusion matrix (learning order).
    pub class_ids: Vec<ClassId>,
    /// `confusion_matrix[true][predicted]` over the final class set.
    pub confusion_matrix: Vec<Vec<u64>>,
    pub test_count: usize,
}

impl EvalReport {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.accuracy_after_each_batch.last().map(|p| p.accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("classes_seen,accuracy\n");
        for p in &self.accuracy_after_each_batch {
            out.push_str(&format!("{},{}\n", p.classes_seen, p.accuracy));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Writes `<path>.json` and `<path>.csv`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        codec::write_file(&path.with_extension("json"), self.to_json().as_bytes())?;
        codec::write_file(&path.with_extension("csv"), self.to_csv().as_bytes())
    }
}

/// Scores the test set once, then reads off the accuracy after each learned
/// class (prefix of the learning order) plus the final confusion matrix.
///
/// Experts are trained independently, so the first `k` experts of the final
/// registry are exactly the registry as it stood after `k` classes.
pub fn evaluate_curve<C: Classifier + ?Sized>(
    clf: &C,
    test: &LabeledVectors,
    mode: EvalMode,
    partition: Option<&TaskPartition>,
) -> Result<EvalReport> {
    let order = clf.class_ids();
    if order.is_empty() {
        return Err(Error::State("nothing has been learned yet"));
    }
    if test.is_empty() {
        return Err(Error::EmptyDataset("evaluate"));
    }
    match (mode, partition) {
        (EvalMode::MultiHead, None) => {
            return Err(Error::Config("multi-head evaluation needs a task partition".into()))
        }
        (EvalMode::SingleHead, Some(_)) => {
            return Err(Error::Config("a task partition only applies to multi-head evaluation".into()))
        }
        _ => {}
    }
    let rank: BTreeMap<ClassId, usize> = order.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    for &y in test.labels() {
        if !rank.contains_key(&y) {
            return Err(Error::Label(y));
        }
        if let Some(p) = partition {
            if p.task_of(y).is_none() {
                return Err(Error::Config(format!("class {y} is not in any task")));
            }
        }
    }

    let all_scores: Vec<Vec<(ClassId, f64)>> = test
        .vectors()
        .par_iter()
        .map(|x| clf.scores(x))
        .collect::<Result<_>>()?;

    let t = order.len();
    let mut correct = vec![0u64; t];
    let mut seen = vec![0u64; t];
    let mut confusion = vec![vec![0u64; t]; t];
    for (scores, y) in all_scores.iter().zip(test.labels()) {
        let y_rank = rank[y];
        let task = partition.and_then(|p| p.task_of(*y));
        // only prefixes that already contain the true class count this sample
        for k in y_rank + 1..=t {
            let candidates = scores[..k]
                .iter()
                .filter(|(c, _)| task.is_none_or(|task| task.contains(c)));
            let (pred, _) = argmin(candidates).expect("true class is a candidate");
            seen[k - 1] += 1;
            if pred == *y {
                correct[k - 1] += 1;
            }
            if k == t {
                confusion[y_rank][rank[&pred]] += 1;
            }
        }
    }

    let accuracy_after_each_batch = (0..t)
        .filter(|&k| seen[k] > 0)
        .map(|k| CurvePoint {
            classes_seen: k + 1,
            accuracy: correct[k] as f64 / seen[k] as f64,
        })
        .collect();

    Ok(EvalReport {
        model: String::new(),
        mode,
        accuracy_after_each_batch,
        class_ids: order,
        confusion_matrix: confusion,
        test_count: test.len(),
    })
}

/// Accuracy and confusion over all learned classes (a single curve point).
pub fn evaluate<C: Classifier + ?Sized>(
    clf: &C,
    test: &LabeledVectors,
    mode: EvalMode,
    partition: Option<&TaskPartition>,
) -> Result<EvalReport> {
    let mut report = evaluate_curve(clf, test, mode, partition)?;
    let last = report.accuracy_after_each_batch.pop();
    report.accuracy_after_each_batch = last.into_iter().collect();
    Ok(report)
}

fn net_record(class_id: ClassId, net: &InvertibleNet, out: &mut Vec<u8>) -> Result<()> {
    if net.swap_halves() {
        return Err(Error::Config(
            "networks with swapped halves between blocks cannot be stored in the registry format".into(),
        ));
    }
    let blocks = u16::try_from(net.blocks().len())
        .map_err(|_| Error::Config("too many blocks for the registry format".into()))?;
    let rank = u32::try_from(net.rank()).map_err(|_| Error::Config("rank too large".into()))?;
    out.extend_from_slice(&class_id.to_le_bytes());
    out.extend_from_slice(&blocks.to_le_bytes());
    out.extend_from_slice(&rank.to_le_bytes());
    out.push(net.activation().code());
    codec::put_f32s(out, &net.params());
    Ok(())
}

/// The bytes one expert occupies in a registry file.
pub fn encode_expert(class_id: ClassId, net: &InvertibleNet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    net_record(class_id, net, &mut out)?;
    Ok(out)
}

pub fn encode_registry(reg: &ExpertRegistry) -> Result<Vec<u8>> {
    let count = u32::try_from(reg.len()).map_err(|_| Error::Config("too many experts".into()))?;
    let dim = u32::try_from(reg.dim.unwrap_or(0)).map_err(|_| Error::Config("dimension too large".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * reg.param_count() + 11 * reg.len());
    out.extend_from_slice(REGISTRY_MAGIC);
    out.extend_from_slice(&REGISTRY_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for (c, net) in reg.iter() {
        net_record(c, net, &mut out)?;
    }
    Ok(out)
}

fn read_subnet(r: &mut ByteReader<'_>, half: usize, rank: usize, act: Activation, what: &str) -> Result<SubNet> {
    let at = r.pos();
    let down = r.f32s_le(rank * half, what)?;
    let down_bias = r.f32s_le(rank, what)?;
    let up = r.f32s_le(half * rank, what)?;
    let up_bias = r.f32s_le(half, what)?;
    let non_finite = |_| r.error(at, format!("non-finite parameter in {what}"));
    SubNet::new(
        Matrix::new(rank, half, down).map_err(non_finite)?,
        down_bias.into(),
        Matrix::new(half, rank, up).map_err(non_finite)?,
        up_bias.into(),
        act,
    )
}

pub fn decode_registry(bytes: &[u8], context: &str) -> Result<ExpertRegistry> {
    let mut r = ByteReader::new(bytes, context);
    if r.take(8, "magic")? != REGISTRY_MAGIC {
        return Err(r.error(0, "bad registry magic"));
    }
    let version = r.u16_le("version")?;
    if version != REGISTRY_VERSION {
        return Err(r.error(8, format!("unsupported registry version {version}")));
    }
    let count = r.u32_le("net count")?;
    let dim = r.u32_le("dimension")? as usize;
    if count > 0 && (dim == 0 || !dim.is_multiple_of(2)) {
        return Err(r.error(14, format!("dimension {dim} is not even and positive")));
    }
    let half = dim / 2;

    let mut reg = ExpertRegistry::new();
    for i in 0..count {
        let at = r.pos();
        let class_id = r.u32_le("class id")?;
        let n_blocks = r.u16_le("block count")? as usize;
        let rank = r.u32_le("rank")? as usize;
        let code_at = r.pos();
        let code = r.u8("activation code")?;
        let act = Activation::from_code(code)
            .ok_or_else(|| r.error(code_at, format!("unknown activation code {code}")))?;
        if n_blocks == 0 || rank == 0 {
            return Err(r.error(at, format!("net {i} has {n_blocks} blocks of rank {rank}")));
        }
        let mut blocks = Vec::with_capacity(n_blocks);
        for b in 0..n_blocks {
            let f1 = read_subnet(&mut r, half, rank, act, &format!("net {i} block {b} f1"))?;
            let f2 = read_subnet(&mut r, half, rank, act, &format!("net {i} block {b} f2"))?;
            blocks.push(CouplingBlock::new(f1, f2)?);
        }
        let net = InvertibleNet::new(blocks)?;
        reg.add_class(class_id, net).map_err(|e| match e {
            Error::Conflict(c) => r.error(at, format!("duplicate class id {c}")),
            other => other,
        })?;
    }
    r.finish()?;
    Ok(reg)
}

/// Writes the registry atomically (temp file, then rename).
pub fn save_registry(reg: &ExpertRegistry, path: impl AsRef<Path>) -> Result<()> {
    codec::write_file(path.as_ref(), &encode_registry(reg)?)
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<ExpertRegistry> {
    let path = path.as_ref();
    decode_registry(&codec::read_file(path)?, &path.display().to_string())
}

/// `log_likelihood` of `x` under every expert, in learning order.
pub fn log_likelihoods(reg: &ExpertRegistry, x: &[f64]) -> Result<Vec<(ClassId, f64)>> {
    reg.check_input(x)?;
    reg.iter()
        .map(|(c, net)| Ok((c, flowcore::log_likelihood(net, x)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::NetShape;
    use crate::numkit::Rng;

    fn shape(dim: usize) -> NetShape {
        NetShape {
            dim,
            rank: 2,
            blocks: 2,
            activation: Activation::Tanh,
        }
    }

    fn random_registry(classes: &[ClassId], dim: usize, seed: u64) -> ExpertRegistry {
        let mut rng = Rng::new(seed);
        let mut reg = ExpertRegistry::new();
        for &c in classes {
            reg.add_class(c, InvertibleNet::init(&shape(dim), 1.0, &mut rng).unwrap())
                .unwrap();
        }
        reg
    }

    /// n = 2 net sending `x` to the origin: f1 = -x1 through its bias, then
    /// f2 = -x2 through its bias (y1 is already 0).
    fn net_zeroing(x: [f64; 2]) -> InvertibleNet {
        let sub = |bias: f64| {
            SubNet::new(
                Matrix::zeros(1, 1),
                Vector::zeros(1),
                Matrix::zeros(1, 1),
                vec![bias].into(),
                Activation::Identity,
            )
            .unwrap()
        };
        InvertibleNet::new(vec![CouplingBlock::new(sub(-x[0]), sub(-x[1])).unwrap()]).unwrap()
    }

    #[test]
    fn add_class_rules() {
        let mut reg = ExpertRegistry::new();
        reg.add_class(3, InvertibleNet::zeros(&shape(4)).unwrap()).unwrap();
        assert_eq!(reg.len(), 1);
        assert!(matches!(
            reg.add_class(3, InvertibleNet::zeros(&shape(4)).unwrap()),
            Err(Error::Conflict(3))
        ));
        assert!(matches!(
            reg.add_class(4, InvertibleNet::zeros(&shape(6)).unwrap()),
            Err(Error::Dimension { .. })
        ));
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn add_class_keeps_prior_bytes() {
        let mut reg = random_registry(&[0, 1], 4, 2);
        let before = encode_registry(&reg).unwrap();
        reg.add_class(7, InvertibleNet::init(&shape(4), 1.0, &mut Rng::new(9)).unwrap())
            .unwrap();
        let after = encode_registry(&reg).unwrap();
        // only the net count differs in the header; prior records are a prefix
        assert_eq!(before[..10], after[..10]);
        assert_eq!(before[14..], after[14..before.len()]);
    }

    #[test]
    fn predict_examples() {
        let reg = random_registry(&[5], 4, 1);
        for x in [[0.0; 4], [3.0, -1.0, 2.0, 9.0]] {
            assert_eq!(predict(&reg, &x).unwrap().class_id, 5);
        }

        let mut tie = ExpertRegistry::new();
        tie.add_class(8, InvertibleNet::zeros(&shape(4)).unwrap()).unwrap();
        tie.add_class(2, InvertibleNet::zeros(&shape(4)).unwrap()).unwrap();
        let p = predict(&tie, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p.class_id, 2);
        assert_eq!(p.per_class_scores.len(), 2);

        let x = [0.7, -1.3];
        let mut reg = ExpertRegistry::new();
        reg.add_class(0, InvertibleNet::zeros(&NetShape { dim: 2, rank: 1, blocks: 1, activation: Activation::Identity }).unwrap())
            .unwrap();
        reg.add_class(1, net_zeroing(x)).unwrap();
        let p = predict(&reg, &x).unwrap();
        assert_eq!(p.class_id, 1);
        assert!(p.score.abs() < 1e-15);

        assert!(matches!(predict(&ExpertRegistry::new(), &x), Err(Error::State(_))));
        assert!(matches!(predict(&reg, &[1.0; 4]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn multi_head_examples() {
        let reg = random_registry(&[0, 1, 2, 3], 4, 5);
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            assert_eq!(
                predict_multi_head(&reg, &x, &[0, 1, 2, 3]).unwrap(),
                predict(&reg, &x).unwrap()
            );
            assert_eq!(predict_multi_head(&reg, &x, &[2]).unwrap().class_id, 2);
        }
        assert!(matches!(predict_multi_head(&reg, &[0.0; 4], &[9]), Err(Error::Lookup(9))));
        assert!(predict_multi_head(&reg, &[0.0; 4], &[]).is_err());
    }

    #[test]
    fn prototype_examples() {
        let mut data = BTreeMap::new();
        data.insert(0, vec![Vector::from([0.0, 0.0]), Vector::from([2.0, 2.0])]);
        data.insert(4, vec![Vector::from([5.0, -1.0])]);
        let model = fit_prototypes(&data).unwrap();
        assert_eq!(&**model.get(0).unwrap(), &[1.0, 1.0]);
        assert_eq!(&**model.get(4).unwrap(), &[5.0, -1.0]);
        assert_eq!(predict_prototype(&model, &[5.0, -1.0]).unwrap(), 4);
        assert_eq!(predict_prototype(&model, &[1.0, 1.0]).unwrap(), 0);
        // equidistant from (1,1) and (5,-1)
        assert_eq!(predict_prototype(&model, &[3.0, 0.0]).unwrap(), 0);
        assert!(matches!(predict_prototype(&model, &[1.0]), Err(Error::Dimension { .. })));

        data.insert(9, vec![]);
        assert!(matches!(fit_prototypes(&data), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn prototype_is_order_free() {
        let mut rng = Rng::new(4);
        let mut samples: Vec<Vector> = (0..50)
            .map(|_| Vector::from(vec![rng.normal() * 1e3, rng.normal() * 1e-3, rng.normal()]))
            .collect();
        let a = mean_vector(&samples).unwrap();
        rng.shuffle(&mut samples);
        assert_eq!(mean_vector(&samples).unwrap(), a);
    }

    #[test]
    fn separable_clusters_are_perfect_for_prototypes() {
        let mut rng = Rng::new(12);
        let centers = [[0.0, 0.0, 0.0, 0.0], [10.0, 0.0, 0.0, 0.0], [0.0, 10.0, 0.0, 0.0]];
        let draw = |rng: &mut Rng, n: usize| {
            let mut vs = Vec::new();
            let mut ls = Vec::new();
            for (c, m) in centers.iter().enumerate() {
                for _ in 0..n {
                    vs.push(Vector::from(m.iter().map(|v| v + 0.1 * rng.normal()).collect::<Vec<_>>()));
                    ls.push(c as ClassId);
                }
            }
            LabeledVectors::new(4, vs, ls).unwrap()
        };
        let train = draw(&mut rng, 30);
        let test = draw(&mut rng, 30);
        let stream = crate::dataio::make_class_stream(&train, &[0, 1, 2]).unwrap();
        let model = PrototypeModel::from_stream(&stream).unwrap();
        let report = evaluate(&model, &test, EvalMode::SingleHead, None).unwrap();
        assert_eq!(report.final_accuracy(), Some(1.0));
    }

    struct Constant(Vec<ClassId>);

    impl Classifier for Constant {
        fn class_ids(&self) -> Vec<ClassId> {
            self.0.clone()
        }
        fn input_dim(&self) -> Option<usize> {
            Some(1)
        }
        fn scores(&self, _: &[f64]) -> Result<Vec<(ClassId, f64)>> {
            Ok(self.0.iter().map(|&c| (c, if c == self.0[0] { 0.0 } else { 1.0 })).collect())
        }
    }

    struct Oracle;

    impl Classifier for Oracle {
        fn class_ids(&self) -> Vec<ClassId> {
            vec![0, 1]
        }
        fn input_dim(&self) -> Option<usize> {
            Some(1)
        }
        fn scores(&self, x: &[f64]) -> Result<Vec<(ClassId, f64)>> {
            Ok(vec![(0, (x[0] - 0.0).abs()), (1, (x[0] - 1.0).abs())])
        }
    }

    fn balanced(n: usize) -> LabeledVectors {
        let labels: Vec<ClassId> = (0..n).map(|i| (i % 2) as ClassId).collect();
        let vectors = labels.iter().map(|&y| Vector::from(vec![f64::from(y)])).collect();
        LabeledVectors::new(1, vectors, labels).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let test = balanced(10);
        let r = evaluate(&Oracle, &test, EvalMode::SingleHead, None).unwrap();
        assert_eq!(r.final_accuracy(), Some(1.0));
        assert_eq!(r.confusion_matrix, vec![vec![5, 0], vec![0, 5]]);

        let r = evaluate(&Constant(vec![0, 1]), &test, EvalMode::SingleHead, None).unwrap();
        assert_eq!(r.final_accuracy(), Some(0.5));
        let row_sums: Vec<u64> = r.confusion_matrix.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(row_sums, vec![5, 5]);

        let curve = evaluate_curve(&Constant(vec![0, 1]), &test, EvalMode::SingleHead, None).unwrap();
        let acc: Vec<f64> = curve.accuracy_after_each_batch.iter().map(|p| p.accuracy).collect();
        assert_eq!(acc, vec![1.0, 0.5]);
        assert_eq!(curve.to_csv(), "classes_seen,accuracy\n1,1\n2,0.5\n");
    }

    #[test]
    fn evaluate_errors() {
        let test = balanced(4);
        assert!(matches!(
            evaluate(&Constant(vec![0]), &test, EvalMode::SingleHead, None),
            Err(Error::Label(1))
        ));
        assert!(matches!(
            evaluate(&Oracle, &test, EvalMode::MultiHead, None),
            Err(Error::Config(_))
        ));
        let empty = LabeledVectors::new(1, vec![], vec![]).unwrap();
        assert!(matches!(
            evaluate(&Oracle, &empty, EvalMode::SingleHead, None),
            Err(Error::EmptyDataset(_))
        ));
        let partial: TaskPartition = "0".parse().unwrap();
        assert!(evaluate(&Oracle, &test, EvalMode::MultiHead, Some(&partial)).is_err());
    }

    #[test]
    fn singleton_tasks_are_always_right() {
        let test = balanced(6);
        let tasks: TaskPartition = "0;1".parse().unwrap();
        let r = evaluate(&Constant(vec![0, 1]), &test, EvalMode::MultiHead, Some(&tasks)).unwrap();
        assert_eq!(r.final_accuracy(), Some(1.0));
    }

    #[test]
    fn partition_parsing() {
        let p: TaskPartition = "0-4; 5-9".parse().unwrap();
        assert_eq!(p.tasks(), &[vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]]);
        assert_eq!(p.task_of(7).unwrap(), &[5, 6, 7, 8, 9]);
        assert!("0-4;4-9".parse::<TaskPartition>().is_err());
        assert!("a".parse::<TaskPartition>().is_err());
        assert_eq!(parse_class_list("3, 1,7-8").unwrap(), vec![3, 1, 7, 8]);
    }

    #[test]
    fn registry_round_trip() {
        let empty = ExpertRegistry::new();
        assert_eq!(decode_registry(&encode_registry(&empty).unwrap(), "m").unwrap(), empty);

        let reg = random_registry(&[4, 0, 11], 6, 8);
        let bytes = encode_registry(&reg).unwrap();
        let back = decode_registry(&bytes, "m").unwrap();
        assert_eq!(back.len(), 3);
        for ((c1, a), (c2, b)) in reg.iter().zip(back.iter()) {
            assert_eq!(c1, c2);
            for (x, y) in a.params().iter().zip(b.params()) {
                assert_eq!(*x as f32 as f64, y);
            }
        }
        assert_eq!(encode_registry(&back).unwrap(), bytes);
        let per_net = 4 + 2 + 4 + 1 + 4 * shape(6).param_count();
        assert_eq!(bytes.len(), HEADER_LEN + 3 * per_net);
    }

    #[test]
    fn registry_format_errors() {
        let reg = random_registry(&[0, 1], 4, 8);
        let good = encode_registry(&reg).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_registry(&bad, "m"), Err(Error::Format { offset: 0, .. })));

        let mut bad = good.clone();
        bad[8] = 9;
        assert!(matches!(decode_registry(&bad, "m"), Err(Error::Format { offset: 8, .. })));

        let truncated = &good[..good.len() - 3];
        match decode_registry(truncated, "m") {
            // the final up_bias block (two f32) is the first short field
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, good.len() - 8),
            other => panic!("{other:?}"),
        }

        let mut bad = good.clone();
        bad[HEADER_LEN + 10] = 7;
        assert!(matches!(
            decode_registry(&bad, "m"),
            Err(Error::Format { offset, .. }) if offset as usize == HEADER_LEN + 10
        ));

        let mut dup = good.clone();
        let second = HEADER_LEN + 11 + 4 * shape(4).param_count();
        dup[second..second + 4].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_registry(&dup, "m"),
            Err(Error::Format { offset, .. }) if offset as usize == second
        ));

        let swapped = InvertibleNet::zeros(&shape(4)).unwrap().with_swap_halves(true);
        let mut reg = ExpertRegistry::new();
        reg.add_class(0, swapped).unwrap();
        assert!(matches!(encode_registry(&reg), Err(Error::Config(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ovainn");
        let reg = random_registry(&[1, 2], 4, 3);
        save_registry(&reg, &path).unwrap();
        let back = load_registry(&path).unwrap();
        assert_eq!(back.class_ids(), vec![1, 2]);
        assert!(matches!(load_registry(dir.path().join("nope")), Err(Error::Io { .. })));
    }

    #[test]
    fn likelihood_argmax_is_norm_argmin() {
        let reg = random_registry(&[0, 1, 2, 3, 4], 6, 21);
        let mut rng = Rng::new(22);
        for _ in 0..200 {
            let x: Vec<f64> = (0..6).map(|_| 2.0 * rng.normal()).collect();
            let ll = log_likelihoods(&reg, &x).unwrap();
            let best = ll
                .iter()
                .fold(None, |acc: Option<(ClassId, f64)>, &(c, l)| match acc {
                    Some((bc, bl)) if bl > l || (bl == l && bc < c) => Some((bc, bl)),
                    _ => Some((c, l)),
                })
                .unwrap();
            assert_eq!(predict(&reg, &x).unwrap().class_id, best.0);
        }
    }

    #[test]
    fn prefix_matches_incremental_state() {
        let reg = random_registry(&[3, 1, 2], 4, 6);
        let two = reg.prefix(2);
        assert_eq!(two.class_ids(), vec![3, 1]);
        assert!(reg.prefix(0).is_empty());
        assert_eq!(reg.prefix(0).dim(), None);
    }
}
