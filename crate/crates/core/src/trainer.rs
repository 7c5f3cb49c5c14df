//! Mixed InD/OOD mini-batch training with SGD + momentum, and checkpoints.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;
use std::time::Instant;

use byteorder::{LittleEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, InD, Normalization, Ood, Standardizer};
use crate::error::{Error, Result};
use crate::geometry::{Evaluation, ScoreConfig, ScoreMatrix};
use crate::loss::{bound_diagnostics, grad_ind, grad_ood, wood_loss, BatchSlices, BoundDiagnostics, LossValue};
use crate::model::{ForwardTrace, Gradients, Mlp};
use crate::transport::SinkhornConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WOODCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Samples per backward-accumulation chunk. Fixed so that the gradient sum
/// does not depend on the number of worker threads.
const GRAD_CHUNK: usize = 16;

/// Whether training inputs are standardized per feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Standardize {
    /// Standardize unless the data came with a fixed load-time scaling
    /// (pixels), which leaves near-constant features with tiny spread.
    #[default]
    Auto,
    Always,
    Never,
}

impl Standardize {
    pub fn applies_to(self, ind: &Dataset<InD>) -> bool {
        match self {
            Self::Auto => ind.normalization() == Normalization::IDENTITY,
            Self::Always => true,
            Self::Never => false,
        }
    }

    fn code(self) -> u8 {
        match self {
            Self::Auto => 0,
            Self::Always => 1,
            Self::Never => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        [Self::Auto, Self::Always, Self::Never].into_iter().find(|s| s.code() == code)
    }
}

impl std::str::FromStr for Standardize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "always" => Ok(Self::Always),
            "never" => Ok(Self::Never),
            other => Err(Error::Config(format!("unknown standardize mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub beta: f64,
    pub b_ind: usize,
    pub b_ood: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    /// Per-feature input standardization during training. The fitted map is
    /// folded into the first layer afterwards, so the saved model takes the
    /// same inputs as the data it was trained on.
    pub standardize: Standardize,
    pub score: ScoreConfig<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            b_ind: 50,
            b_ood: 10,
            epochs: 50,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
            hidden: vec![128, 64],
            standardize: Standardize::Auto,
            score: ScoreConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if self.b_ind == 0 {
            return Err(Error::Config("b_ind must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config(format!("hidden widths must be >= 1, got {:?}", self.hidden)));
        }
        self.score.sinkhorn.validate()
    }

    pub fn layer_dims(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(&self.hidden);
        dims.push(classes);
        dims
    }
}

/// Indices of one mini-batch into the InD and OOD sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub id: usize,
    pub ind: Vec<usize>,
    pub ood: Vec<usize>,
}

/// One epoch of batches: InD indices shuffled without replacement and cut
/// into runs of `b_ind` (the last may be shorter), each paired with `b_ood`
/// OOD indices drawn with replacement.
pub fn make_batches(
    ind: &Dataset<InD>,
    ood: &Dataset<Ood>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Batch>> {
    if ind.is_empty() {
        return Err(Error::Config("InD training set is empty".into()));
    }
    if cfg.b_ind == 0 {
        return Err(Error::Config("b_ind must be >= 1".into()));
    }
    if cfg.b_ood > 0 && ood.is_empty() {
        return Err(Error::Config(format!("b_ood = {} but the OOD set is empty", cfg.b_ood)));
    }
    let mut order: Vec<usize> = (0..ind.len()).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(cfg.b_ind)
        .enumerate()
        .map(|(id, chunk)| Batch {
            id,
            ind: chunk.to_vec(),
            ood: (0..cfg.b_ood).map(|_| rng.random_range(0..ood.len())).collect(),
        })
        .collect())
}

/// SGD with heavy-ball momentum: `v ← μ v + g`, `θ ← θ - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Gradients<f64>,
}

impl Sgd {
    pub fn new(model: &Mlp<f64>, lr: f64, momentum: f64) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Config(format!("lr must be >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Gradients::zeros_like(model),
        })
    }

    pub fn step(&mut self, model: &mut Mlp<f64>, grads: &Gradients<f64>) {
        let (mu, lr) = (self.momentum, self.lr);
        for (idx, layer) in model.layers_mut().iter_mut().enumerate() {
            let pairs = [
                (&mut layer.weights, &mut self.velocity.weights[idx], &grads.weights[idx]),
                (&mut layer.biases, &mut self.velocity.biases[idx], &grads.biases[idx]),
            ];
            for (theta, vel, g) in pairs {
                for ((t, v), g) in theta.iter_mut().zip(vel.iter_mut()).zip(g) {
                    *v = mu * *v + g;
                    *t -= lr * *v;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// Loss on the batch before the update.
    pub loss: LossValue<f64>,
    pub bounds: BoundDiagnostics<f64>,
}

/// One forward/backward pass over `batch` and one optimizer update.
///
/// Samples are ordered InD first, then OOD; error messages index into that
/// order.
pub fn train_step(
    model: &mut Mlp<f64>,
    opt: &mut Sgd,
    ind: &Dataset<InD>,
    ood: &Dataset<Ood>,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<StepOutput> {
    let labels = ind
        .labels()
        .ok_or_else(|| Error::Config("InD training data must be labeled".into()))?;
    let rows: Vec<&[f64]> = batch
        .ind
        .iter()
        .map(|&i| ind.row(i))
        .chain(batch.ood.iter().map(|&i| ood.row(i)))
        .collect();
    let n_ind = batch.ind.len();
    let n_ood = batch.ood.len();

    let net: &Mlp<f64> = model;
    let traces: Vec<ForwardTrace<f64>> = rows.par_iter().map(|x| net.forward(x)).collect::<Result<_>>()?;

    let slices = BatchSlices::new(
        batch
            .ind
            .iter()
            .zip(&traces)
            .map(|(&i, t)| (t.probs.clone(), labels[i]))
            .collect(),
        traces[n_ind..].iter().map(|t| t.probs.clone()).collect(),
        cfg.beta,
    )?;
    let loss = wood_loss(&slices, &cfg.score)?;
    let bounds = bound_diagnostics(&slices, cfg.score.matrix);

    let grad_probs: Vec<Vec<f64>> = traces
        .par_iter()
        .enumerate()
        .map(|(s, t)| {
            if s < n_ind {
                grad_ind(&t.probs, labels[batch.ind[s]], n_ind)
            } else {
                grad_ood(&t.probs, &cfg.score, n_ood, cfg.beta)
            }
        })
        .collect::<Result<_>>()?;
    if let Some(s) = grad_probs.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(nan_error(cfg, batch.id, s, "softmax-output gradient"));
    }

    let chunks: Vec<Gradients<f64>> = (0..traces.len())
        .collect::<Vec<_>>()
        .par_chunks(GRAD_CHUNK)
        .map(|idx| {
            let mut acc = Gradients::zeros_like(net);
            for &s in idx {
                net.backward_into(&traces[s], &grad_probs[s], &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros_like(net);
    for (c, g) in chunks.iter().enumerate() {
        if !g.all_finite() {
            let start = c * GRAD_CHUNK;
            let end = (start + GRAD_CHUNK).min(traces.len());
            let s = (start..end)
                .find(|&s| {
                    net.backward(&traces[s], &grad_probs[s])
                        .map_or(true, |g| !g.all_finite())
                })
                .unwrap_or(start);
            return Err(nan_error(cfg, batch.id, s, "parameter gradient"));
        }
        total.add_assign(g);
    }
    opt.step(model, &total);
    Ok(StepOutput { loss, bounds })
}

fn nan_error(cfg: &TrainConfig, batch: usize, sample: usize, what: &str) -> Error {
    Error::Numeric(format!(
        "non-finite {what} (lambda = {}, batch {batch}, sample {sample})",
        cfg.score.sinkhorn.lambda
    ))
}

/// Per-epoch training log entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean over batches of the pre-update cross-entropy term.
    pub ce_term: f64,
    /// Mean over batches of the pre-update mean OOD score.
    pub ood_term: f64,
    /// `ce_term - β · ood_term`.
    pub total: f64,
    #[serde(rename = "alpha_M")]
    pub alpha_m: f64,
    pub m: f64,
    pub wall_ms: f64,
}

impl EpochMetrics {
    /// Every field except the wall-clock time, as raw bits.
    pub fn deterministic_bits(&self) -> [u64; 6] {
        [
            self.epoch as u64,
            self.ce_term.to_bits(),
            self.ood_term.to_bits(),
            self.total.to_bits(),
            self.alpha_m.to_bits(),
            self.m.to_bits(),
        ]
    }
}

pub fn write_metrics_csv(path: impl AsRef<Path>, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for m in metrics {
        w.serialize(m).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub params: Vec<f64>,
    pub normalization: Normalization,
    /// Input standardization used during training, already folded into
    /// `params`; kept for the record.
    pub standardizer: Option<Standardizer>,
    pub classes: usize,
    pub config: TrainConfig,
    /// Next output of the batch RNG after training.
    pub rng_digest: u64,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

pub fn fit(ind: &Dataset<InD>, ood: &Dataset<Ood>, cfg: &TrainConfig) -> Result<FitOutput> {
    fit_with_progress(ind, ood, cfg, |_| {})
}

/// As [`fit`], calling `on_epoch` after each epoch.
pub fn fit_with_progress(
    ind: &Dataset<InD>,
    ood: &Dataset<Ood>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<FitOutput> {
    cfg.validate()?;
    let classes = ind
        .classes()
        .ok_or_else(|| Error::Config("InD training data must be labeled".into()))?;
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    if !ood.is_empty() && ood.dim() != ind.dim() {
        return Err(Error::Config(format!(
            "OOD features have dimension {}, InD features {}",
            ood.dim(),
            ind.dim()
        )));
    }
    let standardizer = if cfg.standardize.applies_to(ind) {
        Some(Standardizer::fit(ind)?)
    } else {
        None
    };
    let (ind_std, ood_std);
    let (ind, ood) = match &standardizer {
        Some(st) => {
            ind_std = st.apply(ind)?;
            ood_std = if ood.is_empty() { ood.clone() } else { st.apply(ood)? };
            (&ind_std, &ood_std)
        }
        None => (ind, ood),
    };
    let dims = cfg.layer_dims(ind.dim(), classes);
    let mut model = Mlp::init(&dims, cfg.seed)?;
    let mut opt = Sgd::new(&model, cfg.lr, cfg.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let batches = make_batches(ind, ood, cfg, &mut rng)?;
        let (mut ce, mut od) = (0.0, 0.0);
        let (mut alpha_m, mut m) = (0.0f64, 1.0f64);
        for batch in &batches {
            let out = train_step(&mut model, &mut opt, ind, ood, batch, cfg)?;
            ce += out.loss.ce_term;
            od += out.loss.ood_term;
            alpha_m = alpha_m.max(out.bounds.alpha_m);
            m = m.min(out.bounds.m);
        }
        let n = batches.len() as f64;
        let (ce_term, ood_term) = (ce / n, od / n);
        let row = EpochMetrics {
            epoch,
            ce_term,
            ood_term,
            total: ce_term - cfg.beta * ood_term,
            alpha_m,
            m,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        on_epoch(&row);
        metrics.push(row);
    }
    if let Some(st) = &standardizer {
        model.fold_input_affine(&st.mean, &st.std)?;
    }
    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        layer_dims: dims,
        params: model.params(),
        normalization: ind.normalization(),
        standardizer,
        classes,
        config: cfg.clone(),
        rng_digest: rng.clone().next_u64(),
    };
    Ok(FitOutput { checkpoint, metrics })
}

impl Checkpoint {
    pub fn model(&self) -> Result<Mlp<f64>> {
        Mlp::from_params(&self.layer_dims, &self.params)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(128 + 8 * self.params.len());
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&self.format_version.to_le_bytes());
        b.extend_from_slice(&(self.layer_dims.len() as u32).to_le_bytes());
        let c = &self.config;
        let words = self
            .layer_dims
            .iter()
            .map(|&d| d as u64)
            .chain([self.classes as u64, self.params.len() as u64])
            .chain(self.params.iter().map(|p| p.to_bits()))
            .chain(
                [
                    self.normalization.scale,
                    self.normalization.shift,
                    c.beta,
                    c.lr,
                    c.momentum,
                    c.score.sinkhorn.lambda,
                    c.score.sinkhorn.tol,
                ]
                .map(f64::to_bits),
            )
            .chain([
                c.b_ind as u64,
                c.b_ood as u64,
                c.epochs as u64,
                c.seed,
                c.score.sinkhorn.max_iter as u64,
                self.rng_digest,
            ]);
        for w in words {
            b.extend_from_slice(&w.to_le_bytes());
        }
        b.extend_from_slice(&[
            u8::from(c.score.matrix == ScoreMatrix::Dynamic),
            u8::from(c.score.evaluation == Evaluation::Sinkhorn),
            u8::from(c.score.sinkhorn.log_domain),
            c.standardize.code(),
            u8::from(self.standardizer.is_some()),
        ]);
        if let Some(st) = &self.standardizer {
            for x in st.mean.iter().chain(&st.std) {
                b.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(Cursor::new(bytes));
        let mut magic = [0u8; 8];
        r.exact(&mut magic, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad magic: not a checkpoint"));
        }
        let format_version = r.u32("format version")?;
        if format_version != CHECKPOINT_VERSION {
            return Err(Error::format(8, format!("unsupported version {format_version}")));
        }
        let n_dims = r.u32("layer count")? as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(Error::format(12, format!("implausible layer count {n_dims}")));
        }
        let layer_dims = (0..n_dims)
            .map(|_| r.len("layer width"))
            .collect::<Result<Vec<_>>>()?;
        let classes_at = r.pos();
        let classes = r.len("class count")?;
        let params_at = r.pos();
        let n_params = r.len("parameter count")?;
        let expected: usize = layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if n_params != expected {
            return Err(Error::format(
                params_at,
                format!("{n_params} parameters for layer widths {layer_dims:?} (expected {expected})"),
            ));
        }
        if classes != layer_dims[n_dims - 1] {
            return Err(Error::format(classes_at, format!("class count {classes} disagrees with output width")));
        }
        let params = (0..n_params)
            .map(|_| r.f64("parameters"))
            .collect::<Result<Vec<_>>>()?;
        let mut floats = [0.0; 7];
        for x in floats.iter_mut() {
            *x = r.f64("configuration")?;
        }
        let mut ints = [0u64; 6];
        for x in ints.iter_mut() {
            *x = r.u64("configuration")?;
        }
        let flags_at = r.pos();
        let mut flags = [0u8; 5];
        r.exact(&mut flags, "flags")?;
        if flags.iter().enumerate().any(|(i, &f)| f > 1 && i != 3) {
            return Err(Error::format(flags_at, format!("invalid flag bytes {flags:?}")));
        }
        let standardizer = if flags[4] == 1 {
            let d = layer_dims[0];
            let mut v = (0..2 * d)
                .map(|_| r.f64("standardization"))
                .collect::<Result<Vec<_>>>()?;
            let std = v.split_off(d);
            Some(Standardizer { mean: v, std })
        } else {
            None
        };
        if r.pos() != bytes.len() as u64 {
            return Err(Error::format(r.pos(), "trailing bytes after checkpoint"));
        }
        let matrix = if flags[0] == 1 { ScoreMatrix::Dynamic } else { ScoreMatrix::Binary };
        let evaluation = if flags[1] == 1 { Evaluation::Sinkhorn } else { Evaluation::ClosedForm };
        let config = TrainConfig {
            beta: floats[2],
            b_ind: ints[0] as usize,
            b_ood: ints[1] as usize,
            epochs: ints[2] as usize,
            lr: floats[3],
            momentum: floats[4],
            seed: ints[3],
            hidden: layer_dims[1..n_dims - 1].to_vec(),
            standardize: Standardize::from_code(flags[3])
                .ok_or_else(|| Error::format(flags_at + 3, format!("invalid standardize mode {}", flags[3])))?,
            score: ScoreConfig {
                matrix,
                evaluation,
                sinkhorn: SinkhornConfig {
                    lambda: floats[5],
                    max_iter: ints[4] as usize,
                    tol: floats[6],
                    log_domain: flags[2] == 1,
                },
            },
        };
        Ok(Self {
            format_version,
            layer_dims,
            params,
            normalization: Normalization {
                scale: floats[0],
                shift: floats[1],
            },
            standardizer,
            classes,
            config,
            rng_digest: ints[5],
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn pos(&self) -> u64 {
        self.0.position()
    }

    fn fail(at: u64, what: &str) -> Error {
        Error::format(at, format!("truncated while reading {what}"))
    }

    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.pos();
        self.0.read_exact(buf).map_err(|_| Self::fail(at, what))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let at = self.pos();
        self.0.read_u32::<LittleEndian>().map_err(|_| Self::fail(at, what))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let at = self.pos();
        self.0.read_u64::<LittleEndian>().map_err(|_| Self::fail(at, what))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let at = self.pos();
        let v = self.u64(what)?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v < 1 << 40)
            .ok_or_else(|| Error::format(at, format!("implausible {what} {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, SyntheticSpec};

    fn toy(n: usize) -> Dataset<InD> {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let s = if c == 0 { -1.0 } else { 1.0 };
            features.extend([s * (1.0 + (i % 7) as f64 * 0.1), 0.3 * ((i % 5) as f64 - 2.0)]);
            labels.push(c);
        }
        Dataset::<InD>::new(features, 2, Some(labels), "toy").unwrap()
    }

    fn no_ood(dim: usize) -> Dataset<Ood> {
        Dataset::<Ood>::new(Vec::new(), dim, "none").unwrap()
    }

    #[test]
    fn batches_partition_each_epoch() {
        let ind = toy(100);
        let ood = Dataset::<Ood>::new(vec![0.0; 6], 2, "o").unwrap();
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = make_batches(&ind, &ood, &cfg, &mut rng).unwrap();
        assert_eq!(b.len(), 2);
        let mut all: Vec<usize> = b.iter().flat_map(|x| x.ind.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(b.iter().all(|x| x.ood.len() == 10 && x.ood.iter().all(|&i| i < 3)));
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(make_batches(&ind, &ood, &cfg, &mut rng2).unwrap(), b);
        assert!(matches!(
            make_batches(&ind, &no_ood(2), &cfg, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let ind = toy(20);
        let cfg = TrainConfig { b_ood: 0, ..TrainConfig::default() };
        let mut model = Mlp::init(&[2, 2], 3).unwrap();
        let before = model.params();
        let mut opt = Sgd::new(&model, 0.0, 0.9).unwrap();
        let batch = Batch { id: 0, ind: (0..20).collect(), ood: vec![] };
        let out = train_step(&mut model, &mut opt, &ind, &no_ood(2), &batch, &cfg).unwrap();
        assert!(out.loss.total > 0.0);
        assert_eq!(model.params(), before);
    }

    #[test]
    fn logistic_loss_decreases() {
        let ind = toy(40);
        let cfg = TrainConfig { beta: 0.0, b_ood: 0, lr: 0.1, momentum: 0.0, ..TrainConfig::default() };
        let mut model = Mlp::init(&[2, 2], 5).unwrap();
        let mut opt = Sgd::new(&model, cfg.lr, cfg.momentum).unwrap();
        let batch = Batch { id: 0, ind: (0..40).collect(), ood: vec![] };
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let l = train_step(&mut model, &mut opt, &ind, &no_ood(2), &batch, &cfg).unwrap().loss.total;
            assert!(l < last, "{l} >= {last}");
            last = l;
        }
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let ind = synth_blobs(&SyntheticSpec::blobs(3, 10, 2, 1)).unwrap();
        let cfg = TrainConfig { epochs: 1, b_ood: 0, hidden: vec![4], ..TrainConfig::default() };
        let ck = fit(&ind, &no_ood(2), &cfg).unwrap().checkpoint;
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);

        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(Checkpoint::from_bytes(cut), Err(Error::Format { .. })));
        let mut v = bytes.clone();
        v[8..12].copy_from_slice(&999u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&v),
            Err(Error::Format { offset: 8, ref message }) if message.contains("unsupported version")
        ));
        let mut v = bytes.clone();
        v[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::Format { offset: 0, .. })));
        let mut v = bytes;
        v.push(0);
        assert!(Checkpoint::from_bytes(&v).is_err());
    }

    #[test]
    fn standardize_modes() {
        let raw = toy(10);
        assert!(Standardize::Auto.applies_to(&raw));
        assert!(!Standardize::Never.applies_to(&raw));
        let pixels = Dataset::<InD>::build(vec![0.5; 4], 2, Some(vec![0, 1]), "px".into(), Normalization::PIXEL).unwrap();
        assert!(!Standardize::Auto.applies_to(&pixels));
        assert!(Standardize::Always.applies_to(&pixels));
        assert_eq!("never".parse::<Standardize>().unwrap(), Standardize::Never);
        assert!("sometimes".parse::<Standardize>().is_err());

        let ind = synth_blobs(&SyntheticSpec::blobs(2, 10, 2, 1)).unwrap();
        let base = TrainConfig { epochs: 1, b_ood: 0, hidden: vec![3], ..TrainConfig::default() };
        let on = fit(&ind, &no_ood(2), &base).unwrap().checkpoint;
        assert!(on.standardizer.is_some());
        let off = fit(&ind, &no_ood(2), &TrainConfig { standardize: Standardize::Never, ..base }).unwrap().checkpoint;
        assert!(off.standardizer.is_none());
        let back = Checkpoint::from_bytes(&off.to_bytes()).unwrap();
        assert_eq!(back.config.standardize, Standardize::Never);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { b_ind: 0, ..ok.clone() },
            TrainConfig { lr: 0.0, ..ok.clone() },
            TrainConfig { momentum: 1.0, ..ok.clone() },
            TrainConfig { beta: f64::NAN, ..ok.clone() },
            TrainConfig { hidden: vec![0], ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
