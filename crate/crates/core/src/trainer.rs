//! Alternating minimization of the combined objective
//! `J = λ1·J_relevance + λ2·J_ranking` with momentum SGD.
//!
//! Each step runs, in order: forward pass and loss parts, Γ refresh,
//! gradients at the new Γ, trunk update, head update. The ranking term
//! only reaches the trunk; the heads see `λ1·∂J_relevance` alone.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{CoupledHeads, CouplingError, HeadParams, SoftmaxOutput};
use crate::data::{Batch, BatchSampler, DataError, Dataset, Modality, SamplingMode};
use crate::linalg::Matrix;
use crate::net::{EmbeddingNet, ForwardTape, LayerSpec, NetError, NetGrads};
use crate::ranking::{self, RankingConfig, RankingError, Triplet};
use crate::rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iteration}: {parts}")]
    NonFiniteLoss { iteration: usize, parts: LossParts },
    #[error("training data must contain both modalities (NIR {nir}, VIS {vis})")]
    MissingModality { nir: usize, vis: usize },
    #[error("label {label} does not fit heads with {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("net output width {net} differs from head width {heads}")]
    HeadWidth { net: usize, heads: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the relevance term.
    pub lambda1: f64,
    /// Ranking weight at the first iteration, ramped linearly to `lambda2_end`.
    pub lambda2_start: f64,
    pub lambda2_end: f64,
    /// Learning rate at the first iteration, decayed geometrically to `lr_end`.
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Identities per batch.
    pub p_identities: usize,
    /// Samples per modality per identity.
    pub k_per_modality: usize,
    pub iterations: usize,
    /// Set from the top-level config seed.
    #[serde(skip)]
    pub seed: u64,
    pub sampling: SamplingMode,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    #[serde(skip)]
    pub ranking: RankingConfig,
    #[serde(skip)]
    pub heads: HeadParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2_start: 0.0,
            lambda2_end: 1.0,
            lr_start: 0.05,
            lr_end: 5e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            p_identities: 8,
            k_per_modality: 2,
            iterations: 20_000,
            seed: 7,
            sampling: SamplingMode::IncludeUnpaired,
            checkpoint_every: 0,
            ranking: RankingConfig::default(),
            heads: HeadParams::default(),
        }
    }
}

impl TrainConfig {
    /// Upper bound on batch rows: `p · k` per modality.
    pub fn batch_size(&self) -> usize {
        2 * self.p_identities * self.k_per_modality
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        let non_negative = [
            ("lambda1", self.lambda1),
            ("lambda2_start", self.lambda2_start),
            ("lambda2_end", self.lambda2_end),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [("lr_start", self.lr_start), ("lr_end", self.lr_end)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if self.lr_end > self.lr_start {
            return fail(format!(
                "lr_end {} exceeds lr_start {}",
                self.lr_end, self.lr_start
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if self.p_identities == 0 || self.k_per_modality == 0 {
            return fail("p_identities and k_per_modality must be positive".into());
        }
        self.ranking.validate()?;
        self.heads.validate()?;
        Ok(())
    }
}

/// `(lr, λ2)` at `iteration`: geometric learning-rate decay and a linear
/// λ2 ramp, both reaching their end values at iteration `iterations − 1`.
pub fn schedule(iteration: usize, cfg: &TrainConfig) -> (f64, f64) {
    let progress = if cfg.iterations > 1 {
        (iteration as f64 / (cfg.iterations - 1) as f64).min(1.0)
    } else {
        0.0
    };
    let lr = if progress == 1.0 {
        cfg.lr_end
    } else {
        cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(progress)
    };
    let lambda2 = cfg.lambda2_start + (cfg.lambda2_end - cfg.lambda2_start) * progress;
    (lr, lambda2)
}

/// Scalar pieces of the objective on one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    /// `λ1·relevance + λ2·ranking`.
    pub loss: f64,
    pub relevance: f64,
    pub softmax: f64,
    pub r1: f64,
    pub r2: f64,
    pub ranking: f64,
    pub triplets: usize,
}

impl fmt::Display for LossParts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "loss={} relevance={} softmax={} r1={} r2={} ranking={} triplets={}",
            self.loss, self.relevance, self.softmax, self.r1, self.r2, self.ranking, self.triplets
        )
    }
}

/// Loss and full gradient of the combined objective at the stored Γ.
#[derive(Clone, Debug)]
pub struct CombinedLoss {
    pub parts: LossParts,
    pub net: NetGrads,
    pub d_w_n: Matrix,
    pub d_w_v: Matrix,
    /// Set when λ2 > 0 but the batch lacks one modality; ranking is then 0.
    pub single_modality: bool,
}

enum TripletSource<'a> {
    Mine(&'a RankingConfig),
    Fixed {
        triplets: &'a [Triplet],
        margin: f64,
    },
}

struct ForwardPass {
    parts: LossParts,
    tape: ForwardTape,
    /// `∂J/∂embeddings`; independent of Γ.
    d_embeddings: Matrix,
    softmax: SoftmaxOutput,
    r2: (f64, Matrix, Matrix),
    single_modality: bool,
}

impl ForwardPass {
    /// `λ1·∂relevance/∂(W_N, W_V)` at the Γ currently stored in `heads`.
    fn head_grads(&self, heads: &CoupledHeads, lambda1: f64) -> (Matrix, Matrix) {
        let rel = heads.assemble_relevance(&self.softmax, &self.r2);
        (rel.d_w_n.scale(lambda1), rel.d_w_v.scale(lambda1))
    }
}

fn forward_pass(
    net: &EmbeddingNet,
    heads: &CoupledHeads,
    batch: &Batch,
    lambda1: f64,
    lambda2: f64,
    source: TripletSource<'_>,
) -> Result<ForwardPass, TrainError> {
    let (embeddings, tape) = net.forward(&batch.features)?;
    let softmax = heads.softmax_loss(&embeddings, &batch.labels, &batch.modalities)?;
    let r2 = heads.r2_value_and_grads();
    let rel = heads.assemble_relevance(&softmax, &r2);
    let mut d_embeddings = rel.d_embeddings.scale(lambda1);

    let both = batch.has_both_modalities();
    let (normalized, norms) = ranking::normalize_rows(&embeddings);
    let (triplets, margin) = match source {
        TripletSource::Mine(cfg) if both => (
            ranking::mine_triplets(&normalized, &batch.labels, &batch.modalities, cfg),
            cfg.margin,
        ),
        TripletSource::Mine(cfg) => (Vec::new(), cfg.margin),
        TripletSource::Fixed { triplets, margin } => (triplets.to_vec(), margin),
    };
    let (rank_loss, rank_grad) = ranking::triplet_loss(&normalized, &triplets, margin)?;
    if lambda2 != 0.0 && !triplets.is_empty() {
        let back = ranking::normalize_backward(&normalized, &norms, &rank_grad);
        d_embeddings.axpy(lambda2, &back).expect("same shape");
    }

    let parts = LossParts {
        loss: lambda1 * rel.loss + lambda2 * rank_loss,
        relevance: rel.loss,
        softmax: rel.parts.softmax,
        r1: rel.parts.r1,
        r2: rel.parts.r2,
        ranking: rank_loss,
        triplets: triplets.len(),
    };
    Ok(ForwardPass {
        parts,
        tape,
        d_embeddings,
        softmax,
        r2,
        single_modality: lambda2 > 0.0 && !both,
    })
}

fn finish(
    net: &EmbeddingNet,
    heads: &CoupledHeads,
    lambda1: f64,
    fp: ForwardPass,
) -> Result<CombinedLoss, TrainError> {
    let (grads, _) = net.backward(&fp.tape, &fp.d_embeddings)?;
    let (d_w_n, d_w_v) = fp.head_grads(heads, lambda1);
    Ok(CombinedLoss {
        parts: fp.parts,
        net: grads,
        d_w_n,
        d_w_v,
        single_modality: fp.single_modality,
    })
}

/// `λ1·relevance + λ2·ranking` on `batch` with triplets mined from the
/// current (L2-normalized) embeddings, plus gradients for every parameter.
pub fn combined_loss(
    net: &EmbeddingNet,
    heads: &CoupledHeads,
    batch: &Batch,
    lambda1: f64,
    lambda2: f64,
    ranking_cfg: &RankingConfig,
) -> Result<CombinedLoss, TrainError> {
    let fp = forward_pass(
        net,
        heads,
        batch,
        lambda1,
        lambda2,
        TripletSource::Mine(ranking_cfg),
    )?;
    finish(net, heads, lambda1, fp)
}

/// As [`combined_loss`] with a fixed triplet set, so the objective is
/// smooth in the parameters (finite-difference checks).
pub fn combined_loss_with_triplets(
    net: &EmbeddingNet,
    heads: &CoupledHeads,
    batch: &Batch,
    lambda1: f64,
    lambda2: f64,
    triplets: &[Triplet],
    margin: f64,
) -> Result<CombinedLoss, TrainError> {
    let fp = forward_pass(
        net,
        heads,
        batch,
        lambda1,
        lambda2,
        TripletSource::Fixed { triplets, margin },
    )?;
    finish(net, heads, lambda1, fp)
}

/// Network, heads, momentum buffers and the iteration counter.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub net: EmbeddingNet,
    pub heads: CoupledHeads,
    pub velocity_net: NetGrads,
    pub velocity_w_n: Matrix,
    pub velocity_w_v: Matrix,
    /// Number of completed steps.
    pub iteration: usize,
}

impl TrainState {
    /// Fresh network and heads, zero momentum.
    pub fn init(
        specs: &[LayerSpec],
        classes: usize,
        heads: HeadParams,
        seed: u64,
    ) -> Result<Self, TrainError> {
        let net = EmbeddingNet::init(specs, seed)?;
        let heads = CoupledHeads::init(net.embedding_dim(), classes, heads, seed)?;
        Self::from_parts(net, heads)
    }

    pub fn from_parts(net: EmbeddingNet, heads: CoupledHeads) -> Result<Self, TrainError> {
        if net.embedding_dim() != heads.embedding_dim() {
            return Err(TrainError::HeadWidth {
                net: net.embedding_dim(),
                heads: heads.embedding_dim(),
            });
        }
        let (m, c) = heads.w_n.shape();
        Ok(Self {
            velocity_net: net.zero_grads(),
            velocity_w_n: Matrix::zeros(m, c),
            velocity_w_v: Matrix::zeros(m, c),
            net,
            heads,
            iteration: 0,
        })
    }

    /// Keeps the learned weights and starts a new schedule from them:
    /// iteration 0, zero momentum, Γ refreshed under `params`. Used to
    /// warm-start CDL from a softmax-only pre-run.
    pub fn restart(self, params: HeadParams) -> Result<Self, TrainError> {
        let mut heads = self.heads;
        heads.params = params;
        heads.update_gamma()?;
        Self::from_parts(self.net, heads)
    }
}

/// Stages of one step in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    ForwardLoss,
    GammaRefresh,
    Gradients,
    TrunkUpdate,
    HeadUpdate,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub iteration: usize,
    /// Loss parts before the update, at the Γ stored going in.
    pub parts: LossParts,
    pub lr: f64,
    pub lambda2: f64,
    pub phases: Vec<Phase>,
    pub warnings: Vec<String>,
}

impl StepReport {
    pub fn record(&self) -> LogRecord {
        LogRecord {
            iteration: self.iteration,
            parts: self.parts,
            lr: self.lr,
            lambda2: self.lambda2,
        }
    }
}

/// One step at the scheduled `(lr, λ2)` for `state.iteration`.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<StepReport, TrainError> {
    let (lr, lambda2) = schedule(state.iteration, cfg);
    train_step_with(state, batch, cfg, lr, lambda2)
}

/// One step at an explicit `(lr, λ2)`, ignoring the schedule.
pub fn train_step_with(
    state: &mut TrainState,
    batch: &Batch,
    cfg: &TrainConfig,
    lr: f64,
    lambda2: f64,
) -> Result<StepReport, TrainError> {
    let mut phases = Vec::with_capacity(5);
    let mut warnings = Vec::new();
    let iteration = state.iteration;

    let fp = forward_pass(
        &state.net,
        &state.heads,
        batch,
        cfg.lambda1,
        lambda2,
        TripletSource::Mine(&cfg.ranking),
    )?;
    phases.push(Phase::ForwardLoss);
    if !fp.parts.loss.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            iteration,
            parts: fp.parts,
        });
    }
    if fp.single_modality {
        warnings.push(format!(
            "iteration {iteration}: batch has a single modality; ranking term set to 0"
        ));
    }

    state.heads.update_gamma()?;
    phases.push(Phase::GammaRefresh);

    let (d_w_n, d_w_v) = fp.head_grads(&state.heads, cfg.lambda1);
    let (net_grads, _) = state.net.backward(&fp.tape, &fp.d_embeddings)?;
    phases.push(Phase::Gradients);

    let (beta, wd) = (cfg.momentum, cfg.weight_decay);
    for ((p, g), v) in state
        .net
        .param_slices_mut()
        .into_iter()
        .zip(net_grads.slices())
        .zip(state.velocity_net.slices_mut())
    {
        momentum_update(p, g, v, lr, beta, wd);
    }
    phases.push(Phase::TrunkUpdate);

    momentum_update(
        state.heads.w_n.as_mut_slice(),
        d_w_n.as_slice(),
        state.velocity_w_n.as_mut_slice(),
        lr,
        beta,
        wd,
    );
    momentum_update(
        state.heads.w_v.as_mut_slice(),
        d_w_v.as_slice(),
        state.velocity_w_v.as_mut_slice(),
        lr,
        beta,
        wd,
    );
    phases.push(Phase::HeadUpdate);

    state.iteration += 1;
    Ok(StepReport {
        iteration,
        parts: fp.parts,
        lr,
        lambda2,
        phases,
        warnings,
    })
}

// v ← βv + (g + wd·θ);  θ ← θ − lr·v
fn momentum_update(
    params: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    beta: f64,
    wd: f64,
) {
    for ((p, &g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = beta * *v + g + wd * *p;
        *p -= lr * *v;
    }
}

/// Per-iteration record of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub parts: LossParts,
    pub lr: f64,
    pub lambda2: f64,
}

pub const LOG_HEADER: &str =
    "iteration\tloss\trelevance\tsoftmax\tr1\tr2\tranking\ttriplets\tlr\tlambda2";

/// Tab-separated training log; floats are written with round-trip precision.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let p = &r.parts;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.iteration,
                p.loss,
                p.relevance,
                p.softmax,
                p.r1,
                p.r2,
                p.ranking,
                p.triplets,
                r.lr,
                r.lambda2
            )
            .unwrap();
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == LOG_HEADER => {}
            other => return Err(format!("unexpected log header {other:?}")),
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 10 {
                return Err(format!("log line {}: expected 10 fields", i + 2));
            }
            let num = |k: usize| {
                f[k].parse::<f64>()
                    .map_err(|e| format!("log line {}: {e}", i + 2))
            };
            let int = |k: usize| {
                f[k].parse::<usize>()
                    .map_err(|e| format!("log line {}: {e}", i + 2))
            };
            records.push(LogRecord {
                iteration: int(0)?,
                parts: LossParts {
                    loss: num(1)?,
                    relevance: num(2)?,
                    softmax: num(3)?,
                    r1: num(4)?,
                    r2: num(5)?,
                    ranking: num(6)?,
                    triplets: int(7)?,
                },
                lr: num(8)?,
                lambda2: num(9)?,
            });
        }
        Ok(Self { records })
    }
}

/// Checks that `state` can be trained on `data` under `cfg` without
/// touching either.
pub fn check_compatible(
    state: &TrainState,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    cfg.validate()?;
    let (nir, vis) = (data.count(Modality::Nir), data.count(Modality::Vis));
    if nir == 0 || vis == 0 {
        return Err(TrainError::MissingModality { nir, vis });
    }
    let classes = state.heads.classes();
    if let Some(&label) = data.labels().iter().find(|&&l| l >= classes) {
        return Err(TrainError::LabelRange { label, classes });
    }
    if state.net.input_dim() != data.input_dim() {
        return Err(TrainError::Net(NetError::DimensionMismatch {
            layer: 0,
            expected: state.net.input_dim(),
            actual: data.input_dim(),
        }));
    }
    Ok(())
}

/// Runs steps `state.iteration .. cfg.iterations` on batches drawn from
/// `data`. Batch `t` comes from its own seed-derived stream, so a resumed
/// run draws the same batches as an uninterrupted one.
pub fn fit(
    state: TrainState,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(TrainState, TrainLog), TrainError> {
    fit_with(state, data, cfg, |_, _| Ok::<(), TrainError>(()))
}

/// [`fit`] with a callback after every step (checkpointing, progress).
/// An error from the callback stops training and is returned as is.
pub fn fit_with<F, E>(
    state: TrainState,
    data: &Dataset,
    cfg: &TrainConfig,
    observer: F,
) -> Result<(TrainState, TrainLog), E>
where
    F: FnMut(&TrainState, &StepReport) -> Result<(), E>,
    E: From<TrainError>,
{
    fit_until(state, data, cfg, cfg.iterations, observer)
}

/// Runs steps up to `min(until, cfg.iterations)` on the schedule of the
/// full run; continuing later with [`fit`] gives the uninterrupted result.
pub fn fit_until<F, E>(
    mut state: TrainState,
    data: &Dataset,
    cfg: &TrainConfig,
    until: usize,
    mut observer: F,
) -> Result<(TrainState, TrainLog), E>
where
    F: FnMut(&TrainState, &StepReport) -> Result<(), E>,
    E: From<TrainError>,
{
    check_compatible(&state, data, cfg)?;
    state.heads.params = cfg.heads;

    let sampler = BatchSampler::new(data);
    let mut log = TrainLog::default();
    let stop = until.min(cfg.iterations);
    while state.iteration < stop {
        let mut rng = rng::fork(cfg.seed, &format!("batch-{}", state.iteration));
        let batch = sampler
            .sample(cfg.p_identities, cfg.k_per_modality, cfg.sampling, &mut rng)
            .map_err(TrainError::from)?;
        let report = train_step(&mut state, &batch, cfg)?;
        log.records.push(report.record());
        observer(&state, &report)?;
    }
    Ok((state, log))
}
