//! Training objective, candidate construction and the optimisation loop.

mod candidates;
mod loss;

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use candidates::{build_candidates, CandidateSet, CareerHistory, NegativeSampling, TargetKind};
pub use loss::{career_loss, nll_loss, score, CareerMask, CareerTerm, LossBreakdown};

use crate::encoder::{Layer0Source, ModelConfig, NormMode, ScoreFrom};
use crate::error::{CaperError, Result};
use crate::numeric::{compare_gradients, derive_seed, finite_diff_store, Adam, AdamConfig, BlockCheck, CellKind, Dims, ParameterStore};
use crate::tkg::{Tkg, TkgSnapshot};

/// Model variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// All careers merged into one snapshot.
    KgStatic,
    /// No aggregation: the recurrent encoders read their own previous state.
    NoGcn,
    /// No recurrent encoders: GCN outputs over the initial states are scored directly.
    NoGrnn,
    /// Positions get their own recurrent encoder.
    AllEvolution,
    /// Users keep their initial state.
    NoUserEvolution,
    /// Companies keep their initial state.
    NoCompEvolution,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::KgStatic,
        Variant::NoGcn,
        Variant::NoGrnn,
        Variant::AllEvolution,
        Variant::NoUserEvolution,
        Variant::NoCompEvolution,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::KgStatic => "kg_static",
            Variant::NoGcn => "no_gcn",
            Variant::NoGrnn => "no_grnn",
            Variant::AllEvolution => "all_evolution",
            Variant::NoUserEvolution => "no_user_evolution",
            Variant::NoCompEvolution => "no_comp_evolution",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = CaperError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| CaperError::UnknownVariant(s.to_owned()))
    }
}

/// Softmax denominator of the likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Denominator {
    /// Positive plus negatives.
    WithPositive,
    /// Negatives only in the denominator.
    PaperLiteral,
}

impl FromStr for Denominator {
    type Err = CaperError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with_positive" => Ok(Denominator::WithPositive),
            "paper_literal" => Ok(Denominator::PaperLiteral),
            other => Err(CaperError::Config(format!(
                "unknown denominator `{other}` (expected with_positive or paper_literal)"
            ))),
        }
    }
}

impl Denominator {
    pub fn as_str(self) -> &'static str {
        match self {
            Denominator::WithPositive => "with_positive",
            Denominator::PaperLiteral => "paper_literal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables it.
    pub clip_norm: f64,
    /// Truncation window in years; `None` backpropagates through the whole sequence.
    pub bptt_window: Option<usize>,
    pub cell: CellKind,
    pub norm: NormMode,
    pub negatives: NegativeSampling,
    pub denominator: Denominator,
    pub evolve_inactive: bool,
    /// Optimizer steps per epoch; careers are split into this many seeded
    /// random batches.
    pub batches: usize,
    pub seed: u64,
    /// Sequential execution. Results are bit-identical either way.
    pub deterministic: bool,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            d: 150,
            layers: 1,
            epochs: 100,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            clip_norm: adam.clip_norm,
            bptt_window: None,
            cell: CellKind::PaperLstm,
            norm: NormMode::Degree,
            negatives: NegativeSampling::Full,
            denominator: Denominator::WithPositive,
            evolve_inactive: false,
            batches: 1,
            seed: 42,
            deterministic: true,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(CaperError::Config(m.to_owned()));
        if self.d == 0 {
            return fail("d must be at least 1");
        }
        if self.layers == 0 {
            return fail("layers must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batches == 0 {
            return fail("batches must be at least 1");
        }
        if self.bptt_window == Some(0) {
            return fail("bptt window must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("lr must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if self.cell == CellKind::Identity {
            return fail("cell must be one of paper-lstm, lstm, gru, rnn");
        }
        if let NegativeSampling::Sampled(0) = self.negatives {
            return fail("sampled negatives must be at least 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            clip_norm: self.clip_norm,
        }
    }

    /// Encoder wiring implied by the variant.
    pub fn model(&self) -> ModelConfig {
        let mut m = ModelConfig {
            layers: self.layers,
            norm: self.norm,
            cell: self.cell,
            layer0: Layer0Source::PreviousState,
            evolve_users: true,
            evolve_companies: true,
            dynamic_positions: false,
            score_from: ScoreFrom::PreviousYear,
            evolve_inactive: self.evolve_inactive,
            parallel: !self.deterministic,
        };
        match self.variant {
            Variant::Full => {}
            Variant::KgStatic => m.score_from = ScoreFrom::SameYear,
            Variant::NoGcn => m.layers = 0,
            Variant::NoGrnn => {
                m.cell = CellKind::Identity;
                m.layer0 = Layer0Source::InitialState;
            }
            Variant::AllEvolution => m.dynamic_positions = true,
            Variant::NoUserEvolution => m.evolve_users = false,
            Variant::NoCompEvolution => m.evolve_companies = false,
        }
        m
    }

    pub fn dims(&self, tkg: &Tkg) -> Dims {
        Dims {
            d: self.d,
            users: tkg.num_users(),
            companies: tkg.num_companies(),
            positions: tkg.num_positions(),
        }
    }

    /// Freshly initialised parameters for `tkg`.
    pub fn init_params(&self, tkg: &Tkg) -> ParameterStore {
        ParameterStore::init(self.model().layout(self.dims(tkg)), self.seed)
    }

    /// Snapshot sequence the variant trains on.
    pub fn training_snapshots<'a>(&self, tkg: &'a Tkg) -> Cow<'a, [TkgSnapshot]> {
        match self.variant {
            Variant::KgStatic => Cow::Owned(tkg.collapsed().snapshots().to_vec()),
            _ => Cow::Borrowed(tkg.snapshots()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub company_loss: f64,
    pub position_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ParameterStore,
    pub log: Vec<EpochLog>,
}

pub fn train(tkg: &Tkg, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with(tkg, cfg, |_, _| Ok(()))
}

/// Trains from a fresh initialisation, calling `on_epoch` after every epoch.
pub fn train_with<F>(tkg: &Tkg, cfg: &TrainConfig, on_epoch: F) -> Result<TrainOutput>
where
    F: FnMut(&EpochLog, &ParameterStore) -> Result<()>,
{
    train_from(tkg, cfg, cfg.init_params(tkg), on_epoch)
}

pub fn train_from<F>(tkg: &Tkg, cfg: &TrainConfig, mut params: ParameterStore, mut on_epoch: F) -> Result<TrainOutput>
where
    F: FnMut(&EpochLog, &ParameterStore) -> Result<()>,
{
    cfg.validate()?;
    let snapshots = cfg.training_snapshots(tkg);
    let history = CareerHistory::new(&snapshots);
    let mut adam = Adam::new(cfg.adam(), &params);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut total = LossBreakdown::default();
        if cfg.batches == 1 {
            let (loss, grads) = nll_loss(&snapshots, &history, &params, cfg, epoch as u64, None)?;
            total += loss;
            adam.step(&mut params, &grads)?;
        } else {
            for mask in batch_masks(&snapshots, cfg.batches, derive_seed(&[cfg.seed, epoch as u64, 0xBA7C])) {
                let (loss, grads) = nll_loss(&snapshots, &history, &params, cfg, epoch as u64, Some(&mask))?;
                total += loss;
                adam.step(&mut params, &grads)?;
            }
        }
        let entry = EpochLog {
            epoch,
            loss: total.total(),
            company_loss: total.company,
            position_loss: total.position,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.6} (company {:.6}, position {:.6}) in {:.2}s",
            cfg.epochs,
            entry.loss,
            entry.company_loss,
            entry.position_loss,
            entry.seconds
        );
        on_epoch(&entry, &params)?;
        log.push(entry);
    }
    Ok(TrainOutput { params, log })
}

/// Compares the analytic loss gradient at the initial parameters with central
/// differences of step `h`, block by block.
pub fn gradient_check(tkg: &Tkg, cfg: &TrainConfig, h: f64, per_block: Option<usize>) -> Result<Vec<BlockCheck>> {
    cfg.validate()?;
    let snapshots = cfg.training_snapshots(tkg);
    let history = CareerHistory::new(&snapshots);
    let params = cfg.init_params(tkg);
    let (_, analytic) = nll_loss(&snapshots, &history, &params, cfg, 0, None)?;
    let numeric = finite_diff_store(
        |p| nll_loss(&snapshots, &history, p, cfg, 0, None).map(|(l, _)| l.total()),
        &params,
        h,
        per_block,
        cfg.seed,
    )?;
    Ok(compare_gradients(&analytic, &numeric))
}

/// Splits all careers into `batches` disjoint random masks.
fn batch_masks(snapshots: &[TkgSnapshot], batches: usize, seed: u64) -> Vec<CareerMask> {
    let slots: Vec<(usize, usize)> = snapshots
        .iter()
        .enumerate()
        .flat_map(|(m, s)| (0..s.careers.len()).map(move |i| (m, i)))
        .collect();
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut masks: Vec<CareerMask> = (0..batches)
        .map(|_| snapshots.iter().map(|s| vec![false; s.careers.len()]).collect())
        .collect();
    for (k, &slot) in order.iter().enumerate() {
        let (m, i) = slots[slot];
        masks[k % batches][m][i] = true;
    }
    masks
}
