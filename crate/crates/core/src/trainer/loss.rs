//! Negative log-likelihood of the observed careers.
//!
//! A career `(u, p, c)` of snapshot `m` is scored from the states before `m`:
//! companies by `u~ . c~`, positions by `u~ . p`. Each kind contributes
//! `-log softmax` of the positive over its candidate set.

use std::ops::AddAssign;

use ndarray::{Array2, ArrayView2};

use super::candidates::{build_candidates, CandidateSet, CareerHistory, TargetKind};
use super::{Denominator, TrainConfig};
use crate::encoder::{EntityStates, Rollout, ScoreFrom, StateGrad};
use crate::error::{CaperError, Result};
use crate::numeric::{axpy, dot, ensure_finite, log_sum_exp, softmax, ParameterStore};
use crate::par::map_slice;
use crate::tkg::{Career, TkgSnapshot};

/// `mask[m][i]` selects career `i` of snapshot `m`.
pub type CareerMask = Vec<Vec<bool>>;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub company: f64,
    pub position: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.company + self.position
    }
}

impl AddAssign for LossBreakdown {
    fn add_assign(&mut self, rhs: Self) {
        self.company += rhs.company;
        self.position += rhs.position;
    }
}

pub fn score(user: &[f64], target: &[f64]) -> Result<f64> {
    if user.len() != target.len() {
        return Err(CaperError::ShapeMismatch {
            context: "score",
            expected: format!("length {}", user.len()),
            found: format!("length {}", target.len()),
        });
    }
    Ok(dot(user, target))
}

/// Loss of one candidate set and its gradient pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct CareerTerm {
    pub loss: f64,
    /// Gradient with respect to the user vector.
    pub user_grad: Vec<f64>,
    /// `(candidate, dL/dscore)`; the candidate's gradient is this times the user vector.
    pub coeffs: Vec<(u32, f64)>,
}

/// `-log p(positive)` over `set`, with candidate vectors read from `table`.
pub fn career_loss(user: &[f64], table: ArrayView2<f64>, set: &CandidateSet, denominator: Denominator) -> Result<CareerTerm> {
    let d = user.len();
    if table.ncols() != d {
        return Err(CaperError::ShapeMismatch {
            context: "career loss",
            expected: format!("candidate width {d}"),
            found: format!("{}", table.ncols()),
        });
    }
    let ids: Vec<u32> = set.ids().collect();
    let scores: Vec<f64> = ids
        .iter()
        .map(|&e| {
            let row = table.row(e as usize);
            user.iter().zip(row.iter()).map(|(a, b)| a * b).sum()
        })
        .collect();
    ensure_finite(&scores, || format!("scores of user {}", set.user.0))?;
    let (loss, grads): (f64, Vec<f64>) = match denominator {
        Denominator::WithPositive => {
            let lse = log_sum_exp(&scores);
            let mut g = softmax(&scores);
            g[0] -= 1.0;
            (lse - scores[0], g)
        }
        Denominator::PaperLiteral => {
            if scores.len() == 1 {
                return Ok(CareerTerm {
                    loss: 0.0,
                    user_grad: vec![0.0; d],
                    coeffs: Vec::new(),
                });
            }
            let negatives = &scores[1..];
            let lse = log_sum_exp(negatives);
            let mut g = vec![-1.0];
            g.extend(softmax(negatives));
            (lse - scores[0], g)
        }
    };
    let mut user_grad = vec![0.0; d];
    for (&e, &g) in ids.iter().zip(&grads) {
        let row = table.row(e as usize);
        axpy(g, row.as_slice().expect("standard layout"), &mut user_grad);
    }
    Ok(CareerTerm {
        loss,
        user_grad,
        coeffs: ids.into_iter().zip(grads).collect(),
    })
}

struct YearTerms {
    company: CareerTerm,
    position: CareerTerm,
}

fn career_terms(
    career: &Career,
    year: usize,
    state: &EntityStates,
    positions: ArrayView2<f64>,
    history: &CareerHistory,
    cfg: &TrainConfig,
    epoch: u64,
) -> Result<YearTerms> {
    let user = state.user_h.row(career.user.index());
    let user = user.as_slice().expect("standard layout");
    let set = |kind, positive, vocab| {
        build_candidates(career.user, year, kind, positive, history, vocab, cfg.negatives, cfg.seed, epoch)
    };
    let comp_set = set(TargetKind::Company, career.company.0, state.comp_h.nrows())?;
    let pos_set = set(TargetKind::Position, career.position.0, positions.nrows())?;
    Ok(YearTerms {
        company: career_loss(user, state.comp_h.view(), &comp_set, cfg.denominator)?,
        position: career_loss(user, positions, &pos_set, cfg.denominator)?,
    })
}

/// Loss over every (masked-in) career of `snapshots` and its gradient with
/// respect to every parameter.
pub fn nll_loss(
    snapshots: &[TkgSnapshot],
    history: &CareerHistory,
    params: &ParameterStore,
    cfg: &TrainConfig,
    epoch: u64,
    mask: Option<&CareerMask>,
) -> Result<(LossBreakdown, ParameterStore)> {
    let model = cfg.model();
    let n = snapshots.len();
    let steps = match model.score_from {
        ScoreFrom::PreviousYear => n.saturating_sub(1),
        ScoreFrom::SameYear => n,
    };
    let mut state_grads = vec![StateGrad::default(); steps + 1];
    let mut pos_emb_grad = Array2::<f64>::zeros(params.pos_emb.dim());
    let mut total = LossBreakdown::default();

    let (rollout, _) = Rollout::forward(snapshots, params, &model, steps, |k, state| {
        let m = match model.score_from {
            ScoreFrom::PreviousYear => k,
            ScoreFrom::SameYear if k > 0 => k - 1,
            ScoreFrom::SameYear => return Ok(()),
        };
        let Some(snap) = snapshots.get(m) else {
            return Ok(());
        };
        let careers: Vec<&Career> = snap
            .careers
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.is_none_or(|mk| mk[m][*i]))
            .map(|(_, c)| c)
            .collect();
        let positions = state.position_table(params);
        let terms = map_slice(&careers, model.parallel, |c| {
            career_terms(c, m, state, positions, history, cfg, epoch)
        });
        let grads = &mut state_grads[k];
        for (career, term) in careers.iter().zip(terms) {
            let term = term?;
            total.company += term.company.loss;
            total.position += term.position.loss;
            let u = career.user.index();
            let user = state.user_h.row(u);
            let user = user.as_slice().expect("standard layout");
            StateGrad::add(&mut grads.users, u, 1.0, &term.company.user_grad);
            StateGrad::add(&mut grads.users, u, 1.0, &term.position.user_grad);
            for &(c, g) in &term.company.coeffs {
                StateGrad::add(&mut grads.companies, c as usize, g, user);
            }
            for &(p, g) in &term.position.coeffs {
                if model.dynamic_positions {
                    StateGrad::add(&mut grads.positions, p as usize, g, user);
                } else {
                    let mut row = pos_emb_grad.row_mut(p as usize);
                    for (r, x) in row.iter_mut().zip(user) {
                        *r += g * x;
                    }
                }
            }
        }
        Ok(())
    })?;

    let mut grads = params.zeros_like();
    rollout.backward(params, &state_grads, cfg.bptt_window, &mut grads)?;
    grads.pos_emb += &pos_emb_grad;
    Ok((total, grads))
}
