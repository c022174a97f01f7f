//! Dense kernels, parameter storage, the optimizer and the finite-difference
//! gradient oracle.

mod gradcheck;
mod optim;
mod params;

pub use gradcheck::{compare_gradients, finite_diff_gradient, finite_diff_store, relative_error, BlockCheck, NumericGradient};
pub use optim::{Adam, AdamConfig};
pub use params::{CellKind, Dims, GrnnWeights, ParamLayout, ParameterStore, CHECKPOINT_MAGIC};

use crate::error::{CaperError, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn ensure_finite(values: &[f64], context: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CaperError::NonFinite { context: context() })
    }
}

/// `log(sum(exp(scores)))`, shifted by the maximum.
pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Normalises candidate scores into probabilities.
pub fn softmax_over<I: Copy>(scores: &[(I, f64)]) -> Result<Vec<(I, f64)>> {
    if scores.is_empty() {
        return Err(CaperError::EmptyCandidateSet);
    }
    let raw: Vec<f64> = scores.iter().map(|(_, s)| *s).collect();
    ensure_finite(&raw, || "softmax scores".into())?;
    let probs = softmax(&raw);
    Ok(scores.iter().zip(probs).map(|((id, _), p)| (*id, p)).collect())
}

/// Slice softmax with max subtraction. Empty input gives empty output.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mixes several integers into one seed (SplitMix64 finaliser), stable
/// across platforms and toolchains.
pub fn derive_seed(parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(0x243F_6A88_85A3_08D3, |h, &p| mix(h ^ p))
}
