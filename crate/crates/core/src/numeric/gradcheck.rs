//! Central finite differences, used as the independent oracle for every
//! hand-derived backward pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CaperError, Result};

use super::params::ParameterStore;

/// Gradients smaller than this are compared in absolute rather than relative
/// terms. With `h = 1e-5` the central difference of a loss of order 10
/// carries rounding noise near `1e-9`, so smaller partials cannot be resolved
/// to a relative `1e-4`.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn check_step(h: f64) -> Result<()> {
    if (1e-6..=1e-4).contains(&h) {
        Ok(())
    } else {
        Err(CaperError::Config(format!("finite-difference step {h} outside [1e-6, 1e-4]")))
    }
}

fn check_deterministic(first: f64, second: f64) -> Result<()> {
    if first.to_bits() == second.to_bits() {
        Ok(())
    } else {
        Err(CaperError::NonDeterministicLoss { first, second })
    }
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_gradient<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    check_step(h)?;
    let mut x = theta.to_vec();
    check_deterministic(f(&x), f(&x))?;
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x);
        x[i] = orig - h;
        let minus = f(&x);
        x[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Numeric partials for a subset of one block's coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct NumericGradient {
    pub block: String,
    pub coords: Vec<(usize, f64)>,
}

/// Central differences over a [`ParameterStore`].
///
/// With `per_block = Some(n)`, blocks larger than `n` are checked on `n`
/// coordinates drawn from a ChaCha8 stream seeded with `seed`.
pub fn finite_diff_store<F>(
    mut loss: F,
    params: &ParameterStore,
    h: f64,
    per_block: Option<usize>,
    seed: u64,
) -> Result<Vec<NumericGradient>>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    check_step(h)?;
    let mut work = params.clone();
    check_deterministic(loss(&work)?, loss(&work)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout: Vec<(String, usize)> = params.blocks().into_iter().map(|(n, b)| (n, b.len())).collect();
    let mut out = Vec::with_capacity(layout.len());
    for (bi, (name, len)) in layout.into_iter().enumerate() {
        let coords: Vec<usize> = match per_block {
            Some(n) if n < len => {
                let mut c = sample(&mut rng, len, n).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        let mut grads = Vec::with_capacity(coords.len());
        for i in coords {
            let orig = work.blocks()[bi].1[i];
            set(&mut work, bi, i, orig + h);
            let plus = loss(&work)?;
            set(&mut work, bi, i, orig - h);
            let minus = loss(&work)?;
            set(&mut work, bi, i, orig);
            grads.push((i, (plus - minus) / (2.0 * h)));
        }
        out.push(NumericGradient { block: name, coords: grads });
    }
    Ok(out)
}

fn set(store: &mut ParameterStore, block: usize, index: usize, value: f64) {
    store.blocks_mut()[block].1[index] = value;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockCheck {
    pub block: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
}

/// Per-block comparison of analytic gradients against numeric ones.
pub fn compare_gradients(analytic: &ParameterStore, numeric: &[NumericGradient]) -> Vec<BlockCheck> {
    let blocks = analytic.blocks();
    numeric
        .iter()
        .map(|ng| {
            let a = blocks
                .iter()
                .find(|(n, _)| *n == ng.block)
                .map(|(_, b)| *b)
                .expect("numeric gradient for an unknown block");
            let mut check = BlockCheck {
                block: ng.block.clone(),
                checked: ng.coords.len(),
                max_rel_error: 0.0,
                max_abs_error: 0.0,
                worst_index: 0,
            };
            for &(i, n) in &ng.coords {
                let rel = relative_error(a[i], n);
                check.max_abs_error = check.max_abs_error.max((a[i] - n).abs());
                if rel > check.max_rel_error {
                    check.max_rel_error = rel;
                    check.worst_index = i;
                }
            }
            check
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_identity() {
        let theta = [0.3, -1.2, 2.5, 0.0];
        let g = finite_diff_gradient(|x| 0.5 * x.iter().map(|v| v * v).sum::<f64>(), &theta, 1e-5).unwrap();
        for (gi, ti) in g.iter().zip(&theta) {
            assert!(relative_error(*gi, *ti) < 1e-8, "{gi} vs {ti}");
        }
    }

    #[test]
    fn linear_gradient_is_coefficients() {
        let a = [1.5, -0.25, 4.0];
        let g = finite_diff_gradient(|x| crate::numeric::dot(&a, x), &[0.1, 0.2, 0.3], 1e-5).unwrap();
        for (gi, ai) in g.iter().zip(&a) {
            assert!((gi - ai).abs() < 1e-9);
        }
    }

    #[test]
    fn step_outside_range_is_rejected() {
        assert!(finite_diff_gradient(|x| x[0], &[1.0], 1e-3).is_err());
        assert!(finite_diff_gradient(|x| x[0], &[1.0], 1e-8).is_err());
    }

    #[test]
    fn nondeterministic_loss_is_detected() {
        let mut calls = 0.0;
        let err = finite_diff_gradient(
            |x| {
                calls += 1.0;
                x[0] + calls
            },
            &[1.0],
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, CaperError::NonDeterministicLoss { .. }));
    }

    #[test]
    fn relative_error_uses_floor_for_tiny_values() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) <= 1e-6);
        assert!((relative_error(2e-6, 1e-6) - 0.1).abs() < 1e-12);
    }
}
