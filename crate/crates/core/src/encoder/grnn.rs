//! Recurrent evolution cells, batched over entities (one row per entity),
//! with hand-derived backward passes.
//!
//! Every gate pre-activation has the form `h W1^T + x W2^T (+ b)` where `h`
//! is the previous hidden state and `x` the temporal embedding from the GCN.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{CaperError, Result};
use crate::numeric::{CellKind, GrnnWeights};

/// Evolution state of one entity.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
    /// Year of the last update, `None` while still at the initial state.
    pub last_year: Option<i32>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct CellCache {
    h: Array2<f64>,
    c: Array2<f64>,
    x: Array2<f64>,
    kind: CacheKind,
}

#[derive(Clone, Debug)]
enum CacheKind {
    Lstm {
        f: Array2<f64>,
        i: Array2<f64>,
        g: Array2<f64>,
        o: Array2<f64>,
        tanh_c: Array2<f64>,
    },
    Gru {
        r: Array2<f64>,
        z: Array2<f64>,
        n: Array2<f64>,
        /// `h Wn1^T`, before the reset gate.
        hn: Array2<f64>,
    },
    Rnn {
        out: Array2<f64>,
    },
    Identity,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn pre_activation(w: &GrnnWeights, gate: usize, h: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut a = h.dot(&w.mats[2 * gate].t()) + x.dot(&w.mats[2 * gate + 1].t());
    if let Some(b) = w.biases.get(gate) {
        a += b;
    }
    a
}

/// Accumulates weight gradients of one affine gate and propagates `da` into
/// `dh` and `dx`.
fn affine_backward(
    w: &GrnnWeights,
    gate: usize,
    da: &Array2<f64>,
    cache: &CellCache,
    grads: &mut GrnnWeights,
    dh: &mut Array2<f64>,
    dx: &mut Array2<f64>,
) {
    grads.mats[2 * gate] += &da.t().dot(&cache.h);
    grads.mats[2 * gate + 1] += &da.t().dot(&cache.x);
    if let Some(b) = grads.biases.get_mut(gate) {
        *b += &da.sum_axis(Axis(0));
    }
    *dh += &da.dot(&w.mats[2 * gate]);
    *dx += &da.dot(&w.mats[2 * gate + 1]);
}

fn check_shapes(w: &GrnnWeights, h: &Array2<f64>, c: &Array2<f64>, x: &Array2<f64>) -> Result<()> {
    let d = h.ncols();
    let ok = c.dim() == h.dim()
        && x.dim() == h.dim()
        && (w.kind == CellKind::Identity || w.dim() == d);
    if ok {
        Ok(())
    } else {
        Err(CaperError::ShapeMismatch {
            context: "grnn step",
            expected: format!("{:?} with weights of dim {d}", h.dim()),
            found: format!("cell {:?}, input {:?}, weights dim {}", c.dim(), x.dim(), w.dim()),
        })
    }
}

/// One step for a batch of entities. Returns `(h', c', cache)`.
pub fn cell_forward(
    w: &GrnnWeights,
    h: &Array2<f64>,
    c: &Array2<f64>,
    x: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>, CellCache)> {
    check_shapes(w, h, c, x)?;
    let (h_new, c_new, kind) = match w.kind {
        CellKind::PaperLstm | CellKind::Lstm => {
            let mut f = pre_activation(w, 0, h, x);
            let mut i = pre_activation(w, 1, h, x);
            let mut g = pre_activation(w, 2, h, x);
            let mut o = pre_activation(w, 3, h, x);
            if w.kind == CellKind::Lstm {
                f.mapv_inplace(sigmoid);
                i.mapv_inplace(sigmoid);
                g.mapv_inplace(f64::tanh);
                o.mapv_inplace(sigmoid);
            }
            let c_new = c * &f + &i * &g;
            let tanh_c = c_new.mapv(f64::tanh);
            let h_new = &o * &tanh_c;
            (h_new, c_new, CacheKind::Lstm { f, i, g, o, tanh_c })
        }
        CellKind::Gru => {
            let r = pre_activation(w, 0, h, x).mapv(sigmoid);
            let z = pre_activation(w, 1, h, x).mapv(sigmoid);
            let hn = h.dot(&w.mats[4].t());
            let mut n = x.dot(&w.mats[5].t()) + &w.biases[2] + &r * &hn;
            n.mapv_inplace(f64::tanh);
            let mut h_new = Array2::zeros(h.dim());
            Zip::from(&mut h_new)
                .and(&z)
                .and(&n)
                .and(h)
                .for_each(|out, &z, &n, &h| *out = (1.0 - z) * n + z * h);
            (h_new, c.clone(), CacheKind::Gru { r, z, n, hn })
        }
        CellKind::Rnn => {
            let out = pre_activation(w, 0, h, x).mapv(f64::tanh);
            (out.clone(), c.clone(), CacheKind::Rnn { out })
        }
        CellKind::Identity => (x.clone(), c.clone(), CacheKind::Identity),
    };
    let cache = CellCache {
        h: h.clone(),
        c: c.clone(),
        x: x.clone(),
        kind,
    };
    Ok((h_new, c_new, cache))
}

/// Reverse pass of [`cell_forward`]. Accumulates weight gradients into
/// `grads` and returns `(dh, dc, dx)`.
pub fn cell_backward(
    w: &GrnnWeights,
    cache: &CellCache,
    dh_new: &Array2<f64>,
    dc_new: &Array2<f64>,
    grads: &mut GrnnWeights,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dim = cache.h.dim();
    let mut dh = Array2::zeros(dim);
    let mut dx = Array2::zeros(dim);
    let dc = match &cache.kind {
        CacheKind::Lstm { f, i, g, o, tanh_c } => {
            let d_o = dh_new * tanh_c;
            let mut dc_total = dc_new.clone();
            Zip::from(&mut dc_total)
                .and(dh_new)
                .and(o)
                .and(tanh_c)
                .for_each(|acc, &dh, &o, &t| *acc += dh * o * (1.0 - t * t));
            let mut d_f = &dc_total * &cache.c;
            let mut d_i = &dc_total * g;
            let mut d_g = &dc_total * i;
            let mut d_o = d_o;
            if w.kind == CellKind::Lstm {
                Zip::from(&mut d_f).and(f).for_each(|d, &s| *d *= s * (1.0 - s));
                Zip::from(&mut d_i).and(i).for_each(|d, &s| *d *= s * (1.0 - s));
                Zip::from(&mut d_g).and(g).for_each(|d, &t| *d *= 1.0 - t * t);
                Zip::from(&mut d_o).and(o).for_each(|d, &s| *d *= s * (1.0 - s));
            }
            for (gate, da) in [d_f, d_i, d_g, d_o].iter().enumerate() {
                affine_backward(w, gate, da, cache, grads, &mut dh, &mut dx);
            }
            &dc_total * f
        }
        CacheKind::Gru { r, z, n, hn } => {
            // h' = (1 - z) n + z h,  n = tanh(x Wn2^T + bn + r * (h Wn1^T))
            let mut da_n = Array2::zeros(dim);
            let mut d_z = Array2::zeros(dim);
            Zip::from(&mut da_n)
                .and(&mut d_z)
                .and(dh_new)
                .and(z)
                .and(n)
                .and(&cache.h)
                .for_each(|dan, dz, &dhn, &z, &n, &h| {
                    *dan = dhn * (1.0 - z) * (1.0 - n * n);
                    *dz = dhn * (h - n) * z * (1.0 - z);
                });
            dh += &(dh_new * z);
            let d_r = (&da_n * hn) * &r.mapv(|s| s * (1.0 - s));
            let d_hn = &da_n * r;
            affine_backward(w, 0, &d_r, cache, grads, &mut dh, &mut dx);
            affine_backward(w, 1, &d_z, cache, grads, &mut dh, &mut dx);
            grads.mats[4] += &d_hn.t().dot(&cache.h);
            dh += &d_hn.dot(&w.mats[4]);
            grads.mats[5] += &da_n.t().dot(&cache.x);
            dx += &da_n.dot(&w.mats[5]);
            grads.biases[2] += &da_n.sum_axis(Axis(0));
            dc_new.clone()
        }
        CacheKind::Rnn { out } => {
            let da = dh_new * &out.mapv(|t| 1.0 - t * t);
            affine_backward(w, 0, &da, cache, grads, &mut dh, &mut dx);
            dc_new.clone()
        }
        CacheKind::Identity => {
            dx.assign(dh_new);
            dc_new.clone()
        }
    };
    (dh, dc, dx)
}

/// Advances a single entity by one step.
pub fn grnn_step(prev: &EvolutionState, temporal: &[f64], weights: &GrnnWeights, year: i32) -> Result<EvolutionState> {
    let d = prev.hidden.len();
    if prev.cell.len() != d || temporal.len() != d {
        return Err(CaperError::ShapeMismatch {
            context: "grnn step",
            expected: format!("vectors of length {d}"),
            found: format!("cell {}, temporal {}", prev.cell.len(), temporal.len()),
        });
    }
    let row = |v: &[f64]| Array2::from_shape_vec((1, d), v.to_vec()).expect("length checked");
    let (h, c, _) = cell_forward(weights, &row(&prev.hidden), &row(&prev.cell), &row(temporal))?;
    Ok(EvolutionState {
        hidden: h.into_raw_vec_and_offset().0,
        cell: c.into_raw_vec_and_offset().0,
        last_year: Some(year),
    })
}

/// Identity weights for the evolution-free variant.
pub fn identity_weights() -> GrnnWeights {
    GrnnWeights {
        kind: CellKind::Identity,
        mats: Vec::new(),
        biases: Vec::<Array1<f64>>::new(),
    }
}
