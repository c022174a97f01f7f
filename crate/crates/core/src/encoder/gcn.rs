//! Relational aggregation over one snapshot.
//!
//! For layer `l`, every user adds the degree-normalised sum of
//! `company^{l-1} * position^{l-1}` over its careers in the snapshot, and
//! every company the sum of `user^{l-1} * position^{l-1}`. With dynamic
//! positions, positions likewise add `user^{l-1} * company^{l-1}`; otherwise
//! the position embedding table labels every edge in every layer.
//!
//! Only entities active in the snapshot take part. Rows are indexed locally
//! in ascending id order.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{CaperError, Result};
use crate::par::map_range;
use crate::tkg::{CompanyId, EntityKind, PositionId, TkgSnapshot, UserId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    /// Divide by the node's degree in the snapshot.
    Degree,
    /// Plain sum.
    None,
}

impl NormMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NormMode::Degree => "degree",
            NormMode::None => "none",
        }
    }
}

impl FromStr for NormMode {
    type Err = CaperError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "degree" => Ok(NormMode::Degree),
            "none" => Ok(NormMode::None),
            other => Err(CaperError::Config(format!("unknown norm `{other}` (expected degree or none)"))),
        }
    }
}

/// Layer-0 inputs as full tables indexed by global id.
#[derive(Clone, Copy, Debug)]
pub struct GcnInputs<'a> {
    pub users: ArrayView2<'a, f64>,
    pub companies: ArrayView2<'a, f64>,
    pub positions: ArrayView2<'a, f64>,
    /// Positions are updated per layer instead of staying fixed labels.
    pub dynamic_positions: bool,
}

/// Forward activations of every layer, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GcnActivations {
    pub users: Vec<UserId>,
    pub companies: Vec<CompanyId>,
    /// Active positions; rows of `pos_layers` when positions are dynamic.
    pub positions: Vec<PositionId>,
    /// `layers + 1` arrays, layer 0 first.
    pub user_layers: Vec<Array2<f64>>,
    pub comp_layers: Vec<Array2<f64>>,
    /// Empty unless positions are dynamic.
    pub pos_layers: Vec<Array2<f64>>,
    dynamic_positions: bool,
    /// Per local user: (local company, local position).
    user_edges: Vec<Vec<(usize, usize)>>,
    /// Per local company: (local user, local position).
    comp_edges: Vec<Vec<(usize, usize)>>,
    /// Per local position: (local user, local company).
    pos_edges: Vec<Vec<(usize, usize)>>,
    user_scale: Vec<f64>,
    comp_scale: Vec<f64>,
    pos_scale: Vec<f64>,
}

/// Temporal embeddings of the active entities after the last layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalEmbeddings {
    pub year: i32,
    pub users: BTreeMap<UserId, Vec<f64>>,
    pub companies: BTreeMap<CompanyId, Vec<f64>>,
}

fn scale(norm: NormMode, degree: usize) -> f64 {
    match norm {
        NormMode::Degree => 1.0 / degree as f64,
        NormMode::None => 1.0,
    }
}

fn gather(table: &ArrayView2<f64>, rows: &[usize], kind: EntityKind) -> Result<Array2<f64>> {
    let d = table.ncols();
    let mut out = Array2::zeros((rows.len(), d));
    for (i, &r) in rows.iter().enumerate() {
        if r >= table.nrows() {
            return Err(CaperError::MissingLayer0Input { kind, index: r });
        }
        out.row_mut(i).assign(&table.row(r));
    }
    Ok(out)
}

fn local_index<T: Ord + Copy>(items: &[T], item: T) -> usize {
    items.binary_search(&item).expect("entity collected from the same snapshot")
}

/// `out[i] = base[i] + s_i * sum over edges (a[e.0] * b[e.1])`
fn aggregate(
    base: &Array2<f64>,
    a: &ArrayView2<f64>,
    b: &ArrayView2<f64>,
    edges: &[Vec<(usize, usize)>],
    scales: &[f64],
    parallel: bool,
) -> Array2<f64> {
    let d = base.ncols();
    let rows = map_range(edges.len(), parallel, |i| {
        let mut acc = vec![0.0; d];
        for &(x, y) in &edges[i] {
            let (ra, rb) = (a.row(x), b.row(y));
            for k in 0..d {
                acc[k] += ra[k] * rb[k];
            }
        }
        let s = scales[i];
        base.row(i).iter().zip(acc).map(|(v, t)| v + s * t).collect::<Vec<f64>>()
    });
    let mut out = Array2::zeros((edges.len(), d));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&r));
    }
    out
}

/// Runs `layers` aggregation layers over `snapshot`.
pub fn gcn_forward(
    snapshot: &TkgSnapshot,
    inputs: &GcnInputs,
    layers: usize,
    norm: NormMode,
    parallel: bool,
) -> Result<GcnActivations> {
    let d = inputs.users.ncols();
    if inputs.companies.ncols() != d || inputs.positions.ncols() != d {
        return Err(CaperError::ShapeMismatch {
            context: "gcn inputs",
            expected: format!("width {d}"),
            found: format!("companies {}, positions {}", inputs.companies.ncols(), inputs.positions.ncols()),
        });
    }
    let users: Vec<UserId> = snapshot.by_user.keys().copied().collect();
    let companies: Vec<CompanyId> = snapshot.by_company.keys().copied().collect();
    let by_position = snapshot.by_position();
    let positions: Vec<PositionId> = by_position.keys().copied().collect();

    let user_edges: Vec<Vec<(usize, usize)>> = snapshot
        .by_user
        .values()
        .map(|list| {
            list.iter()
                .map(|&(c, p)| (local_index(&companies, c), local_index(&positions, p)))
                .collect()
        })
        .collect();
    let comp_edges: Vec<Vec<(usize, usize)>> = snapshot
        .by_company
        .values()
        .map(|list| {
            list.iter()
                .map(|&(u, p)| (local_index(&users, u), local_index(&positions, p)))
                .collect()
        })
        .collect();
    let pos_edges: Vec<Vec<(usize, usize)>> = if inputs.dynamic_positions {
        by_position
            .values()
            .map(|list| {
                list.iter()
                    .map(|&(u, c)| (local_index(&users, u), local_index(&companies, c)))
                    .collect()
            })
            .collect()
    } else {
        Vec::new()
    };
    let user_scale: Vec<f64> = user_edges.iter().map(|e| scale(norm, e.len())).collect();
    let comp_scale: Vec<f64> = comp_edges.iter().map(|e| scale(norm, e.len())).collect();
    let pos_scale: Vec<f64> = pos_edges.iter().map(|e| scale(norm, e.len())).collect();

    let user_rows: Vec<usize> = users.iter().map(|u| u.index()).collect();
    let comp_rows: Vec<usize> = companies.iter().map(|c| c.index()).collect();
    let pos_rows: Vec<usize> = positions.iter().map(|p| p.index()).collect();
    let u0 = gather(&inputs.users, &user_rows, EntityKind::User)?;
    let c0 = gather(&inputs.companies, &comp_rows, EntityKind::Company)?;
    // Static edge labels: the active rows of the position table, fixed for all layers.
    let p0 = gather(&inputs.positions, &pos_rows, EntityKind::Position)?;

    let mut user_layers = vec![u0];
    let mut comp_layers = vec![c0];
    let mut pos_layers = vec![p0];
    for l in 1..=layers {
        let u = user_layers[l - 1].view();
        let c = comp_layers[l - 1].view();
        let p = pos_layers[if inputs.dynamic_positions { l - 1 } else { 0 }].view();
        let nu = aggregate(&user_layers[l - 1], &c, &p, &user_edges, &user_scale, parallel);
        let nc = aggregate(&comp_layers[l - 1], &u, &p, &comp_edges, &comp_scale, parallel);
        if inputs.dynamic_positions {
            let np = aggregate(&pos_layers[l - 1], &u, &c, &pos_edges, &pos_scale, parallel);
            pos_layers.push(np);
        }
        user_layers.push(nu);
        comp_layers.push(nc);
    }
    Ok(GcnActivations {
        users,
        companies,
        positions,
        user_layers,
        comp_layers,
        pos_layers,
        dynamic_positions: inputs.dynamic_positions,
        user_edges,
        comp_edges,
        pos_edges,
        user_scale,
        comp_scale,
        pos_scale,
    })
}

/// Gradients with respect to the layer-0 rows of the active entities.
#[derive(Clone, Debug)]
pub struct GcnGrads {
    pub users: Array2<f64>,
    pub companies: Array2<f64>,
    /// Active position rows: layer-0 gradients when dynamic, accumulated
    /// edge-label gradients otherwise.
    pub positions: Array2<f64>,
}

impl GcnActivations {
    pub fn layers(&self) -> usize {
        self.user_layers.len() - 1
    }

    pub fn final_users(&self) -> &Array2<f64> {
        self.user_layers.last().expect("layer 0 always present")
    }

    pub fn final_companies(&self) -> &Array2<f64> {
        self.comp_layers.last().expect("layer 0 always present")
    }

    /// Final position rows; the unchanged labels when positions are static.
    pub fn final_positions(&self) -> &Array2<f64> {
        self.pos_layers.last().expect("layer 0 always present")
    }

    pub fn temporal(&self, year: i32) -> TemporalEmbeddings {
        let rows = |m: &Array2<f64>, i: usize| m.row(i).to_vec();
        TemporalEmbeddings {
            year,
            users: self
                .users
                .iter()
                .enumerate()
                .map(|(i, u)| (*u, rows(self.final_users(), i)))
                .collect(),
            companies: self
                .companies
                .iter()
                .enumerate()
                .map(|(i, c)| (*c, rows(self.final_companies(), i)))
                .collect(),
        }
    }

    /// Reverse pass. `g_users`, `g_comps` and (dynamic only) `g_pos` are the
    /// gradients of the final layer, in local row order.
    pub fn backward(&self, g_users: Array2<f64>, g_comps: Array2<f64>, g_pos: Option<Array2<f64>>) -> GcnGrads {
        let d = g_users.ncols();
        let mut gu = g_users;
        let mut gc = g_comps;
        let mut gp = if self.dynamic_positions {
            g_pos.unwrap_or_else(|| Array2::zeros((self.positions.len(), d)))
        } else {
            Array2::zeros((self.positions.len(), d))
        };
        for l in (1..=self.layers()).rev() {
            let u = &self.user_layers[l - 1];
            let c = &self.comp_layers[l - 1];
            let p = &self.pos_layers[if self.dynamic_positions { l - 1 } else { 0 }];
            let mut gu_prev = gu.clone();
            let mut gc_prev = gc.clone();
            let mut gp_label = if self.dynamic_positions {
                gp.clone()
            } else {
                Array2::zeros(gp.dim())
            };
            for (i, edges) in self.user_edges.iter().enumerate() {
                let s = self.user_scale[i];
                let g = gu.row(i);
                for &(cj, pk) in edges {
                    for k in 0..d {
                        gc_prev[[cj, k]] += s * g[k] * p[[pk, k]];
                        gp_label[[pk, k]] += s * g[k] * c[[cj, k]];
                    }
                }
            }
            for (j, edges) in self.comp_edges.iter().enumerate() {
                let s = self.comp_scale[j];
                let g = gc.row(j);
                for &(ui, pk) in edges {
                    for k in 0..d {
                        gu_prev[[ui, k]] += s * g[k] * p[[pk, k]];
                        gp_label[[pk, k]] += s * g[k] * u[[ui, k]];
                    }
                }
            }
            if self.dynamic_positions {
                for (q, edges) in self.pos_edges.iter().enumerate() {
                    let s = self.pos_scale[q];
                    let g = gp.row(q);
                    for &(ui, cj) in edges {
                        for k in 0..d {
                            gu_prev[[ui, k]] += s * g[k] * c[[cj, k]];
                            gc_prev[[cj, k]] += s * g[k] * u[[ui, k]];
                        }
                    }
                }
                gp = gp_label;
            } else {
                gp += &gp_label;
            }
            gu = gu_prev;
            gc = gc_prev;
        }
        GcnGrads {
            users: gu,
            companies: gc,
            positions: gp,
        }
    }
}

/// Adds local rows into a global table.
pub fn scatter_add(target: &mut ArrayViewMut2<f64>, rows: impl IntoIterator<Item = usize>, local: &Array2<f64>) {
    for (i, r) in rows.into_iter().enumerate() {
        let mut row = target.row_mut(r);
        row += &local.row(i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_gradient, relative_error};
    use crate::tkg::Career;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn career(u: u32, p: u32, c: u32) -> Career {
        Career::new(UserId(u), PositionId(p), CompanyId(c), 2000)
    }

    #[test]
    fn two_neighbour_hand_example() {
        // User 0 works at companies 0 and 1 as positions 0 and 1.
        let snap = TkgSnapshot::new(2000, vec![career(0, 0, 0), career(0, 1, 1)], false);
        let users = array![[1.0, 1.0]];
        let comps = array![[1.0, 2.0], [3.0, 0.0]];
        let pos = array![[2.0, 1.0], [1.0, 4.0]];
        let inputs = GcnInputs {
            users: users.view(),
            companies: comps.view(),
            positions: pos.view(),
            dynamic_positions: false,
        };
        // sum = [1*2 + 3*1, 2*1 + 0*4] = [5, 2]
        let none = gcn_forward(&snap, &inputs, 1, NormMode::None, false).unwrap();
        assert_eq!(none.final_users(), &array![[6.0, 3.0]]);
        let deg = gcn_forward(&snap, &inputs, 1, NormMode::Degree, false).unwrap();
        assert_eq!(deg.final_users(), &array![[3.5, 2.0]]);
        // Company 1: user [1,1] * position 1 [1,4], degree 1.
        assert_eq!(deg.final_companies().row(1).to_vec(), vec![4.0, 4.0]);
    }

    #[test]
    fn single_edge_hand_example() {
        let snap = TkgSnapshot::new(2000, vec![career(0, 0, 0)], false);
        let users = array![[1.0, 0.0]];
        let comps = array![[2.0, 1.0]];
        let pos = array![[1.0, 1.0]];
        let inputs = GcnInputs {
            users: users.view(),
            companies: comps.view(),
            positions: pos.view(),
            dynamic_positions: false,
        };
        let act = gcn_forward(&snap, &inputs, 1, NormMode::Degree, false).unwrap();
        assert_eq!(act.final_users(), &array![[3.0, 1.0]]);
        assert_eq!(act.final_companies(), &array![[3.0, 1.0]]);
    }

    #[test]
    fn zero_layers_pass_inputs_through() {
        let snap = TkgSnapshot::new(2000, vec![career(1, 0, 0)], false);
        let users = array![[9.0], [1.5]];
        let comps = array![[2.0]];
        let pos = array![[3.0]];
        let inputs = GcnInputs {
            users: users.view(),
            companies: comps.view(),
            positions: pos.view(),
            dynamic_positions: false,
        };
        let act = gcn_forward(&snap, &inputs, 0, NormMode::Degree, false).unwrap();
        assert_eq!(act.users, vec![UserId(1)]);
        assert_eq!(act.final_users(), &array![[1.5]]);
    }

    #[test]
    fn missing_input_row_is_an_error() {
        let snap = TkgSnapshot::new(2000, vec![career(3, 0, 0)], false);
        let users = array![[1.0]];
        let comps = array![[1.0]];
        let pos = array![[1.0]];
        let inputs = GcnInputs {
            users: users.view(),
            companies: comps.view(),
            positions: pos.view(),
            dynamic_positions: false,
        };
        let err = gcn_forward(&snap, &inputs, 1, NormMode::Degree, false).unwrap_err();
        assert!(matches!(err, CaperError::MissingLayer0Input { kind: EntityKind::User, index: 3 }));
    }

    fn toy_snapshot() -> TkgSnapshot {
        TkgSnapshot::new(
            2000,
            vec![
                career(0, 0, 0),
                career(0, 1, 1),
                career(1, 1, 0),
                career(2, 2, 2),
                career(2, 0, 0),
                career(3, 2, 1),
            ],
            false,
        )
    }

    fn random(rows: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, d), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (u, c, p) = (random(4, 5, &mut rng), random(3, 5, &mut rng), random(3, 5, &mut rng));
        let inputs = GcnInputs {
            users: u.view(),
            companies: c.view(),
            positions: p.view(),
            dynamic_positions: true,
        };
        let a = gcn_forward(&toy_snapshot(), &inputs, 2, NormMode::Degree, true).unwrap();
        let b = gcn_forward(&toy_snapshot(), &inputs, 2, NormMode::Degree, false).unwrap();
        assert_eq!(a.final_users(), b.final_users());
        assert_eq!(a.final_companies(), b.final_companies());
        assert_eq!(a.final_positions(), b.final_positions());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let d = 3;
        for dynamic in [false, true] {
            for norm in [NormMode::Degree, NormMode::None] {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let (u, c, p) = (random(4, d, &mut rng), random(3, d, &mut rng), random(3, d, &mut rng));
                let (wu, wc, wp) = (random(4, d, &mut rng), random(3, d, &mut rng), random(3, d, &mut rng));
                let snap = toy_snapshot();
                let objective = |u: &Array2<f64>, c: &Array2<f64>, p: &Array2<f64>| {
                    let inputs = GcnInputs {
                        users: u.view(),
                        companies: c.view(),
                        positions: p.view(),
                        dynamic_positions: dynamic,
                    };
                    let act = gcn_forward(&snap, &inputs, 2, norm, false).unwrap();
                    let mut total = (act.final_users() * &wu).sum() + (act.final_companies() * &wc).sum();
                    if dynamic {
                        total += (act.final_positions() * &wp).sum();
                    }
                    total
                };
                let inputs = GcnInputs {
                    users: u.view(),
                    companies: c.view(),
                    positions: p.view(),
                    dynamic_positions: dynamic,
                };
                let act = gcn_forward(&snap, &inputs, 2, norm, false).unwrap();
                // Every entity is active and ids are dense, so local rows equal global rows.
                let g = act.backward(wu.clone(), wc.clone(), dynamic.then(|| wp.clone()));
                let flat = |m: &Array2<f64>| m.iter().copied().collect::<Vec<_>>();
                let shape = |m: &Array2<f64>, v: &[f64]| Array2::from_shape_vec(m.dim(), v.to_vec()).unwrap();
                let nu = finite_diff_gradient(|v| objective(&shape(&u, v), &c, &p), &flat(&u), 1e-5).unwrap();
                let nc = finite_diff_gradient(|v| objective(&u, &shape(&c, v), &p), &flat(&c), 1e-5).unwrap();
                let np = finite_diff_gradient(|v| objective(&u, &c, &shape(&p, v)), &flat(&p), 1e-5).unwrap();
                for (an, nu) in flat(&g.users).iter().zip(&nu) {
                    assert!(relative_error(*an, *nu) < 1e-6, "users {dynamic} {norm:?}: {an} vs {nu}");
                }
                for (an, nu) in flat(&g.companies).iter().zip(&nc) {
                    assert!(relative_error(*an, *nu) < 1e-6, "companies {dynamic} {norm:?}: {an} vs {nu}");
                }
                for (an, nu) in flat(&g.positions).iter().zip(&np) {
                    assert!(relative_error(*an, *nu) < 1e-6, "positions {dynamic} {norm:?}: {an} vs {nu}");
                }
            }
        }
    }
}
