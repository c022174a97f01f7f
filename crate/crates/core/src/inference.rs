//! Multi-year extrapolation with frozen parameters.
//!
//! Horizon 1 is scored from the states after the last training snapshot.
//! Each later horizon first encodes an inferred snapshot built from the
//! previous horizon's predictions: for every test user, the careers
//! (top company, top position) and (second company, top position).

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::time::Instant;

use ndarray::ArrayView2;
use serde::Deserialize;

use crate::encoder::{EntityStates, Rollout};
use crate::error::{CaperError, Result};
use crate::numeric::ParameterStore;
use crate::par::map_slice;
use crate::tkg::{Career, CompanyId, EntityKind, IdMaps, PositionId, Tkg, TkgSnapshot, UserId};
use crate::trainer::TrainConfig;

/// Ranked candidates of one user at one horizon, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedPrediction {
    pub user: UserId,
    pub horizon: usize,
    pub companies: Vec<(CompanyId, f64)>,
    pub positions: Vec<(PositionId, f64)>,
}

impl RankedPrediction {
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            user: self.user,
            horizon: self.horizon,
            companies: self.companies.iter().take(k).copied().collect(),
            positions: self.positions.iter().take(k).copied().collect(),
        }
    }
}

/// Indices sorted by descending score, ties by ascending index.
pub fn rank_scores(scores: &[f64]) -> Vec<(u32, f64)> {
    let mut ranked: Vec<(u32, f64)> = scores.iter().enumerate().map(|(i, s)| (i as u32, *s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Scores every company by `u . c` and every position by `u . p` for each
/// user and keeps the top `k` of each (`usize::MAX` keeps all).
pub fn predict_step(
    states: &EntityStates,
    positions: ArrayView2<f64>,
    users: &[UserId],
    horizon: usize,
    k: usize,
    parallel: bool,
) -> Result<Vec<RankedPrediction>> {
    if let Some(u) = users.iter().find(|u| u.index() >= states.user_h.nrows()) {
        return Err(CaperError::UnknownTestUser(u.index()));
    }
    let out = map_slice(users, parallel, |&user| {
        let h = states.user_h.row(user.index());
        let comp_scores = states.comp_h.dot(&h);
        let pos_scores = positions.dot(&h);
        let top = |s: &[f64]| {
            let mut r = rank_scores(s);
            r.truncate(k);
            r
        };
        RankedPrediction {
            user,
            horizon,
            companies: top(comp_scores.as_slice().expect("contiguous"))
                .into_iter()
                .map(|(i, s)| (CompanyId(i), s))
                .collect(),
            positions: top(pos_scores.as_slice().expect("contiguous"))
                .into_iter()
                .map(|(i, s)| (PositionId(i), s))
                .collect(),
        }
    });
    Ok(out)
}

/// Two careers per user: (1st company, 1st position), (2nd company, 1st position).
pub fn build_inferred_snapshot(predictions: &[RankedPrediction], year: i32) -> Result<TkgSnapshot> {
    let mut careers = Vec::with_capacity(2 * predictions.len());
    for p in predictions {
        if p.companies.len() < 2 || p.positions.is_empty() {
            return Err(CaperError::InsufficientCandidates { user: p.user.index() });
        }
        let position = p.positions[0].0;
        careers.push(Career::new(p.user, position, p.companies[0].0, year));
        careers.push(Career::new(p.user, position, p.companies[1].0, year));
    }
    Ok(TkgSnapshot::new(year, careers, true))
}

#[derive(Clone, Debug)]
pub struct InferenceOutput {
    /// Full rankings, one list per horizon.
    pub predictions: Vec<Vec<RankedPrediction>>,
    /// Inferred snapshots fed to horizons 2..=M.
    pub inferred: Vec<TkgSnapshot>,
    pub seconds: f64,
    /// Wall time per test user over all horizons, in milliseconds.
    pub per_user_ms: f64,
    pub fingerprint_before: String,
    pub fingerprint_after: String,
}

/// Predicts `horizons` future years for `users` without touching `params`.
pub fn multi_step_inference(
    params: &ParameterStore,
    train: &Tkg,
    users: &BTreeSet<UserId>,
    horizons: usize,
    cfg: &TrainConfig,
) -> Result<InferenceOutput> {
    if horizons == 0 {
        return Err(CaperError::Config("horizon must be at least 1".into()));
    }
    let fingerprint_before = params.fingerprint();
    let start = Instant::now();
    let model = cfg.model();
    let mut history: Vec<TkgSnapshot> = cfg.training_snapshots(train).into_owned();
    let (_, mut state) = Rollout::forward(&history, params, &model, history.len(), |_, _| Ok(()))?;
    let users: Vec<UserId> = users.iter().copied().collect();
    let mut predictions: Vec<Vec<RankedPrediction>> = Vec::with_capacity(horizons);
    let mut inferred = Vec::new();
    for h in 1..=horizons {
        if h > 1 {
            let snap = build_inferred_snapshot(&predictions[h - 2], train.last_year() + h as i32 - 1)?;
            history.push(snap.clone());
            inferred.push(snap);
            let at = history.len() - 1;
            state = Rollout::forward_from(&history, at, state, params, &model, 1, |_, _| Ok(()))?.1;
        }
        let preds = predict_step(&state, state.position_table(params), &users, h, usize::MAX, model.parallel)?;
        predictions.push(preds);
    }
    let seconds = start.elapsed().as_secs_f64();
    let fingerprint_after = params.fingerprint();
    Ok(InferenceOutput {
        predictions,
        inferred,
        seconds,
        per_user_ms: if users.is_empty() {
            0.0
        } else {
            1000.0 * seconds / users.len() as f64
        },
        fingerprint_before,
        fingerprint_after,
    })
}

/// Writes `user_id,horizon,kind,rank,entity_id,score` rows, top `k` per list.
pub fn write_predictions<W: Write>(predictions: &[Vec<RankedPrediction>], ids: &IdMaps, k: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", "horizon", "kind", "rank", "entity_id", "score"])?;
    for p in predictions.iter().flatten() {
        let user = ids.users.name(p.user.index());
        let horizon = p.horizon.to_string();
        let rows = p
            .companies
            .iter()
            .take(k)
            .map(|(c, s)| ("company", ids.companies.name(c.index()), *s))
            .enumerate()
            .chain(
                p.positions
                    .iter()
                    .take(k)
                    .map(|(q, s)| ("position", ids.positions.name(q.index()), *s))
                    .enumerate(),
            );
        for (rank, (kind, entity, score)) in rows {
            w.write_record([
                user,
                horizon.as_str(),
                kind,
                &(rank + 1).to_string(),
                entity,
                &format!("{score:.6}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct PredictionRow {
    user_id: String,
    horizon: usize,
    kind: String,
    rank: usize,
    entity_id: String,
    score: f64,
}

/// Reads a predictions file back, one list per horizon ordered by user id.
/// List order follows the `rank` column.
pub fn read_predictions<R: Read>(reader: R, ids: &IdMaps) -> Result<Vec<Vec<RankedPrediction>>> {
    use std::collections::BTreeMap;
    type Ranked<I> = Vec<(usize, I, f64)>;
    let mut rows: BTreeMap<(usize, UserId), (Ranked<CompanyId>, Ranked<PositionId>)> = BTreeMap::new();
    let mut r = csv::Reader::from_reader(reader);
    for (i, row) in r.deserialize::<PredictionRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        let unknown = |kind: EntityKind, name: &str| CaperError::MalformedRecord {
            line,
            reason: format!("unknown {kind} `{name}`"),
        };
        let user = ids
            .users
            .get(&row.user_id)
            .map(UserId)
            .ok_or_else(|| unknown(EntityKind::User, &row.user_id))?;
        let entry = rows.entry((row.horizon, user)).or_default();
        match row.kind.as_str() {
            "company" => {
                let c = ids.companies.get(&row.entity_id).ok_or_else(|| unknown(EntityKind::Company, &row.entity_id))?;
                entry.0.push((row.rank, CompanyId(c), row.score));
            }
            "position" => {
                let p = ids.positions.get(&row.entity_id).ok_or_else(|| unknown(EntityKind::Position, &row.entity_id))?;
                entry.1.push((row.rank, PositionId(p), row.score));
            }
            other => {
                return Err(CaperError::MalformedRecord {
                    line,
                    reason: format!("unknown kind `{other}`"),
                })
            }
        }
    }
    let max_h = rows.keys().map(|(h, _)| *h).max().unwrap_or(0);
    let mut out: Vec<Vec<RankedPrediction>> = vec![Vec::new(); max_h];
    for ((h, user), (mut comps, mut poss)) in rows {
        if h == 0 {
            return Err(CaperError::MalformedRecord {
                line: 0,
                reason: "horizon 0".into(),
            });
        }
        comps.sort_by_key(|e| e.0);
        poss.sort_by_key(|e| e.0);
        out[h - 1].push(RankedPrediction {
            user,
            horizon: h,
            companies: comps.into_iter().map(|(_, c, s)| (c, s)).collect(),
            positions: poss.into_iter().map(|(_, p, s)| (p, s)).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EntityStates, Layer0Source, ModelConfig, NormMode, ScoreFrom};
    use crate::numeric::CellKind;
    use crate::toy::toy_tkg;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn states(user: Array2<f64>, comp: Array2<f64>) -> EntityStates {
        EntityStates {
            user_c: Array2::zeros(user.dim()),
            comp_c: Array2::zeros(comp.dim()),
            user_h: user,
            comp_h: comp,
            pos_h: None,
            pos_c: None,
        }
    }

    #[test]
    fn argmax_company_ranks_first() {
        let s = states(array![[1.0, 0.0]], array![[0.1, 5.0], [0.2, 0.0], [3.0, 0.0]]);
        let pos = array![[0.0, 1.0]];
        let p = predict_step(&s, pos.view(), &[UserId(0)], 1, 1, false).unwrap();
        assert_eq!(p[0].companies, vec![(CompanyId(2), 3.0)]);
    }

    #[test]
    fn ties_rank_lower_id_first() {
        assert_eq!(rank_scores(&[1.0, 2.0, 2.0, 0.5]), vec![(1, 2.0), (2, 2.0), (0, 1.0), (3, 0.5)]);
    }

    #[test]
    fn ranking_matches_brute_force_and_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 6;
        let users = Array2::from_shape_fn((4, d), |_| rng.gen_range(-1.0..1.0));
        let comps = Array2::from_shape_fn((50, d), |_| rng.gen_range(-1.0..1.0));
        let pos = Array2::from_shape_fn((7, d), |_| rng.gen_range(-1.0..1.0));
        let s = states(users.clone(), comps.clone());
        let all: Vec<UserId> = (0..4).map(UserId).collect();
        let preds = predict_step(&s, pos.view(), &all, 1, usize::MAX, false).unwrap();
        for p in &preds {
            let u = users.row(p.user.index());
            let mut brute: Vec<(u32, f64)> = (0..50).map(|c| (c as u32, comps.row(c).dot(&u))).collect();
            brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let got: Vec<u32> = p.companies.iter().map(|c| c.0 .0).collect();
            let want: Vec<u32> = brute.iter().map(|c| c.0).collect();
            assert_eq!(got, want);
        }
        let scaled = states(users.mapv(|x| 3.5 * x), comps);
        let again = predict_step(&scaled, pos.view(), &all, 1, usize::MAX, true).unwrap();
        for (a, b) in preds.iter().zip(&again) {
            let ids = |p: &RankedPrediction| p.companies.iter().map(|c| c.0).collect::<Vec<_>>();
            assert_eq!(ids(a), ids(b));
        }
        assert!(matches!(
            predict_step(&s, pos.view(), &[UserId(9)], 1, 1, false),
            Err(CaperError::UnknownTestUser(9))
        ));
    }

    fn pred(user: u32, companies: &[u32], positions: &[u32]) -> RankedPrediction {
        RankedPrediction {
            user: UserId(user),
            horizon: 1,
            companies: companies.iter().map(|&c| (CompanyId(c), 0.0)).collect(),
            positions: positions.iter().map(|&p| (PositionId(p), 0.0)).collect(),
        }
    }

    #[test]
    fn inferred_snapshot_uses_top_two_companies_and_top_position() {
        let snap = build_inferred_snapshot(&[pred(0, &[4, 2, 1], &[3, 0])], 2021).unwrap();
        assert!(snap.inferred);
        assert_eq!(
            snap.careers,
            vec![
                Career::new(UserId(0), PositionId(3), CompanyId(2), 2021),
                Career::new(UserId(0), PositionId(3), CompanyId(4), 2021),
            ]
        );
        let many: Vec<_> = (0..100).map(|u| pred(u, &[1, 0], &[0])).collect();
        let snap = build_inferred_snapshot(&many, 2021).unwrap();
        assert_eq!(snap.careers.len(), 200);
        let mut forward: Vec<_> = snap.by_user.iter().flat_map(|(u, l)| l.iter().map(move |(c, p)| (*u, *c, *p))).collect();
        let mut backward: Vec<_> = snap.by_company.iter().flat_map(|(c, l)| l.iter().map(move |(u, p)| (*u, *c, *p))).collect();
        forward.sort();
        backward.sort();
        assert_eq!(forward, backward);
        assert!(matches!(
            build_inferred_snapshot(&[pred(7, &[1], &[0])], 2021),
            Err(CaperError::InsufficientCandidates { user: 7 })
        ));
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            d: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_horizon_equals_predict_step_on_final_states() {
        let tkg = toy_tkg();
        let cfg = cfg();
        let params = cfg.init_params(&tkg);
        let users: BTreeSet<UserId> = (0..5).map(UserId).collect();
        let out = multi_step_inference(&params, &tkg, &users, 1, &cfg).unwrap();
        let (_, s) = Rollout::forward(tkg.snapshots(), &params, &cfg.model(), tkg.len(), |_, _| Ok(())).unwrap();
        let all: Vec<UserId> = users.iter().copied().collect();
        let direct = predict_step(&s, params.pos_emb.view(), &all, 1, usize::MAX, false).unwrap();
        assert_eq!(out.predictions, vec![direct]);
        assert!(out.inferred.is_empty());
    }

    #[test]
    fn later_horizons_rerun_the_encoders_on_inferred_snapshots() {
        let tkg = toy_tkg();
        let cfg = cfg();
        let params = cfg.init_params(&tkg);
        let users: BTreeSet<UserId> = [UserId(0), UserId(3)].into();
        let out = multi_step_inference(&params, &tkg, &users, 3, &cfg).unwrap();
        assert_eq!(out.fingerprint_before, out.fingerprint_after);
        assert_eq!(out.inferred.len(), 2);
        assert_eq!(out.inferred[0].year, tkg.last_year() + 1);

        // Manual re-run: encode the real snapshots, then the inferred one.
        let model = ModelConfig {
            layers: 1,
            norm: NormMode::Degree,
            cell: CellKind::PaperLstm,
            layer0: Layer0Source::PreviousState,
            evolve_users: true,
            evolve_companies: true,
            dynamic_positions: false,
            score_from: ScoreFrom::PreviousYear,
            evolve_inactive: false,
            parallel: false,
        };
        let mut snaps = tkg.snapshots().to_vec();
        let expected_first = build_inferred_snapshot(&out.predictions[0], tkg.last_year() + 1).unwrap();
        assert_eq!(out.inferred[0], expected_first);
        snaps.push(expected_first);
        let (_, s) = Rollout::forward(&snaps, &params, &model, snaps.len(), |_, _| Ok(())).unwrap();
        let all: Vec<UserId> = users.iter().copied().collect();
        let direct = predict_step(&s, params.pos_emb.view(), &all, 2, usize::MAX, false).unwrap();
        assert_eq!(out.predictions[1], direct);
        for snap in &out.inferred {
            assert_eq!(snap.careers.len(), 2 * users.len());
        }
    }

    #[test]
    fn predictions_round_trip_through_csv() {
        let tkg = toy_tkg();
        let cfg = cfg();
        let params = cfg.init_params(&tkg);
        let users: BTreeSet<UserId> = (0..5).map(UserId).collect();
        let out = multi_step_inference(&params, &tkg, &users, 2, &cfg).unwrap();
        let mut buf = Vec::new();
        write_predictions(&out.predictions, tkg.ids(), usize::MAX, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("user_id,horizon,kind,rank,entity_id,score\n"));
        let back = read_predictions(buf.as_slice(), tkg.ids()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in out.predictions.iter().flatten().zip(back.iter().flatten()) {
            assert_eq!(a.user, b.user);
            let ids = |p: &RankedPrediction| p.companies.iter().map(|c| c.0).collect::<Vec<_>>();
            assert_eq!(ids(a), ids(b));
        }
        let mut top = Vec::new();
        write_predictions(&out.predictions, tkg.ids(), 2, &mut top).unwrap();
        assert_eq!(String::from_utf8(top).unwrap().lines().count(), 1 + 2 * 5 * 2 * 2);
    }
}
