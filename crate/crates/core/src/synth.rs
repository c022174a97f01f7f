//! Seeded synthetic career trajectories with planted, learnable movement.
//!
//! Every user holds one or more parallel jobs ("tracks") for the whole time
//! window. Each year a track may move. The next company is drawn from a
//! kernel indexed by the current (position, company) pair; the next position
//! from a kernel indexed by the current position. Each kernel row has one
//! planted successor scoring above the noise; `sharpness` scales the scores
//! before the softmax, so an infinite sharpness always picks the successor.
//! Company rows drift: each year the noise is mixed with fresh noise and the
//! successor is redrawn with probability `drift_rate`.
//!
//! Company popularity is Zipf-distributed with a separate ranking per
//! position, so where a track goes next depends on the role it holds.

use std::collections::BTreeMap;
use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CaperError, Result};
use crate::numeric::derive_seed;
use crate::par::map_range;
use crate::tkg::RawRecord;

/// Score margin of the planted successor over the `[0, 1)` noise.
const SUCCESSOR_BONUS: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_companies: usize,
    pub n_positions: usize,
    pub n_years: usize,
    /// Mean concurrent careers per user and year.
    pub careers_per_year: f64,
    /// Softmax inverse temperature of the kernels; infinity means argmax.
    #[serde(with = "sharpness_serde")]
    pub sharpness: f64,
    pub drift_rate: f64,
    /// Mean years between moves. Exact when sharpness is infinite.
    pub tenure_years: f64,
    pub start_year: i32,
    pub seed: u64,
    pub parallel: bool,
}

mod sharpness_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(n) => Ok(n),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 300,
            n_companies: 40,
            n_positions: 12,
            n_years: 20,
            careers_per_year: 2.37,
            sharpness: 4.0,
            drift_rate: 0.1,
            tenure_years: 3.0,
            start_year: 2000,
            seed: 42,
            parallel: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(CaperError::Config(m.to_owned()));
        if self.n_users == 0 || self.n_companies == 0 || self.n_positions == 0 || self.n_years == 0 {
            return fail("synthetic counts must all be at least 1");
        }
        if !(self.careers_per_year >= 1.0 && self.careers_per_year.is_finite()) {
            return fail("careers per year must be a finite number of at least 1");
        }
        if self.sharpness.is_nan() || self.sharpness < 0.0 {
            return fail("sharpness must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.drift_rate) {
            return fail("drift rate must lie in [0, 1]");
        }
        if !(self.tenure_years >= 1.0 && self.tenure_years.is_finite()) {
            return fail("tenure must be at least 1 year");
        }
        Ok(())
    }
}

/// Kernels of one year.
#[derive(Clone, Debug, PartialEq)]
struct CompanyKernel {
    /// `[position][company] -> (successor, noise over companies)`
    rows: Vec<Vec<(usize, Vec<f64>)>>,
}

/// The planted transition structure, year by year.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthWorld {
    company: Vec<CompanyKernel>,
    /// `[position] -> (successor, noise over positions)`
    position: Vec<(usize, Vec<f64>)>,
    /// `[position][popularity rank] -> company`
    company_rank: Vec<Vec<usize>>,
    position_popularity: Vec<f64>,
}

fn zipf(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 / (i + 1) as f64).collect()
}

/// A popularity-weighted draw through `ranking` that differs from `current`.
fn successor(rng: &mut ChaCha8Rng, popularity: &WeightedIndex<f64>, ranking: &[usize], current: usize) -> usize {
    if ranking.len() == 1 {
        return ranking[0];
    }
    loop {
        let s = ranking[popularity.sample(rng)];
        if s != current {
            return s;
        }
    }
}

impl SynthWorld {
    pub fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0x5EED]));
        let (nc, np) = (cfg.n_companies, cfg.n_positions);
        let position_popularity = zipf(np);
        let cdist = WeightedIndex::new(zipf(nc)).expect("positive weights");
        let pdist = WeightedIndex::new(&position_popularity).expect("positive weights");
        let noise = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.gen::<f64>()).collect::<Vec<f64>>();
        let company_rank: Vec<Vec<usize>> = (0..np)
            .map(|_| {
                let mut r: Vec<usize> = (0..nc).collect();
                r.shuffle(&mut rng);
                r
            })
            .collect();
        let identity: Vec<usize> = (0..np).collect();

        let position = (0..np)
            .map(|p| (successor(&mut rng, &pdist, &identity, p), noise(&mut rng, np)))
            .collect();
        let mut kernel = CompanyKernel {
            rows: (0..np)
                .map(|p| {
                    (0..nc)
                        .map(|c| (successor(&mut rng, &cdist, &company_rank[p], c), noise(&mut rng, nc)))
                        .collect()
                })
                .collect(),
        };
        let mut company = vec![kernel.clone()];
        for _ in 1..cfg.n_years {
            if cfg.drift_rate > 0.0 {
                for (p, rows) in kernel.rows.iter_mut().enumerate() {
                    for (c, row) in rows.iter_mut().enumerate() {
                        for v in row.1.iter_mut() {
                            *v = (1.0 - cfg.drift_rate) * *v + cfg.drift_rate * rng.gen::<f64>();
                        }
                        if rng.gen::<f64>() < cfg.drift_rate {
                            row.0 = successor(&mut rng, &cdist, &company_rank[p], c);
                        }
                    }
                }
            }
            company.push(kernel.clone());
        }
        Self {
            company,
            position,
            company_rank,
            position_popularity,
        }
    }

    /// Most likely next company for a track at (`position`, `company`) in year offset `year`.
    pub fn planted_company(&self, year: usize, position: usize, company: usize) -> usize {
        self.company[year].rows[position][company].0
    }

    pub fn planted_position(&self, position: usize) -> usize {
        self.position[position].0
    }

    fn draw(rng: &mut ChaCha8Rng, succ: usize, noise: &[f64], sharpness: f64) -> usize {
        if sharpness.is_infinite() {
            return succ;
        }
        let scores: Vec<f64> = noise
            .iter()
            .enumerate()
            .map(|(i, n)| sharpness * (n + if i == succ { SUCCESSOR_BONUS } else { 0.0 }))
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        WeightedIndex::new(&weights).expect("finite positive weights").sample(rng)
    }

    fn next(&self, rng: &mut ChaCha8Rng, year: usize, position: usize, company: usize, sharpness: f64) -> (usize, usize) {
        let (succ, noise) = &self.company[year].rows[position][company];
        let c = Self::draw(rng, *succ, noise, sharpness);
        let (psucc, pnoise) = &self.position[position];
        let p = Self::draw(rng, *psucc, pnoise, sharpness);
        (c, p)
    }
}

/// `(company, position)` per track per year for one user.
fn user_tracks(cfg: &SynthConfig, world: &SynthWorld, user: usize) -> Vec<Vec<(usize, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, user as u64]));
    let whole = cfg.careers_per_year.floor() as usize;
    let extra = usize::from(rng.gen::<f64>() < cfg.careers_per_year.fract());
    let cdist = WeightedIndex::new(zipf(cfg.n_companies)).expect("positive weights");
    let pdist = WeightedIndex::new(&world.position_popularity).expect("positive weights");
    let tenure = cfg.tenure_years.round().max(1.0) as usize;
    (0..whole + extra)
        .map(|_| {
            let p = pdist.sample(&mut rng);
            let mut state = (world.company_rank[p][cdist.sample(&mut rng)], p);
            let offset = rng.gen_range(0..tenure);
            let mut years = vec![state];
            for y in 1..cfg.n_years {
                let moves = if cfg.sharpness.is_infinite() {
                    (y + offset) % tenure == 0
                } else {
                    rng.gen::<f64>() < 1.0 / cfg.tenure_years
                };
                if moves {
                    state = world.next(&mut rng, y, state.1, state.0, cfg.sharpness);
                }
                years.push(state);
            }
            years
        })
        .collect()
}

/// Generates raw records, one per uninterrupted stint.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<RawRecord>> {
    generate_with_world(cfg).map(|(r, _)| r)
}

pub fn generate_with_world(cfg: &SynthConfig) -> Result<(Vec<RawRecord>, SynthWorld)> {
    cfg.validate()?;
    let world = SynthWorld::new(cfg);
    let per_user = map_range(cfg.n_users, cfg.parallel, |u| {
        // Merge consecutive years of identical (company, position) into stints.
        let mut held: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for track in user_tracks(cfg, &world, u) {
            for (y, pair) in track.into_iter().enumerate() {
                held.entry(pair).or_default().push(y);
            }
        }
        let mut records = Vec::new();
        for ((c, p), mut years) in held {
            years.sort_unstable();
            years.dedup();
            let mut start = years[0];
            for w in 0..years.len() {
                let end_of_run = w + 1 == years.len() || years[w + 1] != years[w] + 1;
                if end_of_run {
                    records.push(RawRecord::new(
                        &format!("u{u}"),
                        &format!("c{c}"),
                        &format!("p{p}"),
                        cfg.start_year + start as i32,
                        cfg.start_year + years[w] as i32,
                    ));
                    if w + 1 < years.len() {
                        start = years[w + 1];
                    }
                }
            }
        }
        records.sort_by(|a, b| (a.start_year, &a.company, &a.position).cmp(&(b.start_year, &b.company, &b.position)));
        records
    });
    Ok((per_user.into_iter().flatten().collect(), world))
}

/// JSON sidecar recording the configuration and output size.
pub fn write_manifest<W: Write>(cfg: &SynthConfig, records: usize, writer: W) -> Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        generator: &'static str,
        config: &'a SynthConfig,
        records: usize,
    }
    serde_json::to_writer_pretty(
        writer,
        &Manifest {
            generator: concat!("caper-synth ", env!("CARGO_PKG_VERSION")),
            config: cfg,
            records,
        },
    )?;
    Ok(())
}
