//! Candidate sets for the likelihood: the positive plus every entity of the
//! same kind the user has never held before the career's year.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CaperError, Result};
use crate::numeric::derive_seed;
use crate::tkg::{EntityKind, TkgSnapshot, UserId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeSampling {
    /// Every eligible entity.
    Full,
    /// A seeded uniform sample of at most `n` eligible entities.
    Sampled(usize),
}

/// Which candidate kind a set ranks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TargetKind {
    Company,
    Position,
}

impl TargetKind {
    pub const BOTH: [TargetKind; 2] = [TargetKind::Company, TargetKind::Position];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Company => "company",
            TargetKind::Position => "position",
        }
    }

    pub fn entity(self) -> EntityKind {
        match self {
            TargetKind::Company => EntityKind::Company,
            TargetKind::Position => EntityKind::Position,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSet {
    pub user: UserId,
    /// Snapshot index of the career.
    pub year: usize,
    pub positive: u32,
    pub negatives: Vec<u32>,
}

impl CandidateSet {
    /// Positive first, then negatives in ascending id order.
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        std::iter::once(self.positive).chain(self.negatives.iter().copied())
    }

    pub fn len(&self) -> usize {
        1 + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// First snapshot index at which each user held each company and position.
#[derive(Clone, Debug, Default)]
pub struct CareerHistory {
    companies: BTreeMap<UserId, BTreeMap<u32, usize>>,
    positions: BTreeMap<UserId, BTreeMap<u32, usize>>,
}

impl CareerHistory {
    pub fn new(snapshots: &[TkgSnapshot]) -> Self {
        let mut h = Self::default();
        for (m, snap) in snapshots.iter().enumerate() {
            for c in &snap.careers {
                h.companies.entry(c.user).or_default().entry(c.company.0).or_insert(m);
                h.positions.entry(c.user).or_default().entry(c.position.0).or_insert(m);
            }
        }
        h
    }

    /// Entities of `kind` held by `user` strictly before snapshot `year`.
    pub fn before(&self, user: UserId, year: usize, kind: TargetKind) -> BTreeSet<u32> {
        let map = match kind {
            TargetKind::Company => &self.companies,
            TargetKind::Position => &self.positions,
        };
        map.get(&user)
            .map(|m| m.iter().filter(|(_, &first)| first < year).map(|(&e, _)| e).collect())
            .unwrap_or_default()
    }
}

fn sample_seed(seed: u64, epoch: u64, user: UserId, year: usize, kind: TargetKind) -> u64 {
    derive_seed(&[seed, epoch, u64::from(user.0), year as u64, kind as u64])
}

/// Builds the candidate set of one career. `epoch` varies the sample in
/// sampled mode and is ignored otherwise.
#[allow(clippy::too_many_arguments)]
pub fn build_candidates(
    user: UserId,
    year: usize,
    kind: TargetKind,
    positive: u32,
    history: &CareerHistory,
    vocab: usize,
    mode: NegativeSampling,
    seed: u64,
    epoch: u64,
) -> Result<CandidateSet> {
    if vocab == 0 {
        return Err(CaperError::EmptyVocabulary { kind: kind.entity() });
    }
    let held = history.before(user, year, kind);
    let eligible: Vec<u32> = (0..vocab as u32).filter(|e| *e != positive && !held.contains(e)).collect();
    let negatives = match mode {
        NegativeSampling::Sampled(n) if n < eligible.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, epoch, user, year, kind));
            let mut picked: Vec<u32> = sample(&mut rng, eligible.len(), n).into_iter().map(|i| eligible[i]).collect();
            picked.sort_unstable();
            picked
        }
        _ => eligible,
    };
    Ok(CandidateSet {
        user,
        year,
        positive,
        negatives,
    })
}
