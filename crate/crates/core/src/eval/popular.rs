//! Frequency baseline: one fixed ranking served to every user.

use std::collections::BTreeSet;

use crate::error::{CaperError, Result};
use crate::inference::RankedPrediction;
use crate::tkg::{CompanyId, PositionId, Tkg, UserId};

#[derive(Clone, Debug, PartialEq)]
pub struct PopularRanking {
    /// `(company, training careers)`, most frequent first, ties by id.
    pub companies: Vec<(CompanyId, usize)>,
    pub positions: Vec<(PositionId, usize)>,
}

fn ranked(counts: Vec<usize>) -> Vec<(u32, usize)> {
    let mut r: Vec<(u32, usize)> = counts.into_iter().enumerate().map(|(i, c)| (i as u32, c)).collect();
    r.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    r
}

pub fn popular_baseline(train: &Tkg) -> Result<PopularRanking> {
    if train.num_careers() == 0 {
        return Err(CaperError::EmptyInput("training careers"));
    }
    let mut companies = vec![0usize; train.num_companies()];
    let mut positions = vec![0usize; train.num_positions()];
    for c in train.careers() {
        companies[c.company.index()] += 1;
        positions[c.position.index()] += 1;
    }
    Ok(PopularRanking {
        companies: ranked(companies).into_iter().map(|(i, n)| (CompanyId(i), n)).collect(),
        positions: ranked(positions).into_iter().map(|(i, n)| (PositionId(i), n)).collect(),
    })
}

impl PopularRanking {
    /// The same ranking for every user and horizon, counts as scores.
    pub fn predictions(&self, users: &BTreeSet<UserId>, horizons: usize) -> Vec<Vec<RankedPrediction>> {
        (1..=horizons)
            .map(|h| {
                users
                    .iter()
                    .map(|&user| RankedPrediction {
                        user,
                        horizon: h,
                        companies: self.companies.iter().map(|&(c, n)| (c, n as f64)).collect(),
                        positions: self.positions.iter().map(|&(p, n)| (p, n as f64)).collect(),
                    })
                    .collect()
            })
            .collect()
    }
}
