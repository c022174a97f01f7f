//! Career records, entity interning and the yearly snapshot sequence.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{CaperError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    User,
    Company,
    Position,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Company => "company",
            EntityKind::Position => "position",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! entity_id {
    ($(#[$doc:meta])* $name:ident, $kind:expr) => {
        $(#[$doc])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub struct $name(pub u32);

        impl $name {
            pub const KIND: EntityKind = $kind;

            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }

            #[inline]
            pub fn from_index(index: usize) -> Self {
                Self(index as u32)
            }

            pub fn entity(self) -> EntityId {
                EntityId { kind: $kind, index: self.0 }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}#{}", $kind, self.0)
            }
        }
    };
}

entity_id!(
    /// Dense index of an interned user.
    UserId,
    EntityKind::User
);
entity_id!(
    /// Dense index of an interned company.
    CompanyId,
    EntityKind::Company
);
entity_id!(
    /// Dense index of an interned position (job title).
    PositionId,
    EntityKind::Position
);

/// A kind-tagged entity index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId {
    pub kind: EntityKind,
    pub index: u32,
}

/// One year of one job: the atomic fact of the graph.
///
/// Field order gives the natural sort `(user, position, company, year)`; most
/// code sorts by year first through [`Career::year_key`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Career {
    pub user: UserId,
    pub position: PositionId,
    pub company: CompanyId,
    pub year: i32,
}

impl Career {
    pub fn new(user: UserId, position: PositionId, company: CompanyId, year: i32) -> Self {
        Self {
            user,
            position,
            company,
            year,
        }
    }

    fn year_key(&self) -> (i32, UserId, CompanyId, PositionId) {
        (self.year, self.user, self.company, self.position)
    }
}

/// A raw employment record as it appears in the input CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub user: String,
    pub company: String,
    pub position: String,
    pub start_year: i32,
    pub end_year: i32,
}

impl RawRecord {
    pub fn new(user: &str, company: &str, position: &str, start_year: i32, end_year: i32) -> Self {
        Self {
            user: user.to_owned(),
            company: company.to_owned(),
            position: position.to_owned(),
            start_year,
            end_year,
        }
    }
}

/// Bijective raw-string <-> dense-index table for one entity kind.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the existing index for `name` or assigns the next free one.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Writes the table as `index,<kind>_id`.
    pub fn write_csv<W: Write>(&self, kind: EntityKind, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", &format!("{}_id", kind.as_str())])?;
        for (i, name) in self.names.iter().enumerate() {
            w.write_record([i.to_string().as_str(), name.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`Interner::write_csv`]. Indices must be dense
    /// and in order.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut interner = Interner::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let malformed = |reason: &str| CaperError::MalformedRecord {
                line: row + 2,
                reason: reason.to_owned(),
            };
            let idx: usize = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| malformed("bad index"))?;
            let name = rec.get(1).ok_or_else(|| malformed("missing id"))?;
            if idx != interner.len() || interner.get(name).is_some() {
                return Err(malformed("indices must be dense and unique"));
            }
            interner.intern(name);
        }
        Ok(interner)
    }
}

/// The three interning tables.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMaps {
    pub users: Interner,
    pub companies: Interner,
    pub positions: Interner,
}

impl IdMaps {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn table(&self, kind: EntityKind) -> &Interner {
        match kind {
            EntityKind::User => &self.users,
            EntityKind::Company => &self.companies,
            EntityKind::Position => &self.positions,
        }
    }

    pub fn name(&self, kind: EntityKind, index: usize) -> &str {
        self.table(kind).name(index)
    }

    /// Looks up all three ids of a raw quadruple without interning.
    pub fn resolve(&self, user: &str, company: &str, position: &str) -> Option<(UserId, CompanyId, PositionId)> {
        Some((
            UserId(self.users.get(user)?),
            CompanyId(self.companies.get(company)?),
            PositionId(self.positions.get(position)?),
        ))
    }
}

/// Expands start/end-year records into one career per covered year.
///
/// Identifiers are interned into `ids` in order of first appearance, so
/// ingesting the same records twice yields the same assignment. Duplicate
/// quadruples collapse to one; the output is sorted by year, then user,
/// company and position.
pub fn expand_durations(records: &[RawRecord], ids: &mut IdMaps) -> Result<Vec<Career>> {
    let mut out = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let malformed = |reason: String| CaperError::MalformedRecord { line: i + 1, reason };
        if rec.user.trim().is_empty() || rec.company.trim().is_empty() || rec.position.trim().is_empty() {
            return Err(malformed("empty identifier".into()));
        }
        if rec.start_year > rec.end_year {
            return Err(malformed(format!(
                "start year {} after end year {}",
                rec.start_year, rec.end_year
            )));
        }
        let user = UserId(ids.users.intern(&rec.user));
        let company = CompanyId(ids.companies.intern(&rec.company));
        let position = PositionId(ids.positions.intern(&rec.position));
        for year in rec.start_year..=rec.end_year {
            out.push(Career::new(user, position, company, year));
        }
    }
    out.sort_by_key(Career::year_key);
    out.dedup();
    Ok(out)
}

/// All careers co-occurring in one year, with both adjacency views.
#[derive(Clone, Debug, PartialEq)]
pub struct TkgSnapshot {
    pub year: i32,
    pub careers: Vec<Career>,
    /// `user -> [(company, position)]`, sorted by neighbour id.
    pub by_user: BTreeMap<UserId, Vec<(CompanyId, PositionId)>>,
    /// `company -> [(user, position)]`, sorted by neighbour id.
    pub by_company: BTreeMap<CompanyId, Vec<(UserId, PositionId)>>,
    /// Set for snapshots synthesised from predictions.
    pub inferred: bool,
}

impl TkgSnapshot {
    /// Builds a snapshot; every career must carry `year`. Duplicates collapse.
    pub fn new(year: i32, careers: impl IntoIterator<Item = Career>, inferred: bool) -> Self {
        let mut careers: Vec<Career> = careers.into_iter().collect();
        debug_assert!(careers.iter().all(|c| c.year == year));
        careers.sort_by_key(Career::year_key);
        careers.dedup();
        let mut by_user: BTreeMap<UserId, Vec<(CompanyId, PositionId)>> = BTreeMap::new();
        let mut by_company: BTreeMap<CompanyId, Vec<(UserId, PositionId)>> = BTreeMap::new();
        for c in &careers {
            by_user.entry(c.user).or_default().push((c.company, c.position));
            by_company.entry(c.company).or_default().push((c.user, c.position));
        }
        for v in by_user.values_mut() {
            v.sort_unstable();
        }
        for v in by_company.values_mut() {
            v.sort_unstable();
        }
        Self {
            year,
            careers,
            by_user,
            by_company,
            inferred,
        }
    }

    pub fn empty(year: i32) -> Self {
        Self::new(year, std::iter::empty(), false)
    }

    pub fn is_empty(&self) -> bool {
        self.careers.is_empty()
    }

    /// Careers per position, sorted by `(user, company)`.
    pub fn by_position(&self) -> BTreeMap<PositionId, Vec<(UserId, CompanyId)>> {
        let mut map: BTreeMap<PositionId, Vec<(UserId, CompanyId)>> = BTreeMap::new();
        for c in &self.careers {
            map.entry(c.position).or_default().push((c.user, c.company));
        }
        for v in map.values_mut() {
            v.sort_unstable();
        }
        map
    }
}

/// One user's careers in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct CareerTrajectory {
    pub user: UserId,
    pub careers: Vec<Career>,
    /// Last year minus first year.
    pub span: i32,
}

/// A contiguous, year-ordered sequence of snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct Tkg {
    first_year: i32,
    snapshots: Vec<TkgSnapshot>,
    ids: IdMaps,
}

impl Tkg {
    /// Groups careers into one snapshot per year between the first and last
    /// year inclusive. Years without careers get empty snapshots so that
    /// snapshot indices stay aligned with calendar years.
    pub fn build_snapshots(careers: &[Career], ids: IdMaps) -> Result<Self> {
        let (Some(min), Some(max)) = (
            careers.iter().map(|c| c.year).min(),
            careers.iter().map(|c| c.year).max(),
        ) else {
            return Err(CaperError::EmptyInput("careers"));
        };
        let mut buckets: Vec<Vec<Career>> = vec![Vec::new(); (max - min + 1) as usize];
        for c in careers {
            buckets[(c.year - min) as usize].push(*c);
        }
        let snapshots = buckets
            .into_iter()
            .enumerate()
            .map(|(i, b)| TkgSnapshot::new(min + i as i32, b, false))
            .collect();
        Ok(Self {
            first_year: min,
            snapshots,
            ids,
        })
    }

    /// Assembles a Tkg from ready-made snapshots. Years must be contiguous.
    pub fn from_snapshots(snapshots: Vec<TkgSnapshot>, ids: IdMaps) -> Result<Self> {
        let first = snapshots.first().ok_or(CaperError::EmptyInput("snapshots"))?.year;
        for (i, s) in snapshots.iter().enumerate() {
            if s.year != first + i as i32 {
                return Err(CaperError::Config(format!(
                    "snapshot years must be contiguous, found {} at position {i}",
                    s.year
                )));
            }
        }
        Ok(Self {
            first_year: first,
            snapshots,
            ids,
        })
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    pub fn last_year(&self) -> i32 {
        self.first_year + self.snapshots.len() as i32 - 1
    }

    pub fn snapshots(&self) -> &[TkgSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn ids(&self) -> &IdMaps {
        &self.ids
    }

    pub fn num_users(&self) -> usize {
        self.ids.users.len()
    }

    pub fn num_companies(&self) -> usize {
        self.ids.companies.len()
    }

    pub fn num_positions(&self) -> usize {
        self.ids.positions.len()
    }

    pub fn careers(&self) -> impl Iterator<Item = &Career> + '_ {
        self.snapshots.iter().flat_map(|s| s.careers.iter())
    }

    pub fn num_careers(&self) -> usize {
        self.snapshots.iter().map(|s| s.careers.len()).sum()
    }

    pub fn trajectories(&self) -> BTreeMap<UserId, CareerTrajectory> {
        let mut by_user: BTreeMap<UserId, Vec<Career>> = BTreeMap::new();
        for c in self.careers() {
            by_user.entry(c.user).or_default().push(*c);
        }
        by_user
            .into_iter()
            .map(|(user, careers)| {
                let span = careers.last().map_or(0, |l| l.year) - careers.first().map_or(0, |f| f.year);
                (user, CareerTrajectory { user, careers, span })
            })
            .collect()
    }

    /// A single-snapshot graph with every distinct (user, company, position)
    /// triple, dated at the last year. Used by the static-KG ablation.
    pub fn collapsed(&self) -> Tkg {
        let year = self.last_year();
        let snapshot = TkgSnapshot::new(
            year,
            self.careers().map(|c| Career { year, ..*c }),
            false,
        );
        Tkg {
            first_year: year,
            snapshots: vec![snapshot],
            ids: self.ids.clone(),
        }
    }
}

/// Ground truth for the final `horizon` years, keyed by `(user, year)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TestSet {
    pub first_year: i32,
    pub horizon: usize,
    pub careers: BTreeMap<(UserId, i32), Vec<Career>>,
    /// Test careers dropped because an entity never occurs in training.
    pub dropped: usize,
}

impl TestSet {
    pub fn num_careers(&self) -> usize {
        self.careers.values().map(Vec::len).sum()
    }

    /// 1-based horizon step of a calendar year.
    pub fn horizon_of(&self, year: i32) -> usize {
        (year - self.first_year + 1) as usize
    }

    pub fn year_of(&self, horizon: usize) -> i32 {
        self.first_year + horizon as i32 - 1
    }

    pub fn iter(&self) -> impl Iterator<Item = &Career> + '_ {
        self.careers.values().flatten()
    }
}

/// Splits off the final `horizon` years as the test window.
///
/// The returned training graph re-interns entities so that only those seen in
/// training remain (relative order preserved). Test careers that mention an
/// entity unseen in training are dropped with a warning.
pub fn split_train_test(tkg: &Tkg, horizon: usize) -> Result<(Tkg, TestSet)> {
    if horizon == 0 {
        return Err(CaperError::Config("horizon must be at least 1".into()));
    }
    let n = tkg.len();
    if horizon >= n {
        return Err(CaperError::HorizonTooLarge {
            horizon,
            snapshots: n,
        });
    }
    let (train, test) = tkg.snapshots.split_at(n - horizon);

    let mut used_users = BTreeSet::new();
    let mut used_companies = BTreeSet::new();
    let mut used_positions = BTreeSet::new();
    for c in train.iter().flat_map(|s| &s.careers) {
        used_users.insert(c.user.index());
        used_companies.insert(c.company.index());
        used_positions.insert(c.position.index());
    }
    let mut ids = IdMaps::new();
    let mut user_map = HashMap::new();
    let mut company_map = HashMap::new();
    let mut position_map = HashMap::new();
    for &u in &used_users {
        user_map.insert(u, UserId(ids.users.intern(tkg.ids.users.name(u))));
    }
    for &c in &used_companies {
        company_map.insert(c, CompanyId(ids.companies.intern(tkg.ids.companies.name(c))));
    }
    for &p in &used_positions {
        position_map.insert(p, PositionId(ids.positions.intern(tkg.ids.positions.name(p))));
    }
    let remap = |c: &Career| -> Option<Career> {
        Some(Career::new(
            *user_map.get(&c.user.index())?,
            *position_map.get(&c.position.index())?,
            *company_map.get(&c.company.index())?,
            c.year,
        ))
    };

    let snapshots = train
        .iter()
        .map(|s| TkgSnapshot::new(s.year, s.careers.iter().filter_map(remap), s.inferred))
        .collect();
    let train_tkg = Tkg {
        first_year: tkg.first_year,
        snapshots,
        ids,
    };

    let mut test_set = TestSet {
        first_year: test[0].year,
        horizon,
        ..TestSet::default()
    };
    for c in test.iter().flat_map(|s| &s.careers) {
        match remap(c) {
            Some(m) => test_set.careers.entry((m.user, m.year)).or_default().push(m),
            None => test_set.dropped += 1,
        }
    }
    if test_set.dropped > 0 {
        log::warn!(
            "dropped {} test careers mentioning entities absent from training",
            test_set.dropped
        );
    }
    Ok((train_tkg, test_set))
}

/// Users with at least one career inside the test window.
pub fn select_test_users(test: &TestSet) -> BTreeSet<UserId> {
    test.careers.keys().map(|(u, _)| *u).collect()
}

/// Parses the raw input CSV. Accepts both the start/end form
/// (`user_id,company_id,position_id,start_year,end_year`) and the expanded
/// form (`user_id,company_id,position_id,year`).
pub fn read_records<R: Read>(reader: R) -> Result<Vec<RawRecord>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let malformed = |line: usize, reason: String| CaperError::MalformedRecord { line, reason };
    let (Some(u), Some(c), Some(p)) = (col("user_id"), col("company_id"), col("position_id")) else {
        return Err(malformed(1, "header must name user_id, company_id, position_id".into()));
    };
    let years = match (col("start_year"), col("end_year"), col("year")) {
        (Some(s), Some(e), _) => (s, e),
        (_, _, Some(y)) => (y, y),
        _ => return Err(malformed(1, "header must name start_year/end_year or year".into())),
    };
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |i: usize| rec.get(i).ok_or_else(|| malformed(line, format!("missing column {i}")));
        let year = |i: usize| -> Result<i32> {
            let s = field(i)?;
            s.parse()
                .map_err(|_| malformed(line, format!("year `{s}` is not an integer")))
        };
        out.push(RawRecord {
            user: field(u)?.to_owned(),
            company: field(c)?.to_owned(),
            position: field(p)?.to_owned(),
            start_year: year(years.0)?,
            end_year: year(years.1)?,
        });
    }
    Ok(out)
}

/// Writes raw records in the start/end CSV form.
pub fn write_records<W: Write>(records: &[RawRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", "company_id", "position_id", "start_year", "end_year"])?;
    for r in records {
        w.write_record([
            r.user.as_str(),
            r.company.as_str(),
            r.position.as_str(),
            &r.start_year.to_string(),
            &r.end_year.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes careers in the expanded CSV form using raw identifiers.
pub fn write_careers<'a, W: Write>(
    careers: impl IntoIterator<Item = &'a Career>,
    ids: &IdMaps,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", "company_id", "position_id", "year"])?;
    for c in careers {
        w.write_record([
            ids.users.name(c.user.index()),
            ids.companies.name(c.company.index()),
            ids.positions.name(c.position.index()),
            &c.year.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads expanded careers against fixed interning tables. Rows mentioning an
/// unknown identifier are skipped and counted.
pub fn read_careers<R: Read>(reader: R, ids: &IdMaps) -> Result<(Vec<Career>, usize)> {
    let records = read_records(reader)?;
    let mut careers = Vec::with_capacity(records.len());
    let mut unknown = 0;
    for r in &records {
        let Some((u, c, p)) = ids.resolve(&r.user, &r.company, &r.position) else {
            unknown += 1;
            continue;
        };
        for year in r.start_year..=r.end_year {
            careers.push(Career::new(u, p, c, year));
        }
    }
    careers.sort_by_key(Career::year_key);
    careers.dedup();
    Ok((careers, unknown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig2_records() -> Vec<RawRecord> {
        vec![
            RawRecord::new("u1", "c7", "p10", 6, 7),
            RawRecord::new("u1", "c5", "p5", 7, 8),
        ]
    }

    #[test]
    fn overlapping_jobs_expand_to_four_careers() {
        let mut ids = IdMaps::new();
        let careers = expand_durations(&fig2_records(), &mut ids).unwrap();
        let named: BTreeSet<_> = careers
            .iter()
            .map(|c| {
                (
                    ids.users.name(c.user.index()).to_owned(),
                    ids.positions.name(c.position.index()).to_owned(),
                    ids.companies.name(c.company.index()).to_owned(),
                    c.year,
                )
            })
            .collect();
        let expected: BTreeSet<_> = [
            ("u1", "p10", "c7", 6),
            ("u1", "p10", "c7", 7),
            ("u1", "p5", "c5", 7),
            ("u1", "p5", "c5", 8),
        ]
        .into_iter()
        .map(|(u, p, c, y)| (u.to_owned(), p.to_owned(), c.to_owned(), y))
        .collect();
        assert_eq!(careers.len(), 4);
        assert_eq!(named, expected);
    }

    #[test]
    fn zero_length_interval_is_one_career() {
        let mut ids = IdMaps::new();
        let careers = expand_durations(&[RawRecord::new("u", "c", "p", 2015, 2015)], &mut ids).unwrap();
        assert_eq!(careers.len(), 1);
        assert_eq!(careers[0].year, 2015);
    }

    #[test]
    fn malformed_records_are_rejected() {
        let mut ids = IdMaps::new();
        let err = expand_durations(&[RawRecord::new("u", "c", "p", 2016, 2015)], &mut ids).unwrap_err();
        assert!(matches!(err, CaperError::MalformedRecord { line: 1, .. }));
        let err = expand_durations(&[RawRecord::new("u", " ", "p", 2015, 2015)], &mut ids).unwrap_err();
        assert!(matches!(err, CaperError::MalformedRecord { .. }));
    }

    #[test]
    fn interning_is_stable_across_ingests() {
        let recs = fig2_records();
        let mut a = IdMaps::new();
        let mut b = IdMaps::new();
        let ca = expand_durations(&recs, &mut a).unwrap();
        let cb = expand_durations(&recs, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
    }

    #[test]
    fn fig2_snapshots() {
        let mut ids = IdMaps::new();
        let careers = expand_durations(&fig2_records(), &mut ids).unwrap();
        let tkg = Tkg::build_snapshots(&careers, ids).unwrap();
        let sizes: Vec<_> = tkg.snapshots().iter().map(|s| (s.year, s.careers.len())).collect();
        assert_eq!(sizes, vec![(6, 1), (7, 2), (8, 1)]);
        let traj = tkg.trajectories();
        assert_eq!(traj[&UserId(0)].span, 2);
    }

    #[test]
    fn single_career_snapshot() {
        let c = Career::new(UserId(0), PositionId(0), CompanyId(0), 2000);
        let tkg = Tkg::build_snapshots(&[c], IdMaps::new()).unwrap();
        assert_eq!(tkg.len(), 1);
        assert_eq!(tkg.snapshots()[0].by_user.len(), 1);
        assert_eq!(tkg.snapshots()[0].by_company.len(), 1);
    }

    #[test]
    fn gaps_produce_empty_snapshots() {
        let cs = [
            Career::new(UserId(0), PositionId(0), CompanyId(0), 2000),
            Career::new(UserId(0), PositionId(0), CompanyId(0), 2003),
        ];
        let tkg = Tkg::build_snapshots(&cs, IdMaps::new()).unwrap();
        assert_eq!(tkg.len(), 4);
        assert!(tkg.snapshots()[1].is_empty() && tkg.snapshots()[2].is_empty());
        assert!(Tkg::build_snapshots(&[], IdMaps::new()).is_err());
    }

    fn tkg_with_years(years: std::ops::RangeInclusive<i32>) -> Tkg {
        let mut ids = IdMaps::new();
        let recs: Vec<_> = years
            .clone()
            .map(|y| RawRecord::new("a", &format!("c{}", y % 3), "p", y, y))
            .collect();
        let careers = expand_durations(&recs, &mut ids).unwrap();
        Tkg::build_snapshots(&careers, ids).unwrap()
    }

    #[test]
    fn split_1968_2020() {
        let tkg = tkg_with_years(1968..=2020);
        let (train, test) = split_train_test(&tkg, 5).unwrap();
        assert_eq!((train.first_year(), train.last_year()), (1968, 2015));
        assert_eq!(test.first_year, 2016);
        let test_years: BTreeSet<_> = test.careers.keys().map(|(_, y)| *y).collect();
        assert_eq!(test_years, (2016..=2020).collect());
    }

    #[test]
    fn minimal_split_and_errors() {
        let mut ids = IdMaps::new();
        let recs = vec![RawRecord::new("a", "c", "p", 1, 2)];
        let careers = expand_durations(&recs, &mut ids).unwrap();
        let tkg = Tkg::build_snapshots(&careers, ids).unwrap();
        let (train, test) = split_train_test(&tkg, 1).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(test.num_careers(), 1);
        assert!(matches!(
            split_train_test(&tkg, 2),
            Err(CaperError::HorizonTooLarge { horizon: 2, snapshots: 2 })
        ));
    }

    #[test]
    fn test_only_entities_are_dropped() {
        let mut ids = IdMaps::new();
        let recs = vec![
            RawRecord::new("a", "c1", "p1", 2000, 2002),
            RawRecord::new("b", "c2", "p1", 2002, 2002),
        ];
        let careers = expand_durations(&recs, &mut ids).unwrap();
        let tkg = Tkg::build_snapshots(&careers, ids).unwrap();
        let (train, test) = split_train_test(&tkg, 1).unwrap();
        assert_eq!(test.dropped, 1);
        assert_eq!(test.num_careers(), 1);
        assert_eq!(train.num_users(), 1);
        assert_eq!(train.num_companies(), 1);
    }

    #[test]
    fn fig4_test_user_selection() {
        let mut ids = IdMaps::new();
        let recs = vec![
            RawRecord::new("A", "Google", "swe", 2008, 2020),
            RawRecord::new("B", "EPFL", "prof", 2003, 2018),
            RawRecord::new("C", "Meta", "swe", 1999, 2010),
        ];
        let careers = expand_durations(&recs, &mut ids).unwrap();
        let tkg = Tkg::build_snapshots(&careers, ids).unwrap();
        let (train, test) = split_train_test(&tkg, 5).unwrap();
        let names: BTreeSet<_> = select_test_users(&test)
            .into_iter()
            .map(|u| train.ids().users.name(u.index()).to_owned())
            .collect();
        assert_eq!(names, ["A", "B"].into_iter().map(String::from).collect());
        assert!(select_test_users(&TestSet::default()).is_empty());
    }

    #[test]
    fn csv_round_trip_both_forms() {
        let mut buf = Vec::new();
        write_records(&fig2_records(), &mut buf).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), fig2_records());

        let mut ids = IdMaps::new();
        let careers = expand_durations(&fig2_records(), &mut ids).unwrap();
        let mut buf = Vec::new();
        write_careers(&careers, &ids, &mut buf).unwrap();
        let (back, unknown) = read_careers(buf.as_slice(), &ids).unwrap();
        assert_eq!(back, careers);
        assert_eq!(unknown, 0);

        let mut table = Vec::new();
        ids.companies.write_csv(EntityKind::Company, &mut table).unwrap();
        assert!(table.starts_with(b"index,company_id\n"));
        assert_eq!(Interner::read_csv(table.as_slice()).unwrap(), ids.companies);
    }

    #[test]
    fn bad_year_is_reported_with_line() {
        let text = "user_id,company_id,position_id,year\nu,c,p,2001\nu,c,p,20x1\n";
        let err = read_records(text.as_bytes()).unwrap_err();
        assert!(matches!(err, CaperError::MalformedRecord { line: 3, .. }));
    }

    fn arb_records() -> impl Strategy<Value = Vec<(u8, u8, u8, i32, i32)>> {
        prop::collection::vec((0u8..8, 0u8..5, 0u8..4, 2000i32..2010, 0i32..=5), 1..100)
    }

    fn to_records(raw: &[(u8, u8, u8, i32, i32)]) -> Vec<RawRecord> {
        raw.iter()
            .map(|&(u, c, p, s, len)| {
                RawRecord::new(&format!("u{u}"), &format!("c{c}"), &format!("p{p}"), s, s + len)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn expansion_matches_year_loop_oracle(raw in arb_records()) {
            let records = to_records(&raw);
            let mut ids = IdMaps::new();
            let careers = expand_durations(&records, &mut ids).unwrap();
            let mut oracle = BTreeSet::new();
            for r in &records {
                let mut y = r.start_year;
                while y <= r.end_year {
                    oracle.insert((r.user.clone(), r.company.clone(), r.position.clone(), y));
                    y += 1;
                }
            }
            prop_assert_eq!(careers.len(), oracle.len());
            let got: BTreeSet<_> = careers.iter().map(|c| (
                ids.users.name(c.user.index()).to_owned(),
                ids.companies.name(c.company.index()).to_owned(),
                ids.positions.name(c.position.index()).to_owned(),
                c.year,
            )).collect();
            prop_assert_eq!(got, oracle);
        }

        #[test]
        fn snapshot_views_mirror_careers(raw in arb_records()) {
            let mut ids = IdMaps::new();
            let careers = expand_durations(&to_records(&raw), &mut ids).unwrap();
            let tkg = Tkg::build_snapshots(&careers, ids).unwrap();
            let mut flattened = Vec::new();
            for (i, s) in tkg.snapshots().iter().enumerate() {
                prop_assert_eq!(s.year, tkg.first_year() + i as i32);
                let mut from_users: Vec<_> = s.by_user.iter()
                    .flat_map(|(u, v)| v.iter().map(move |(c, p)| (*u, *c, *p))).collect();
                let mut from_comps: Vec<_> = s.by_company.iter()
                    .flat_map(|(c, v)| v.iter().map(move |(u, p)| (*u, *c, *p))).collect();
                let mut direct: Vec<_> = s.careers.iter().map(|c| (c.user, c.company, c.position)).collect();
                from_users.sort();
                from_comps.sort();
                direct.sort();
                prop_assert_eq!(&from_users, &direct);
                prop_assert_eq!(&from_comps, &direct);
                flattened.extend(s.careers.iter().copied());
            }
            let mut input = careers.clone();
            input.sort();
            flattened.sort();
            prop_assert_eq!(flattened, input);
        }

        #[test]
        fn split_conserves_careers(raw in arb_records(), horizon in 1usize..6) {
            let mut ids = IdMaps::new();
            let careers = expand_durations(&to_records(&raw), &mut ids).unwrap();
            let tkg = Tkg::build_snapshots(&careers, ids).unwrap();
            match split_train_test(&tkg, horizon) {
                Ok((train, test)) => {
                    prop_assert_eq!(train.num_careers() + test.num_careers() + test.dropped, careers.len());
                    prop_assert!(train.careers().all(|c| c.year < test.first_year));
                    prop_assert!(test.iter().all(|c| c.year >= test.first_year));
                }
                Err(CaperError::HorizonTooLarge { .. }) => prop_assert!(horizon >= tkg.len()),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
