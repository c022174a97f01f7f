//! The canonical toy TKG: 5 users, 4 companies, 3 positions over 4 years.
//! Small enough for exhaustive finite-difference checks, rich enough to
//! exercise multi-career years, a gap year, a returning employee and a user
//! who appears late.

use crate::tkg::{expand_durations, IdMaps, RawRecord, Tkg};

pub fn toy_records() -> Vec<RawRecord> {
    vec![
        RawRecord::new("ana", "acme", "engineer", 2001, 2002),
        RawRecord::new("ana", "globex", "manager", 2003, 2004),
        RawRecord::new("ben", "globex", "engineer", 2001, 2001),
        RawRecord::new("ben", "initech", "engineer", 2002, 2004),
        RawRecord::new("ben", "umbrella", "director", 2004, 2004),
        RawRecord::new("cho", "initech", "manager", 2001, 2001),
        RawRecord::new("cho", "initech", "director", 2003, 2004),
        RawRecord::new("dev", "umbrella", "engineer", 2002, 2003),
        RawRecord::new("dev", "acme", "engineer", 2004, 2004),
        RawRecord::new("eli", "acme", "manager", 2003, 2003),
        RawRecord::new("eli", "umbrella", "director", 2004, 2004),
    ]
}

pub fn toy_tkg() -> Tkg {
    let mut ids = IdMaps::new();
    let careers = expand_durations(&toy_records(), &mut ids).expect("toy records are well formed");
    Tkg::build_snapshots(&careers, ids).expect("toy records are non-empty")
}
