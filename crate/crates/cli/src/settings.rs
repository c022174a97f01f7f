//! Flag definitions and key=value configuration resolution.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};

/// A bad flag, config key or value. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub struct Spec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn spec(key: &'static str, default: &'static str, help: &'static str) -> Spec {
    Spec { key, default, help }
}

pub const COMMON: &[Spec] = &[
    spec("out", "run", "Run directory holding every artifact"),
    spec("seed", "42", "Random seed"),
    spec("threads", "0", "Worker thread cap (0 = all cores)"),
    spec("deterministic", "true", "Run sequentially; outputs are identical either way"),
];

pub const SYNTH: &[Spec] = &[
    spec("users", "300", "Number of users"),
    spec("companies", "40", "Number of companies"),
    spec("positions", "12", "Number of positions"),
    spec("years", "20", "Number of yearly snapshots"),
    spec("careers-per-year", "2.37", "Mean concurrent careers per user and year"),
    spec("sharpness", "4", "Transition kernel sharpness (inf = deterministic)"),
    spec("drift", "0.1", "Yearly drift rate of company transitions"),
    spec("tenure", "3", "Mean years between moves"),
    spec("start-year", "2000", "First calendar year"),
];

pub const INPUT: &[Spec] = &[spec("input", "raw.csv", "Raw career CSV, relative to the run directory")];

pub const HORIZON: &[Spec] = &[spec("horizon", "5", "Number of held-out future years (M)")];

pub const MODEL: &[Spec] = &[
    spec("d", "150", "Embedding dimension"),
    spec("layers", "1", "GCN layers"),
    spec("epochs", "100", "Training epochs"),
    spec("lr", "0.001", "Adam learning rate"),
    spec("beta1", "0.9", "Adam beta1"),
    spec("beta2", "0.999", "Adam beta2"),
    spec("eps", "1e-8", "Adam epsilon"),
    spec("clip", "5", "Global gradient-norm clip (0 = off)"),
    spec("bptt-window", "0", "Truncated BPTT window in years (0 = full)"),
    spec("cell", "paper-lstm", "Recurrent cell: paper-lstm, lstm, gru or rnn"),
    spec("norm", "degree", "GCN normalisation: degree or none"),
    spec("negatives", "0", "Sampled negatives per career (0 = full softmax)"),
    spec("denominator", "with_positive", "Softmax denominator: with_positive or paper_literal"),
    spec("evolve-inactive", "false", "Update states of entities absent from a snapshot"),
    spec("batches", "1", "Optimizer steps per epoch"),
    spec("variant", "full", "Model variant"),
];

pub const CHECKPOINTS: &[Spec] = &[spec("checkpoint-every", "0", "Also write checkpoint-<epoch>.bin every k epochs (0 = off)")];

pub const TOP_K: &[Spec] = &[spec("top-k", "10", "Predictions kept per list in predictions.csv")];

pub const LABEL: &[Spec] = &[
    spec("variant", "full", "Model variant used for the report label"),
    spec("cell", "paper-lstm", "Recurrent cell used for the report label"),
];

pub const ABLATE: &[Spec] = &[
    spec(
        "variants",
        "full,kg_static,no_gcn,no_grnn,all_evolution,no_user_evolution,no_comp_evolution",
        "Comma-separated variants to compare",
    ),
    spec("seeds", "3", "Number of seeds averaged, starting at --seed"),
];

pub const GRADCHECK: &[Spec] = &[
    spec("cell", "all", "Cell to check, or all"),
    spec("d", "4", "Embedding dimension"),
    spec("layers", "1", "GCN layers"),
    spec("variant", "full", "Model variant"),
    spec("h", "1e-5", "Finite-difference step"),
    spec("tolerance", "1e-4", "Largest accepted relative error"),
];

pub const METRICS: &[Spec] = &[spec("metrics", "metrics.csv", "Metrics CSV, relative to the run directory")];

pub fn command(name: &'static str, about: &'static str, groups: &[&[Spec]]) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("Flat key=value config file; explicit flags take precedence"),
    );
    for s in groups.iter().flat_map(|g| g.iter()) {
        let mut arg = Arg::new(s.key)
            .long(s.key)
            .value_name("VALUE")
            .default_value(s.default)
            .help(s.help);
        if s.default == "true" || s.default == "false" {
            arg = arg.num_args(0..=1).default_missing_value("true");
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

/// Resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn parse_config(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(UsageError(format!("config line {}: expected key=value, found `{line}`", i + 1)));
        };
        out.insert(k.trim().replace('_', "-"), v.trim().to_owned());
    }
    Ok(out)
}

impl Settings {
    /// Defaults, overridden by the config file, overridden by explicit flags.
    pub fn resolve(matches: &ArgMatches, groups: &[&[Spec]]) -> Result<Self, UsageError> {
        let file = match matches.get_one::<String>("config") {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| UsageError(format!("cannot read config `{path}`: {e}")))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        let mut values = BTreeMap::new();
        for s in groups.iter().flat_map(|g| g.iter()) {
            let flag = matches.get_one::<String>(s.key).cloned().unwrap_or_default();
            let value = match (matches.value_source(s.key), file.get(s.key)) {
                (Some(ValueSource::CommandLine), _) | (_, None) => flag,
                (_, Some(v)) => v.clone(),
            };
            values.insert(s.key.to_owned(), value);
        }
        for k in file.keys().filter(|k| !values.contains_key(*k)) {
            log::debug!("config key `{k}` is not used by this command");
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_default()
    }

    pub fn get<T>(&self, key: &str) -> Result<T, UsageError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| UsageError(format!("invalid value `{raw}` for --{key}: {e}")))
    }

    pub fn flag(&self, key: &str) -> Result<bool, UsageError> {
        match self.raw(key).to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            other => Err(UsageError(format!("invalid value `{other}` for --{key}: expected true or false"))),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    /// A path relative to the run directory unless absolute.
    pub fn in_run(&self, key: &str) -> PathBuf {
        let p = Path::new(self.raw(key));
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir().join(p)
        }
    }

    /// `key=value` lines, sorted, readable back through `--config`.
    pub fn to_manifest(&self, command: &str) -> String {
        let mut s = format!("# caper {} {command}\n", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.values {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}
