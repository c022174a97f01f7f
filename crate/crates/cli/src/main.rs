mod settings;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Command;

use caper_core::eval::{average_reports, evaluate, read_metrics, run_popular, run_variant, variant_label, write_metrics, Metric, MetricsReport};
use caper_core::inference::{multi_step_inference, read_predictions, write_predictions};
use caper_core::numeric::{CellKind, ParameterStore};
use caper_core::par::configure_threads;
use caper_core::synth::{generate, write_manifest, SynthConfig};
use caper_core::tkg::{
    expand_durations, read_careers, read_records, select_test_users, split_train_test, write_careers, EntityKind, IdMaps,
    Interner, TestSet, Tkg,
};
use caper_core::toy::toy_tkg;
use caper_core::trainer::{gradient_check, train_with, NegativeSampling, TargetKind, TrainConfig, Variant};

use settings::{command, Settings, UsageError, ABLATE, CHECKPOINTS, COMMON, GRADCHECK, HORIZON, INPUT, LABEL, METRICS, MODEL, SYNTH, TOP_K};

type Groups = &'static [&'static [settings::Spec]];

const COMMANDS: &[(&str, &str, Groups)] = &[
    ("synth", "Generate a synthetic career dataset", &[COMMON, SYNTH]),
    ("ingest", "Build snapshots and split off the test years", &[COMMON, INPUT, HORIZON]),
    ("train", "Train a model and write a checkpoint", &[COMMON, MODEL, CHECKPOINTS]),
    ("predict", "Rank companies and positions for future years", &[COMMON, MODEL, HORIZON, TOP_K]),
    ("eval", "Score rankings against the held-out careers", &[COMMON, HORIZON, LABEL]),
    ("ablate", "Train and evaluate model variants over several seeds", &[COMMON, MODEL, HORIZON, ABLATE]),
    ("gradcheck", "Check loss gradients against finite differences on the toy graph", &[COMMON, GRADCHECK]),
    ("report", "Print a metrics CSV as tables", &[COMMON, METRICS]),
];

fn cli() -> Command {
    let mut cmd = Command::new("caper")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Career trajectory prediction over temporal knowledge graphs")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about, groups) in COMMANDS {
        cmd = cmd.subcommand(command(name, about, groups));
    }
    cmd
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let groups = COMMANDS.iter().find(|c| c.0 == name).expect("registered command").2;
    let outcome = Settings::resolve(sub, groups)
        .map_err(anyhow::Error::from)
        .and_then(|s| run(name, &s));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("caper {name}: usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("caper {name}: error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(name: &str, s: &Settings) -> Result<()> {
    configure_threads(s.get("threads")?);
    let out = s.out_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(format!("manifest-{name}.txt")), s.to_manifest(name))?;
    match name {
        "synth" => synth(s),
        "ingest" => ingest(s),
        "train" => train(s),
        "predict" => predict(s),
        "eval" => eval(s),
        "ablate" => ablate(s),
        "gradcheck" => gradcheck(s),
        "report" => report(s),
        _ => unreachable!("unregistered command {name}"),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn synth_config(s: &Settings) -> Result<SynthConfig> {
    Ok(SynthConfig {
        n_users: s.get("users")?,
        n_companies: s.get("companies")?,
        n_positions: s.get("positions")?,
        n_years: s.get("years")?,
        careers_per_year: s.get("careers-per-year")?,
        sharpness: s.get("sharpness")?,
        drift_rate: s.get("drift")?,
        tenure_years: s.get("tenure")?,
        start_year: s.get("start-year")?,
        seed: s.get("seed")?,
        parallel: !s.flag("deterministic")?,
    })
}

fn train_config(s: &Settings) -> Result<TrainConfig> {
    let window: usize = s.get("bptt-window")?;
    let negatives: usize = s.get("negatives")?;
    Ok(TrainConfig {
        d: s.get("d")?,
        layers: s.get("layers")?,
        epochs: s.get("epochs")?,
        lr: s.get("lr")?,
        beta1: s.get("beta1")?,
        beta2: s.get("beta2")?,
        eps: s.get("eps")?,
        clip_norm: s.get("clip")?,
        bptt_window: (window > 0).then_some(window),
        cell: s.get("cell")?,
        norm: s.get("norm")?,
        negatives: if negatives == 0 {
            NegativeSampling::Full
        } else {
            NegativeSampling::Sampled(negatives)
        },
        denominator: s.get("denominator")?,
        evolve_inactive: s.flag("evolve-inactive")?,
        batches: s.get("batches")?,
        seed: s.get("seed")?,
        deterministic: s.flag("deterministic")?,
        variant: s.get("variant")?,
    })
}

fn synth(s: &Settings) -> Result<()> {
    let cfg = synth_config(s)?;
    let records = generate(&cfg)?;
    let out = s.out_dir();
    caper_core::tkg::write_records(&records, create(&out.join("raw.csv"))?)?;
    write_manifest(&cfg, records.len(), create(&out.join("synth_manifest.json"))?)?;
    println!("wrote {} records for {} users to {}", records.len(), cfg.n_users, out.join("raw.csv").display());
    Ok(())
}

const ID_FILES: [(EntityKind, &str); 3] = [
    (EntityKind::User, "ids_users.csv"),
    (EntityKind::Company, "ids_companies.csv"),
    (EntityKind::Position, "ids_positions.csv"),
];

fn ingest(s: &Settings) -> Result<()> {
    let records = read_records(open(&s.in_run("input"))?)?;
    let mut ids = IdMaps::new();
    let careers = expand_durations(&records, &mut ids)?;
    let tkg = Tkg::build_snapshots(&careers, ids)?;
    let (train, test) = split_train_test(&tkg, s.get("horizon")?)?;
    let out = s.out_dir();
    for (kind, file) in ID_FILES {
        train.ids().table(kind).write_csv(kind, create(&out.join(file))?)?;
    }
    write_careers(train.careers(), train.ids(), create(&out.join("train_careers.csv"))?)?;
    write_careers(test.iter(), train.ids(), create(&out.join("test_careers.csv"))?)?;
    println!(
        "{} snapshots ({}..={}), {} users, {} companies, {} positions",
        tkg.len(),
        tkg.first_year(),
        tkg.last_year(),
        train.num_users(),
        train.num_companies(),
        train.num_positions()
    );
    println!(
        "train: {} careers over {} years; test: {} careers over {} years ({} dropped)",
        train.num_careers(),
        train.len(),
        test.num_careers(),
        test.horizon,
        test.dropped
    );
    Ok(())
}

struct Data {
    train: Tkg,
    test: TestSet,
}

fn load_train(s: &Settings) -> Result<Tkg> {
    let out = s.out_dir();
    let mut ids = IdMaps::new();
    for (kind, file) in ID_FILES {
        let table = Interner::read_csv(open(&out.join(file))?)?;
        match kind {
            EntityKind::User => ids.users = table,
            EntityKind::Company => ids.companies = table,
            EntityKind::Position => ids.positions = table,
        }
    }
    let (careers, unknown) = read_careers(open(&out.join("train_careers.csv"))?, &ids)?;
    if unknown > 0 {
        bail!("train_careers.csv mentions {unknown} unknown identifiers");
    }
    Ok(Tkg::build_snapshots(&careers, ids)?)
}

fn load_data(s: &Settings) -> Result<Data> {
    let train = load_train(s)?;
    let (careers, dropped) = read_careers(open(&s.out_dir().join("test_careers.csv"))?, train.ids())?;
    let mut test = TestSet {
        first_year: train.last_year() + 1,
        horizon: s.get("horizon")?,
        dropped,
        ..TestSet::default()
    };
    for c in careers {
        let h = test.horizon_of(c.year);
        if h == 0 || h > test.horizon {
            return Err(UsageError(format!(
                "test career in {} lies outside the {}-year horizon; use the horizon given to ingest",
                c.year, test.horizon
            ))
            .into());
        }
        test.careers.entry((c.user, c.year)).or_default().push(c);
    }
    Ok(Data { train, test })
}

fn train(s: &Settings) -> Result<()> {
    let cfg = train_config(s)?;
    let every: usize = s.get("checkpoint-every")?;
    let train = load_train(s)?;
    let out = s.out_dir();
    let mut log_file = create(&out.join("loss_log.csv"))?;
    writeln!(log_file, "epoch,loss,company_loss,position_loss,seconds")?;
    let result = train_with(&train, &cfg, |e, params| {
        writeln!(
            log_file,
            "{},{:.10},{:.10},{:.10},{:.4}",
            e.epoch, e.loss, e.company_loss, e.position_loss, e.seconds
        )?;
        if every > 0 && e.epoch % every == 0 {
            let path = out.join(format!("checkpoint-{}.bin", e.epoch));
            let mut w = BufWriter::new(File::create(&path)?);
            params.write_checkpoint(&mut w)?;
            w.flush()?;
        }
        Ok(())
    })?;
    log_file.flush()?;
    let mut ckpt = create(&out.join("checkpoint.bin"))?;
    result.params.write_checkpoint(&mut ckpt)?;
    ckpt.flush()?;
    let last = result.log.last().expect("at least one epoch");
    println!(
        "trained {} ({} parameters) for {} epochs: final loss {:.6}, fingerprint {}",
        variant_label(&cfg),
        result.params.num_parameters(),
        cfg.epochs,
        last.loss,
        result.params.fingerprint()
    );
    Ok(())
}

fn load_checkpoint(path: &Path, cfg: &TrainConfig, train: &Tkg) -> Result<ParameterStore> {
    let model = cfg.model();
    let params = ParameterStore::read_checkpoint(open(path)?, model.cell, model.dynamic_positions)?;
    if params.layout() != model.layout(cfg.dims(train)) {
        bail!("checkpoint {} does not match the configured model and data", path.display());
    }
    Ok(params)
}

fn predict(s: &Settings) -> Result<()> {
    let cfg = train_config(s)?;
    let data = load_data(s)?;
    let out = s.out_dir();
    let params = load_checkpoint(&out.join("checkpoint.bin"), &cfg, &data.train)?;
    let users = select_test_users(&data.test);
    let result = multi_step_inference(&params, &data.train, &users, data.test.horizon, &cfg)?;
    if result.fingerprint_before != result.fingerprint_after {
        bail!("parameters changed during inference");
    }
    let ids = data.train.ids();
    write_predictions(&result.predictions, ids, s.get("top-k")?, create(&out.join("predictions.csv"))?)?;
    write_predictions(&result.predictions, ids, usize::MAX, create(&out.join("rankings.csv"))?)?;
    let inferred: Vec<_> = result.inferred.iter().flat_map(|snap| &snap.careers).collect();
    write_careers(inferred, ids, create(&out.join("inferred_careers.csv"))?)?;
    println!(
        "predicted {} horizons for {} users in {:.3}s ({:.3} ms per user)",
        data.test.horizon,
        users.len(),
        result.seconds,
        result.per_user_ms
    );
    Ok(())
}

fn label(s: &Settings) -> Result<String> {
    let cfg = TrainConfig {
        variant: s.get("variant")?,
        cell: s.get::<CellKind>("cell")?,
        ..TrainConfig::default()
    };
    Ok(variant_label(&cfg))
}

fn eval(s: &Settings) -> Result<()> {
    let data = load_data(s)?;
    let out = s.out_dir();
    let predictions = read_predictions(open(&out.join("rankings.csv"))?, data.train.ids())?;
    let model = evaluate(&predictions, &data.test, &label(s)?)?;
    let popular = run_popular(&data.train, &data.test)?;
    let reports = [model, popular];
    let mut w = create(&out.join("metrics.csv"))?;
    write_metrics(&reports, &mut w)?;
    w.flush()?;
    print_reports(&reports);
    Ok(())
}

fn ablate(s: &Settings) -> Result<()> {
    let base = train_config(s)?;
    let data = load_data(s)?;
    let variants = s
        .raw("variants")
        .split(',')
        .map(|v| v.trim().parse::<Variant>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| UsageError(format!("invalid value for --variants: {e}")))?;
    let seeds: u64 = s.get("seeds")?;
    if seeds == 0 {
        return Err(UsageError("--seeds must be at least 1".into()).into());
    }
    let mut reports = Vec::new();
    for variant in variants {
        let mut per_seed = Vec::new();
        for k in 0..seeds {
            let cfg = TrainConfig {
                seed: base.seed + k,
                ..base.clone()
            };
            let run = run_variant(variant, &data.train, &data.test, &cfg)?;
            log::info!(
                "{variant} seed {}: horizon-1 company MRR {:.4}",
                cfg.seed,
                run.report.value(TargetKind::Company, Metric::Mrr, 1).unwrap_or(f64::NAN)
            );
            per_seed.push(run.report);
        }
        let name = variant_label(&TrainConfig { variant, ..base.clone() });
        reports.push(average_reports(&per_seed, &name)?);
    }
    reports.push(run_popular(&data.train, &data.test)?);
    let mut w = create(&s.out_dir().join("ablation.csv"))?;
    write_metrics(&reports, &mut w)?;
    w.flush()?;
    print_reports(&reports);
    Ok(())
}

fn gradcheck(s: &Settings) -> Result<()> {
    let cells: Vec<CellKind> = match s.raw("cell") {
        "all" => vec![CellKind::PaperLstm, CellKind::Lstm, CellKind::Gru, CellKind::Rnn],
        _ => vec![s.get("cell")?],
    };
    let h: f64 = s.get("h")?;
    let tolerance: f64 = s.get("tolerance")?;
    let tkg = toy_tkg();
    let mut worst = 0.0f64;
    for cell in cells {
        let cfg = TrainConfig {
            d: s.get("d")?,
            layers: s.get("layers")?,
            variant: s.get("variant")?,
            seed: s.get("seed")?,
            cell,
            ..TrainConfig::default()
        };
        let checks = gradient_check(&tkg, &cfg, h, None)?;
        let max = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
        let block = checks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .map(|c| c.block.as_str())
            .unwrap_or("-");
        println!("{cell:<10} max relative error {max:.3e} (block {block})");
        worst = worst.max(max);
    }
    println!("max relative error {worst:.3e}, tolerance {tolerance:.1e}");
    if worst.is_nan() || worst > tolerance {
        bail!("gradient check failed: {worst:.3e} exceeds {tolerance:.1e}");
    }
    Ok(())
}

fn report(s: &Settings) -> Result<()> {
    let reports = read_metrics(open(&s.in_run("metrics"))?)?;
    if reports.is_empty() {
        bail!("{} holds no metrics", s.in_run("metrics").display());
    }
    print_reports(&reports);
    Ok(())
}

fn print_reports(reports: &[MetricsReport]) {
    let mut text = String::new();
    for kind in TargetKind::BOTH {
        let horizons: Vec<usize> = {
            let mut h: Vec<usize> = reports
                .iter()
                .flat_map(|r| r.rows.iter().filter(|row| row.kind == kind).map(|row| row.horizon))
                .collect();
            h.sort_unstable();
            h.dedup();
            h
        };
        if horizons.is_empty() {
            continue;
        }
        text.push_str(&format!("\n{} prediction\n", kind.as_str()));
        let mut header = format!("{:<28}{:<8}", "variant", "metric");
        for h in &horizons {
            header.push_str(&format!("{:>9}", format!("M={h}")));
        }
        text.push_str(&header);
        text.push('\n');
        for r in reports {
            for m in Metric::ALL {
                let mut line = format!("{:<28}{:<8}", r.variant, m.as_str());
                for &h in &horizons {
                    match r.value(kind, m, h) {
                        Some(v) => line.push_str(&format!("{:>9.2}", 100.0 * v)),
                        None => line.push_str(&format!("{:>9}", "-")),
                    }
                }
                text.push_str(&line);
                text.push('\n');
            }
        }
    }
    // A closed pipe is not worth reporting.
    let _ = std::io::stdout().write_all(text.as_bytes());
}
