//! `stn-sim` command-line front end.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{ArgAction, Parser, Subcommand};
use stn_core::config::{paper_fig4, ExperimentConfig, Mode, Scheme};
use stn_core::masac::{Checkpoint, Learner};
use stn_core::metrics::{self, TaskRecord};
use stn_core::simengine::{self, CompareRow, Engine, EngineError, EpisodeRow, TrainOutput};
use stn_core::topology::{NetworkGraph, NodeKind};

pub const SEED_ENV: &str = "STN_SIM_SEED";

/// Rolling window, in episodes, for the training curve.
pub const CURVE_WINDOW: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "stn-sim", version, about = "Satellite-terrestrial offloading and bitrate-control simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config; the paper-fig4 preset when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed and STN_SIM_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Parse and validate the config, then print the effective config.
    ValidateConfig,
    /// Build the network and write its node and link tables.
    BuildTopology,
    /// Train a learned scheme.
    Train {
        #[arg(long, default_value = "cc-masac")]
        scheme: String,
    },
    /// Greedy evaluation of one scheme.
    Evaluate {
        #[arg(long, default_value = "cc-masac")]
        scheme: String,
        /// Required for learned schemes.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate every configured scheme on the same workload; learned schemes
    /// are trained first unless a checkpoint is given for them.
    Compare {
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Rebuild fig5.csv and fig6.csv from a previous run directory.
    Export {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config = 2,
    Runtime = 3,
    NonFinite = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl Failure {
    fn config(e: impl Into<anyhow::Error>) -> Self {
        Self { kind: ExitKind::Config, error: e.into() }
    }

    fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Self { kind: ExitKind::Runtime, error: e.into() }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::runtime(e)
    }
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub out: PathBuf,
    pub verbose: u8,
}

fn parse_scheme(s: &str) -> Result<Scheme, Failure> {
    s.parse::<Scheme>().map_err(|e| Failure::config(anyhow!("{e}")))
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::config(anyhow!("{SEED_ENV}={v:?} is not an integer seed"))),
        Err(_) => Ok(None),
    }
}

/// Loads the config and resolves the seed. Needs no seed for `validate-config`,
/// `build-topology` and `export`.
pub fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(Failure::config)?;
            ExperimentConfig::from_json(&text).map_err(|e| Failure::config(anyhow!("{}: {e}", p.display())))?
        }
        None => paper_fig4(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    } else if cfg.seed.is_none() {
        cfg.seed = env_seed()?;
    }
    let needs_seed = matches!(cli.command, Command::Train { .. } | Command::Evaluate { .. } | Command::Compare { .. });
    if needs_seed && cfg.seed.is_none() {
        return Err(Failure::config(anyhow!("seed required: pass --seed, set \"seed\" in the config or {SEED_ENV}")));
    }
    cfg.mode = match cli.command {
        Command::Train { .. } => Mode::Train,
        Command::Evaluate { .. } => Mode::Eval,
        Command::Compare { .. } => Mode::Compare,
        _ => cfg.mode,
    };
    Ok(cfg)
}

/// Parses arguments and the config. Clap's own help and version output is
/// returned as the error of `try_parse_from`.
pub fn parse_and_validate<I, T>(args: I) -> Result<(Invocation, ExperimentConfig), Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(Failure::config)?;
    let cfg = load_config(&cli)?;
    Ok((Invocation { command: cli.command, out: cli.out, verbose: cli.verbose }, cfg))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_csv<T: serde::Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<(), Failure> {
    let path = dir.join(name);
    simengine::write_csv(rows, create(&path)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).with_context(|| format!("writing {}", path.display()))?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display())).map_err(Failure::config)
}

fn engine_failure(e: EngineError, out: &Path) -> Failure {
    if let EngineError::NonFinite { checkpoint, .. } = &e {
        let dir = out.join("checkpoints");
        let path = dir.join("diverged.json");
        if let Err(w) = fs::create_dir_all(&dir).map_err(Failure::from).and_then(|_| write_json(&path, checkpoint.as_ref())) {
            log::error!("could not write diagnostic checkpoint: {}", w.error);
        }
        return Failure { kind: ExitKind::NonFinite, error: anyhow!("{e}; diagnostic checkpoint in {}", path.display()) };
    }
    match e {
        EngineError::MissingPolicy(_) | EngineError::WrongScheme { .. } | EngineError::Sac(stn_core::masac::SacError::Checkpoint(_)) => {
            Failure::config(e)
        }
        e => Failure::runtime(e),
    }
}

#[derive(serde::Serialize)]
struct TopologyTable<'a> {
    counts: BTreeMap<String, usize>,
    graph: &'a NetworkGraph,
}

fn write_training(out: &Path, scheme: Scheme, t: &TrainOutput, suffix: &str) -> Result<(), Failure> {
    write_csv(out, &format!("train_log{suffix}.csv"), &t.log)?;
    write_csv(out, &format!("episodes{suffix}.csv"), &t.episodes)?;
    write_csv(out, &format!("tasks{suffix}.csv"), &t.records)?;
    write_csv(out, &format!("slots{suffix}.csv"), &t.snapshots)?;
    let dir = out.join("checkpoints");
    fs::create_dir_all(&dir)?;
    for (ep, ck) in &t.checkpoints {
        write_json(&dir.join(format!("{}-ep{ep:05}.json", scheme.label())), ck)?;
    }
    Ok(())
}

fn final_checkpoint(engine: &Engine, scheme: Scheme, learner: &Learner) -> Checkpoint {
    learner.checkpoint(scheme.label(), &engine.policy_hash())
}

/// Executes a parsed invocation.
pub fn run(inv: &Invocation, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let out = inv.out.as_path();
    if let Command::Export { input } = &inv.command {
        return export(input, out);
    }
    if inv.command == Command::ValidateConfig {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("effective_config.json"), cfg.to_json() + "\n")?;

    if inv.command == Command::BuildTopology {
        let g = NetworkGraph::build(&cfg.topology, &cfg.channel).map_err(Failure::config)?;
        let mut counts = BTreeMap::new();
        for n in g.nodes() {
            *counts.entry(format!("{:?}", n.kind).to_lowercase()).or_insert(0) += 1;
        }
        counts.insert("links".into(), g.links().len());
        let core = g
            .nodes_of(NodeKind::Satellite)
            .into_iter()
            .filter(|&s| g.out_links(s).iter().filter(|&&l| g.nodes()[g.link(l).dst.0].kind == NodeKind::Satellite).count() >= 3)
            .count();
        counts.insert("core_satellites".into(), core);
        for (k, v) in &counts {
            println!("{k}: {v}");
        }
        println!("agents: {}", g.nodes_of(NodeKind::GroundStation).len());
        return write_json(&out.join("topology.json"), &TopologyTable { counts, graph: &g });
    }

    let seed = cfg.seed.expect("seed resolved by load_config");
    let engine = Engine::new(cfg, seed).map_err(Failure::config)?;
    match &inv.command {
        Command::Train { scheme } => {
            let scheme = parse_scheme(scheme)?;
            if !scheme.learns() {
                return Err(Failure::config(anyhow!("scheme {} has nothing to train", scheme.label())));
            }
            log::info!("training {} for {} episodes, seed {seed}", scheme.label(), cfg.episodes);
            let t = engine.train(scheme).map_err(|e| engine_failure(e, out))?;
            write_training(out, scheme, &t, "")?;
            write_json(&out.join("checkpoints").join(format!("{}-final.json", scheme.label())), &final_checkpoint(&engine, scheme, &t.learner))?;
            write_csv(out, "fig5.csv", &simengine::training_curve(&t.episodes, CURVE_WINDOW))?;
            let last = t.episodes.last().map_or(0.0, |e| e.mean_reward);
            println!("{}: trained {} episodes, final episode reward {last:.4}", scheme.label(), t.episodes.len());
        }
        Command::Evaluate { scheme, checkpoint } => {
            let scheme = parse_scheme(scheme)?;
            let learner = match (scheme.learns(), checkpoint) {
                (true, None) => return Err(Failure::config(anyhow!("evaluating {} needs --checkpoint", scheme.label()))),
                (true, Some(p)) => Some(engine.learner_from(scheme, &read_checkpoint(p)?).map_err(|e| engine_failure(e, out))?),
                (false, _) => None,
            };
            let ev = engine.evaluate(scheme, learner.as_ref()).map_err(|e| engine_failure(e, out))?;
            write_csv(out, "eval_tasks.csv", &ev.records)?;
            write_csv(out, "eval_episodes.csv", &ev.episodes)?;
            write_json(&out.join("eval_summary.json"), &CompareRow::new(scheme.label(), &ev.summary))?;
            simengine::write_jsonl(&ev.paths, create(&out.join("paths.jsonl"))?)?;
            write_csv(out, "fig6.csv", &simengine::volume_series(scheme.label(), &ev.records, &cfg.volume_series))?;
            println!("{}: completion {:.4}, reward {:.4}", scheme.label(), ev.summary.completion_rate, ev.summary.mean_reward);
        }
        Command::Compare { checkpoint } => {
            let mut policies = BTreeMap::new();
            for p in checkpoint {
                let ck = read_checkpoint(p)?;
                let scheme = parse_scheme(&ck.scheme)?;
                policies.insert(scheme, engine.learner_from(scheme, &ck).map_err(|e| engine_failure(e, out))?);
            }
            let mut curves: Vec<EpisodeRow> = Vec::new();
            for &s in cfg.schemes.iter().filter(|s| s.learns()) {
                if policies.contains_key(&s) {
                    continue;
                }
                log::info!("training {} for {} episodes, seed {seed}", s.label(), cfg.episodes);
                let t = engine.train(s).map_err(|e| engine_failure(e, out))?;
                write_training(out, s, &t, &format!("_{}", s.label()))?;
                write_json(&out.join("checkpoints").join(format!("{}-final.json", s.label())), &final_checkpoint(&engine, s, &t.learner))?;
                curves.extend(t.episodes);
                policies.insert(s, t.learner);
            }
            let cmp = engine.compare(&cfg.schemes, &policies).map_err(|e| engine_failure(e, out))?;
            write_csv(out, "compare.csv", &cmp.table)?;
            write_csv(out, "fig6.csv", &cmp.volume)?;
            let records: Vec<TaskRecord> = cmp.evals.iter().flat_map(|e| e.records.iter().cloned()).collect();
            write_csv(out, "compare_tasks.csv", &records)?;
            if !curves.is_empty() {
                write_csv(out, "fig5.csv", &simengine::training_curve(&curves, CURVE_WINDOW))?;
            }
            for r in &cmp.table {
                println!(
                    "{:<10} completion {:.4}  reward {:.4}  energy {:.4}  delay {:.4}",
                    r.scheme, r.completion_rate, r.mean_reward, r.mean_energy, r.mean_delay
                );
            }
        }
        Command::ValidateConfig | Command::BuildTopology | Command::Export { .. } => unreachable!(),
    }
    Ok(())
}

fn read_if_exists<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<Vec<T>>, Failure> {
    if !path.exists() {
        return Ok(None);
    }
    let rows = simengine::read_csv(create_reader(path)?).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(rows))
}

fn create_reader(path: &Path) -> Result<File, Failure> {
    Ok(File::open(path).with_context(|| format!("opening {}", path.display()))?)
}

/// Rebuilds plot series from the CSVs of an earlier run.
pub fn export(input: &Path, out: &Path) -> Result<(), Failure> {
    let cfg_path = input.join("effective_config.json");
    let cfg = match fs::read_to_string(&cfg_path) {
        Ok(t) => ExperimentConfig::from_json(&t).map_err(|e| Failure::config(anyhow!("{}: {e}", cfg_path.display())))?,
        Err(_) => paper_fig4(),
    };
    fs::create_dir_all(out)?;
    let mut episodes: Vec<EpisodeRow> = Vec::new();
    let mut tasks: Vec<TaskRecord> = Vec::new();
    let mut names: Vec<_> = fs::read_dir(input)?.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    for name in &names {
        if name.starts_with("episodes") && name.ends_with(".csv") {
            episodes.extend(read_if_exists::<EpisodeRow>(&input.join(name))?.unwrap_or_default());
        }
    }
    for name in ["compare_tasks.csv", "eval_tasks.csv"] {
        if let Some(rows) = read_if_exists::<TaskRecord>(&input.join(name))? {
            tasks = rows;
            break;
        }
    }
    if episodes.is_empty() && tasks.is_empty() {
        return Err(Failure::runtime(anyhow!("{} holds no episodes*.csv or evaluation task CSV", input.display())));
    }
    if !episodes.is_empty() {
        write_csv(out, "fig5.csv", &simengine::training_curve(&episodes, CURVE_WINDOW))?;
    }
    if !tasks.is_empty() {
        let mut by_scheme: Vec<(String, Vec<TaskRecord>)> = Vec::new();
        for r in tasks {
            match by_scheme.iter_mut().find(|(s, _)| *s == r.scheme) {
                Some((_, v)) => v.push(r),
                None => by_scheme.push((r.scheme.clone(), vec![r])),
            }
        }
        let mut rows = Vec::new();
        let mut table = Vec::new();
        for (s, recs) in &by_scheme {
            rows.extend(simengine::volume_series(s, recs, &cfg.volume_series));
            table.push(CompareRow::new(s, &metrics::summarize(recs)));
        }
        write_csv(out, "fig6.csv", &rows)?;
        write_csv(out, "compare.csv", &table)?;
    }
    Ok(())
}

/// Parses, runs and maps the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ExitKind::Config as i32 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    let res = load_config(&cli).and_then(|cfg| {
        let inv = Invocation { command: cli.command.clone(), out: cli.out.clone(), verbose: cli.verbose };
        run(&inv, &cfg)
    });
    match res {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code()
        }
    }
}
