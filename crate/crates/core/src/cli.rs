//! Command-line front end: `gen`, `train`, `eval`, `online`, `inspect`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::backend::{from_selector, Backend, BackendError, Purpose, BACKEND_ENV};
use crate::bench::{generate_benchmark, BenchmarkSpec, Bundle, Metrics};
use crate::controller::{run_online, run_test_stage, run_training_stage, ControllerConfig, EpisodeRecord, Runtime, State};
use crate::demos::{DemoKind, HashedNgramEmbedder, Polarity};
use crate::error::{read_json, write_json, Error};
use crate::learning::LearningError;
use crate::model::Split;

pub const EXIT_MALFORMED_SPEC: i32 = 2;
pub const EXIT_OUT_EXISTS: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;
pub const EXIT_MISSING_STATE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "clova", version, about = "Closed-loop tool-program runtime")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a benchmark bundle with its initial state.
    Gen(GenArgs),
    /// Run learning episodes over the training split.
    Train(TrainArgs),
    /// Evaluate a frozen state on a split.
    Eval(EvalArgs),
    /// Learn while scoring each task by its first attempt.
    Online(OnlineArgs),
    /// Print parts of a state or run directory.
    #[command(subcommand)]
    Inspect(InspectCommand),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Benchmark spec (JSON). Without it the desk preset is used.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Benchmark bundle directory.
    #[arg(long)]
    pub bundle: PathBuf,
    /// Run output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing output directory.
    #[arg(long)]
    pub force: bool,
    /// Controller config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `scripted:<rules.json>` or `remote:<url>`; defaults to the bundle rules.
    #[arg(long)]
    pub backend: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Starting state; defaults to the bundle's initial state.
    #[arg(long)]
    pub state: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// State checkpoint to evaluate.
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct OnlineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub state: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
pub enum InspectCommand {
    /// List demonstrations in a state.
    Demos {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long, value_enum)]
        polarity: Option<PolarityArg>,
    },
    /// Summarize a tool's prompt pool.
    Pool {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        tool: String,
    },
    /// Print the backend audit log of a run.
    Audit {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        purpose: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Plan,
    Program,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolarityArg {
    Success,
    Failure,
}

/// An error with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Spec(_) => EXIT_MALFORMED_SPEC,
            Error::Backend(_) | Error::Learning(LearningError::Backend(_)) => EXIT_BACKEND,
            Error::State(_) => EXIT_MISSING_STATE,
            _ => 1,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        Error::from(e).into()
    }
}

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const STATE_DIR: &str = "state";

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Online(a) => online(a),
        Command::Inspect(c) => inspect(c),
    }
}

fn prepare_out(out: &Path, force: bool) -> Result<(), CliError> {
    if out.exists() {
        let empty = out.read_dir().map(|mut d| d.next().is_none()).unwrap_or(false);
        if !empty && !force {
            return Err(CliError::new(
                EXIT_OUT_EXISTS,
                format!("{} exists; pass --force to overwrite", out.display()),
            ));
        }
        if !empty {
            std::fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn gen(a: GenArgs) -> Result<(), CliError> {
    let mut spec = match &a.spec {
        Some(p) => BenchmarkSpec::load(p).map_err(Error::from)?,
        None => BenchmarkSpec::desk_preset(0),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let bench = generate_benchmark(&spec).map_err(Error::from)?;
    prepare_out(&a.out, a.force)?;
    bench.write(&a.out)?;
    let cfg = ControllerConfig::default();
    State::fresh(bench.toolkit.clone(), &HashedNgramEmbedder::default(), cfg.demo_capacity, &cfg.learning)
        .save(&a.out.join(STATE_DIR))?;
    print_json(&serde_json::json!({
        "out": a.out,
        "train": bench.train.len(),
        "test": bench.test.len(),
        "scenes": bench.scenes.len(),
    }));
    Ok(())
}

struct Session {
    bundle: Bundle,
    cfg: ControllerConfig,
    backend: Box<dyn Backend>,
    embedder: HashedNgramEmbedder,
}

/// Precedence: `--backend`, then the environment variable, then the bundle rules.
fn backend_selector(flag: Option<&str>, bundle: &Bundle) -> String {
    flag.map(str::to_string)
        .or_else(|| std::env::var(BACKEND_ENV).ok().filter(|s| !s.is_empty()))
        .unwrap_or_else(|| format!("scripted:{}", bundle.rules_path().display()))
}

fn open_session(c: &Common) -> Result<Session, CliError> {
    let bundle = Bundle::load(&c.bundle)?;
    let mut cfg: ControllerConfig = match &c.config {
        Some(p) => read_json(p)?,
        None => ControllerConfig::default(),
    };
    cfg.rho_dataset = bundle.spec.corruption.dataset;
    cfg.rho_web = bundle.spec.corruption.web;
    cfg.seed = bundle.spec.seed;
    let backend = from_selector(&backend_selector(c.backend.as_deref(), &bundle))?;
    Ok(Session {
        bundle,
        cfg,
        backend,
        embedder: HashedNgramEmbedder::default(),
    })
}

impl Session {
    fn runtime(&self) -> Runtime<'_> {
        Runtime {
            backend: self.backend.as_ref(),
            scenes: &self.bundle.scenes,
            embedder: &self.embedder,
            cfg: &self.cfg,
        }
    }

    fn initial_state(&self, from: Option<&Path>) -> Result<State, CliError> {
        let default_dir = self.bundle.dir.join(STATE_DIR);
        match from {
            Some(dir) => Ok(State::load(dir, &self.cfg.learning)?),
            None if State::exists(&default_dir) => Ok(State::load(&default_dir, &self.cfg.learning)?),
            None => Ok(State::fresh(
                self.bundle.toolkit.clone(),
                &self.embedder,
                self.cfg.demo_capacity,
                &self.cfg.learning,
            )),
        }
    }

    fn tasks(&self, split: SplitArg) -> Vec<crate::model::TaskInstance> {
        match split {
            SplitArg::Train => self.bundle.split(Split::Train),
            SplitArg::Test => self.bundle.split(Split::Test),
            SplitArg::All => self.bundle.tasks.clone(),
        }
    }

    fn write_audit(&self, out: &Path) -> crate::Result<()> {
        write_jsonl(&out.join(AUDIT_FILE), &self.backend.audit().entries())
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> crate::Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Streams each finished record to a JSONL file.
struct EpisodeSink {
    path: PathBuf,
    writer: BufWriter<File>,
    error: Option<Error>,
}

impl EpisodeSink {
    fn create(path: PathBuf) -> crate::Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(EpisodeSink {
            path,
            writer: BufWriter::new(file),
            error: None,
        })
    }

    fn push(&mut self, rec: &EpisodeRecord) {
        if self.error.is_some() {
            return;
        }
        let res = serde_json::to_writer(&mut self.writer, rec)
            .map_err(|e| Error::json(&self.path, e))
            .and_then(|_| self.writer.write_all(b"\n").map_err(|e| Error::io(&self.path, e)))
            .and_then(|_| self.writer.flush().map_err(|e| Error::io(&self.path, e)));
        if let Err(e) = res {
            self.error = Some(e);
        }
    }

    fn finish(mut self) -> crate::Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        self.error.map_or(Ok(()), Err)
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    episodes: usize,
    state_hash: Option<String>,
    metrics: Option<&'a Metrics>,
}

/// Runs a learning stage, persisting whatever completed even if the stage fails.
fn learning_run(
    c: &Common,
    state_from: Option<&Path>,
    split: SplitArg,
    online_scoring: bool,
) -> Result<(), CliError> {
    let session = open_session(c)?;
    let mut state = session.initial_state(state_from)?;
    prepare_out(&c.out, c.force)?;
    let tasks = session.tasks(split);
    let rt = session.runtime();
    let mut sink = EpisodeSink::create(c.out.join(EPISODES_FILE))?;
    let result = if online_scoring {
        run_online(&rt, &mut state, &tasks, &mut |r| sink.push(r)).map(|(r, m)| (r, Some(m)))
    } else {
        run_training_stage(&rt, &mut state, &tasks, &mut |r| sink.push(r)).map(|r| (r, None))
    };
    sink.finish()?;
    session.write_audit(&c.out)?;
    let (records, metrics) = result?;
    state.save(&c.out.join(STATE_DIR))?;
    if let Some(m) = &metrics {
        write_json(&c.out.join(METRICS_FILE), m)?;
    }
    print_json(&RunSummary {
        episodes: records.len(),
        state_hash: Some(state.hash()),
        metrics: metrics.as_ref(),
    });
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    learning_run(&a.common, a.state.as_deref(), SplitArg::Train, false)
}

fn online(a: OnlineArgs) -> Result<(), CliError> {
    learning_run(&a.common, a.state.as_deref(), a.split, true)
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let c = &a.common;
    let session = open_session(c)?;
    let state = State::load(&a.state, &session.cfg.learning)?;
    prepare_out(&c.out, c.force)?;
    let tasks = session.tasks(a.split);
    let result = run_test_stage(&session.runtime(), &state, &tasks, a.jobs.max(1));
    session.write_audit(&c.out)?;
    let (records, metrics) = result?;
    write_jsonl(&c.out.join(EPISODES_FILE), &records)?;
    write_json(&c.out.join(METRICS_FILE), &metrics)?;
    print_json(&RunSummary {
        episodes: records.len(),
        state_hash: Some(state.hash()),
        metrics: Some(&metrics),
    });
    Ok(())
}

fn inspect(c: InspectCommand) -> Result<(), CliError> {
    let cfg = ControllerConfig::default();
    match c {
        InspectCommand::Demos { state, kind, polarity } => {
            let s = State::load(&state, &cfg.learning)?;
            let kind = kind.map(|k| match k {
                KindArg::Plan => DemoKind::Plan,
                KindArg::Program => DemoKind::Program,
            });
            let polarity = polarity.map(|p| match p {
                PolarityArg::Success => Polarity::Success,
                PolarityArg::Failure => Polarity::Failure,
            });
            let rows: Vec<_> = s
                .demos
                .all()
                .filter(|e| kind.is_none_or(|k| e.kind == k) && polarity.is_none_or(|p| e.polarity == p))
                .map(|e| {
                    serde_json::json!({
                        "seq": e.seq,
                        "kind": e.kind,
                        "polarity": e.polarity,
                        "instruction": e.instruction,
                        "content": e.content,
                        "critique": e.critique,
                        "origin_task": e.origin_task,
                        "last_retrieved": e.last_retrieved,
                    })
                })
                .collect();
            print_json(&rows);
        }
        InspectCommand::Pool { state, tool } => {
            let s = State::load(&state, &cfg.learning)?;
            let pool = s
                .pools
                .pool(&tool)
                .ok_or_else(|| CliError::new(1, format!("{tool} has no prompt pool")))?;
            let concepts: serde_json::Map<String, serde_json::Value> =
                pool.concepts.iter().map(|(c, p)| (c.clone(), p.len().into())).collect();
            print_json(&serde_json::json!({
                "tool": pool.tool,
                "total": pool.total(),
                "concepts": concepts,
            }));
        }
        InspectCommand::Audit { run, purpose } => {
            let path = run.join(AUDIT_FILE);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let want: Option<Purpose> = match purpose {
                Some(p) => Some(
                    serde_json::from_value(serde_json::Value::String(p.clone()))
                        .map_err(|_| CliError::new(1, format!("unknown purpose {p:?}")))?,
                ),
                None => None,
            };
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let entry: crate::backend::AuditEntry =
                    serde_json::from_str(line).map_err(|e| Error::json(&path, e))?;
                if want.is_none_or(|p| entry.purpose == p) {
                    println!("{line}");
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from(["clova", "eval", "--bundle", "b", "--out", "o", "--state", "s", "--jobs", "4"]).unwrap();
        match cli.command {
            Command::Eval(a) => {
                assert_eq!(a.jobs, 4);
                assert_eq!(a.split, SplitArg::Test);
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["clova", "inspect", "pool", "--state", "s", "--tool", "LOC"]).is_ok());
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(CliError::from(Error::State("x".into())).code, EXIT_MISSING_STATE);
        assert_eq!(CliError::from(BackendError::BackendTimeout("t".into())).code, EXIT_BACKEND);
        assert_eq!(
            CliError::from(Error::Spec(crate::bench::SpecError::EmptyMix)).code,
            EXIT_MALFORMED_SPEC
        );
    }

    #[test]
    fn refuses_existing_output() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x"), "1").unwrap();
        assert_eq!(prepare_out(dir.path(), false).unwrap_err().code, EXIT_OUT_EXISTS);
        prepare_out(dir.path(), true).unwrap();
        assert!(!dir.path().join("x").exists());
    }
}
