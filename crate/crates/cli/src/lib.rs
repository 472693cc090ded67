//! `coannotate` command-line front end. Each subcommand maps onto one
//! engine, store or metrics operation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use coannotate_core::domain::{AnnotatorId, Instance, ProjectId, TaskSpec};
use coannotate_core::metrics::{render_table, MetricsReport};
use coannotate_core::protocol::{Engine, ProjectSettings};
use coannotate_core::scaffold::{
    run_consistency_study, ConsistencyResult, GenConfig, HttpProvider, NoisyStubProvider,
    Provider, ProviderSettings, StubProvider, DEFAULT_TEMPERATURE,
};
use coannotate_core::sim::{run_study_on, StudyConfig, TaskChoice};
use coannotate_core::store::{export_project, import_instances_file, Store};

/// Name of the stored consistency result inside a project directory.
pub const CONSISTENCY_DOC: &str = "consistency";

#[derive(Debug, Parser)]
#[command(name = "coannotate", version, about = "Run two-pass co-annotation studies")]
pub struct Cli {
    /// Directory holding project logs and snapshots.
    #[arg(long, global = true, env = "COANNOTATE_STORE", default_value = "coannotate-data")]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create, inspect and export projects.
    #[command(subcommand)]
    Project(ProjectCmd),
    /// Load utterances into a draft project.
    #[command(subcommand)]
    Instances(InstancesCmd),
    /// Enroll annotators.
    #[command(subcommand)]
    Annotators(AnnotatorsCmd),
    /// Open or close an annotation pass.
    #[command(subcommand)]
    Pass(PassCmd),
    /// Generate model explanations for every instance.
    #[command(subcommand)]
    Scaffolds(ScaffoldsCmd),
    /// Measure run-to-run stability of the model's soft labels.
    #[command(subcommand)]
    Consistency(ConsistencyCmd),
    /// Agreement and revision metrics.
    #[command(subcommand)]
    Report(ReportCmd),
    /// Simulated annotator studies.
    #[command(subcommand)]
    Simulate(SimulateCmd),
}

#[derive(Debug, Subcommand)]
pub enum ProjectCmd {
    /// Create a draft project for a task.
    Create {
        /// `sentiment`, `opinion`, or a path to a task spec JSON file.
        #[arg(long)]
        task: String,
        #[arg(long)]
        id: Option<String>,
        /// Show preceding turns to annotators.
        #[arg(long)]
        show_context: bool,
    },
    /// Show phase and per-annotator progress.
    Status {
        project: String,
    },
    /// Write instances, records, scaffolds and report files.
    Export {
        project: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum InstancesCmd {
    /// Import a JSONL file of utterances.
    Import {
        project: String,
        file: PathBuf,
        /// Skip malformed lines instead of aborting.
        #[arg(long)]
        lenient: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnnotatorsCmd {
    /// Enroll one or more annotators.
    Add {
        project: String,
        #[arg(required = true)]
        ids: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PassCmd {
    /// Open pass 1 or 2.
    Open {
        project: String,
        #[arg(value_parser = clap::value_parser!(u8).range(1..=2))]
        pass: u8,
    },
    /// Close pass 1 or 2.
    Close {
        project: String,
        #[arg(value_parser = clap::value_parser!(u8).range(1..=2))]
        pass: u8,
        /// Close with cells still open; they are excluded from all metrics.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    /// Use the deterministic offline provider.
    #[arg(long)]
    pub stub: bool,
    /// Overrides LLM_MODEL.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, default_value_t = 2)]
    pub max_retries: u32,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
}

#[derive(Debug, Subcommand)]
pub enum ScaffoldsCmd {
    /// Generate an explanation for every instance.
    Generate {
        project: String,
        #[command(flatten)]
        provider: ProviderArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConsistencyCmd {
    /// Repeat scaffold generation and correlate soft labels across runs.
    Run {
        /// Take instances from this project (first N in import order).
        #[arg(long)]
        project: Option<String>,
        /// Take instances from a JSONL file instead.
        #[arg(long, conflicts_with = "project")]
        instances: Option<PathBuf>,
        /// Task when no project is given.
        #[arg(long, default_value = "sentiment")]
        task: String,
        #[arg(long, default_value_t = 100)]
        subset: usize,
        #[arg(long, default_value_t = 3)]
        runs: u32,
        /// Half-width of uniform noise added by the stub provider.
        #[arg(long, requires = "stub")]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the full result as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Table,
    Structured,
}

#[derive(Debug, Subcommand)]
pub enum ReportCmd {
    /// Compute the report for a project after pass 2 closes.
    Build {
        project: String,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimulateCmd {
    /// Run a simulated two-pass study from a config file.
    Run {
        /// Simulation config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        project_id: Option<String>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
}

fn open_engine(store: &Path) -> Result<Engine> {
    let store = Store::open(store).with_context(|| format!("opening store {}", store.display()))?;
    Ok(Engine::with_store(Arc::new(store))?)
}

fn load_task(arg: &str) -> Result<TaskSpec> {
    match TaskChoice::Named(arg.to_owned()).resolve() {
        Ok(t) => Ok(t),
        Err(_) => {
            let text = std::fs::read_to_string(arg)
                .with_context(|| format!("'{arg}' is neither a known task nor a readable file"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing task spec {arg}"))
        }
    }
}

fn provider_for(args: &ProviderArgs, task: &TaskSpec) -> Result<Box<dyn Provider>> {
    if args.stub {
        return Ok(Box::new(StubProvider::new(task.clone())));
    }
    let mut settings = ProviderSettings::from_env()?.ok_or_else(|| {
        anyhow!("no provider configured: set LLM_ENDPOINT and LLM_MODEL, or pass --stub")
    })?;
    if let Some(m) = &args.model {
        settings.model = m.clone();
    }
    Ok(Box::new(HttpProvider::new(settings)))
}

fn gen_config(args: &ProviderArgs, provider: &dyn Provider) -> GenConfig {
    GenConfig {
        model: provider.model().to_owned(),
        temperature: args.temperature,
        max_retries: args.max_retries,
        run_index: 0,
    }
}

fn print_report(out: &mut dyn Write, report: &MetricsReport, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Table => write!(out, "{}", render_table(std::slice::from_ref(report)))?,
        ReportFormat::Structured => writeln!(out, "{}", serde_json::to_string_pretty(report)?)?,
    }
    Ok(())
}

fn print_json(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Executes one command, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Project(cmd) => project(&cli.store, cmd, out),
        Command::Instances(InstancesCmd::Import {
            project,
            file,
            lenient,
        }) => {
            let engine = open_engine(&cli.store)?;
            let parsed = import_instances_file(&file, !lenient)?;
            for e in &parsed.errors {
                writeln!(out, "skipped line {}: {}", e.line, e.message)?;
            }
            let outcome = engine.import_instances(&project.into(), parsed.instances)?;
            for r in &outcome.rejected {
                writeln!(out, "rejected {}: {}", r.instance_id, r.reason)?;
            }
            writeln!(out, "accepted {}", outcome.accepted)?;
            Ok(())
        }
        Command::Annotators(AnnotatorsCmd::Add { project, ids }) => {
            let engine = open_engine(&cli.store)?;
            let pid = ProjectId::new(project);
            for id in ids {
                engine.register_annotator(&pid, AnnotatorId::new(id.clone()))?;
                writeln!(out, "registered {id}")?;
            }
            Ok(())
        }
        Command::Pass(cmd) => pass(&cli.store, cmd, out),
        Command::Scaffolds(ScaffoldsCmd::Generate { project, provider }) => {
            let engine = open_engine(&cli.store)?;
            let pid = ProjectId::new(project);
            let task = engine.state(&pid)?.task;
            let p = provider_for(&provider, &task)?;
            let cfg = gen_config(&provider, p.as_ref());
            let summary = engine.generate_scaffolds(&pid, p.as_ref(), &cfg, provider.parallelism.max(1))?;
            print_json(out, &summary)
        }
        Command::Consistency(cmd) => consistency(&cli.store, cmd, out),
        Command::Report(ReportCmd::Build { project, format }) => {
            let engine = open_engine(&cli.store)?;
            let pid = ProjectId::new(project);
            let interrun = engine
                .store()
                .map(|s| s.read_json::<ConsistencyResult>(&pid, CONSISTENCY_DOC))
                .transpose()?
                .flatten()
                .map(|c| c.mean_r);
            let report = engine.build_report(&pid, interrun)?;
            print_report(out, &report, format)
        }
        Command::Simulate(SimulateCmd::Run {
            config,
            project_id,
            format,
        }) => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let study: StudyConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", config.display()))?;
            let task = study.task.resolve()?;
            let engine = open_engine(&cli.store)?;
            let (pid, report) = run_study_on(
                &engine,
                &study.sim,
                &task,
                study.instances,
                project_id.map(ProjectId::new),
            )?;
            eprintln!("project {pid}");
            print_report(out, &report, format)
        }
    }
}

fn project(store: &Path, cmd: ProjectCmd, out: &mut dyn Write) -> Result<()> {
    let engine = open_engine(store)?;
    match cmd {
        ProjectCmd::Create {
            task,
            id,
            show_context,
        } => {
            let settings = ProjectSettings {
                show_context,
                ..ProjectSettings::default()
            };
            let pid = engine.create_project(load_task(&task)?, settings, id.map(ProjectId::new))?;
            writeln!(out, "{pid}")?;
        }
        ProjectCmd::Status { project } => {
            print_json(out, &engine.project_status(&project.into())?)?;
        }
        ProjectCmd::Export { project, out: dir } => {
            let pid = ProjectId::new(project);
            let state = engine.state(&pid)?;
            let report = engine
                .store()
                .map(|s| s.read_json::<MetricsReport>(&pid, "report"))
                .transpose()?
                .flatten();
            let summary = export_project(&state, report.as_ref(), &dir)?;
            for f in &summary.files {
                writeln!(out, "{}", f.display())?;
            }
        }
    }
    Ok(())
}

fn pass(store: &Path, cmd: PassCmd, out: &mut dyn Write) -> Result<()> {
    let engine = open_engine(store)?;
    match cmd {
        PassCmd::Open { project, pass } => {
            let pid = ProjectId::new(project);
            match pass {
                1 => engine.open_pass1(&pid)?,
                _ => engine.open_pass2(&pid)?,
            }
            writeln!(out, "{}", engine.project_status(&pid)?.phase)?;
        }
        PassCmd::Close {
            project,
            pass,
            force,
        } => {
            let pid = ProjectId::new(project);
            let summary = match pass {
                1 => engine.close_pass1(&pid, force)?,
                _ => engine.close_pass2(&pid, force)?,
            };
            if summary.forced {
                writeln!(out, "forced closure: {} cells excluded", summary.missing.len())?;
            }
            writeln!(out, "{}", summary.phase)?;
        }
    }
    Ok(())
}

fn consistency(store: &Path, cmd: ConsistencyCmd, out: &mut dyn Write) -> Result<()> {
    let ConsistencyCmd::Run {
        project,
        instances,
        task,
        subset,
        runs,
        noise,
        seed,
        out: out_file,
        provider,
    } = cmd;
    if subset == 0 {
        bail!("--subset must be at least 1");
    }
    let (engine, task, mut corpus): (Option<Engine>, TaskSpec, Vec<Instance>) =
        match (&project, &instances) {
            (Some(p), _) => {
                let engine = open_engine(store)?;
                let state = engine.state(&p.as_str().into())?;
                let corpus = state.instances.values().cloned().collect();
                (Some(engine), state.task, corpus)
            }
            (None, Some(file)) => (None, load_task(&task)?, import_instances_file(file, true)?.instances),
            (None, None) => (
                None,
                load_task(&task)?,
                coannotate_core::sim::synthetic_instances(subset),
            ),
        };
    if corpus.len() < subset {
        eprintln!("only {} instances available; using all of them", corpus.len());
    }
    corpus.truncate(subset);

    let p: Box<dyn Provider> = match noise {
        Some(eps) => Box::new(NoisyStubProvider::new(task.clone(), eps, seed)),
        None => provider_for(&provider, &task)?,
    };
    let cfg = gen_config(&provider, p.as_ref());
    let result = run_consistency_study(p.as_ref(), &task, &corpus, runs, &cfg, provider.parallelism.max(1))?;

    for pr in &result.pairwise_r {
        writeln!(out, "runs {}-{}: r = {:.12} over {} instances", pr.first, pr.second, pr.r, pr.instances)?;
    }
    if !result.failures.is_empty() {
        writeln!(out, "failures: {}", result.failures.len())?;
    }
    writeln!(out, "mean_r = {:.12}", result.mean_r)?;
    if let (Some(engine), Some(pid)) = (&engine, &project) {
        if let Some(s) = engine.store() {
            s.write_json(&pid.as_str().into(), CONSISTENCY_DOC, &result)?;
        }
    }
    if let Some(path) = out_file {
        std::fs::write(&path, serde_json::to_vec_pretty(&result)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
