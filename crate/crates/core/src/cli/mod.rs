//! Operator entry point. The binary is a thin wrapper around [`run_cli`].
//!
//! Exit codes: 0 on success, 2 for configuration errors, 1 for failures
//! while running.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{
    build_policy, BackendKind, ModeArg, Overrides, PolicyConfig, RunConfig, ToolsConfig, ENV_PREFIX,
    POLICY_API_KEY_ENV,
};

use crate::agent::{run_batch, system_prompt, EpisodeInput, EpisodeMode};
use crate::datagen::{
    anonymize_corpus, anonymize_ground_truth, emit_cold_start_dataset, emit_sft_dataset, read_ground_truth,
    synthesize_batch, write_ground_truth, DatasetManifest, ANON_SALT_ENV,
};
use crate::eval::{
    build_eval_report, build_tool_usage_report, parse_eval_json, parse_usage_json, render_eval, render_usage,
    EvalReport, ReportFormat, ToolUsageReport,
};
use crate::geodesy::GeoPoint;
use crate::protocol::serialize_trajectory;
use crate::raster::ImageRef;
use crate::rl::{build_curriculum, probe, Curriculum, ProbeManifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "geoagent", version, about = "Agentic image geo-localization runtime and RL data toolkit")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: Flags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Flags {
    /// `agent` (tools on) or `cot` (tool-free).
    #[arg(long, global = true)]
    pub mode: Option<ModeArg>,
    /// Tool calls allowed per episode.
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// Episodes run concurrently.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// `mock` (offline corpus) or `live` (HTTP backends).
    #[arg(long, global = true)]
    pub backend: Option<BackendKind>,
    /// Comma-separated kilometres, e.g. `1,25,200,750`.
    #[arg(long, global = true, value_parser = config::parse_thresholds)]
    pub thresholds: Option<::std::vec::Vec<f64>>,
    /// Probes per image for `filter`.
    #[arg(long = "k-trials", global = true)]
    pub k_trials: Option<usize>,
    #[arg(long = "out-dir", global = true)]
    pub out_dir: Option<PathBuf>,
}

impl From<&Flags> for Overrides {
    fn from(f: &Flags) -> Self {
        Overrides {
            mode: f.mode,
            budget: f.budget,
            parallelism: f.parallelism,
            backend: f.backend,
            thresholds: f.thresholds.clone(),
            k_trials: f.k_trials,
            out_dir: f.out_dir.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run agent or tool-free episodes and write trajectories and reports.
    Run,
    /// Synthesize observer-assisted trajectories, curate them and emit the
    /// cold-start dataset.
    Datagen,
    /// Probe each image K times and build the two-phase curriculum.
    Filter,
    /// Replace image ids with keyed hashes (salt from `ANON_SALT`).
    Anonymize {
        /// An `image_id,lat,lon` CSV, or a text file with one id per line.
        #[arg(long)]
        input: PathBuf,
    },
    /// Render the reports of a finished run.
    Report {
        /// Directory holding `report.json` and `usage.json`; defaults to the
        /// configured output directory.
        #[arg(long = "in-dir")]
        in_dir: Option<PathBuf>,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
}

/// Resolve the effective configuration: file, then environment, then flags.
pub fn resolve_config(
    path: Option<&Path>,
    flags: &Overrides,
    lookup: &dyn Fn(&str) -> Option<String>,
) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides::from_env(lookup)?)?;
    cfg.apply(flags)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_inputs(cfg: &RunConfig) -> Result<Vec<EpisodeInput>, CliError> {
    let path = cfg
        .ground_truth
        .as_ref()
        .ok_or_else(|| CliError::Config("`ground_truth` is required".into()))?;
    let rows = read_ground_truth(path).map_err(|e| CliError::Config(e.to_string()))?;
    rows.into_iter()
        .map(|(id, truth)| {
            let image = match &cfg.image_dir {
                Some(dir) => {
                    let file = dir.join(&id);
                    if !file.is_file() {
                        return Err(CliError::Config(format!("image {} does not exist", file.display())));
                    }
                    ImageRef::from_path(id, file)
                }
                None => ImageRef::blank(id, cfg.blank_image_size[0], cfg.blank_image_size[1]),
            };
            Ok(EpisodeInput { image, ground_truth: Some(truth) })
        })
        .collect()
}

fn truths(inputs: &[EpisodeInput]) -> Vec<GeoPoint> {
    inputs.iter().map(|i| i.ground_truth.expect("loaded with truth")).collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn json_pretty<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(runtime)
}

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub eval: EvalReport,
    pub usage: ToolUsageReport,
}

/// Writes `trajectories.jsonl`, `report.json`, `report.csv` and
/// `usage.json` to the output directory.
pub fn cmd_run(cfg: &RunConfig, lookup: &dyn Fn(&str) -> Option<String>) -> Result<RunOutcome, CliError> {
    let inputs = load_inputs(cfg)?;
    if inputs.is_empty() {
        return Err(CliError::Config("ground truth table is empty".into()));
    }
    let policy = build_policy(cfg.policy.as_ref(), "policy", lookup)?;
    let loop_cfg = cfg.loop_config(policy)?;
    let mode = match cfg.mode {
        ModeArg::Agent => EpisodeMode::Agent,
        ModeArg::Cot => EpisodeMode::Cot,
    };
    let results = run_batch(&inputs, &loop_cfg, mode, cfg.parallelism).map_err(|e| CliError::Config(e.to_string()))?;

    let mut lines = String::new();
    for r in &results {
        lines.push_str(&serialize_trajectory(&r.trajectory).map_err(runtime)?);
        lines.push('\n');
    }
    let eval = build_eval_report(&results, &truths(&inputs), &cfg.thresholds_km).map_err(runtime)?;
    let usage = build_tool_usage_report(&results).map_err(runtime)?;

    prepare_out_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("trajectories.jsonl"), &lines)?;
    write_file(&cfg.out_dir.join("report.json"), &render_eval(&eval, ReportFormat::Json))?;
    write_file(&cfg.out_dir.join("report.csv"), &render_eval(&eval, ReportFormat::Csv))?;
    write_file(&cfg.out_dir.join("usage.json"), &render_usage(&usage, ReportFormat::Json))?;
    Ok(RunOutcome { eval, usage })
}

/// Writes the curated dataset (`trajectories.jsonl`, `chat.jsonl`,
/// `rejects.jsonl`, `manifest.json`), the observer reports and a
/// coordinate-only `sft.jsonl`.
pub fn cmd_datagen(cfg: &RunConfig, lookup: &dyn Fn(&str) -> Option<String>) -> Result<DatasetManifest, CliError> {
    let inputs = load_inputs(cfg)?;
    let planner = build_policy(cfg.policy.as_ref(), "policy", lookup)?;
    let observer = build_policy(cfg.observer.as_ref(), "observer", lookup)?;
    let loop_cfg = cfg.loop_config(planner)?;
    let syntheses = synthesize_batch(&inputs, observer, &loop_cfg, cfg.parallelism).map_err(|e| CliError::Config(e.to_string()))?;

    let mut raw = Vec::new();
    let mut reports = String::new();
    let mut failures = 0;
    for s in syntheses {
        match s {
            Ok(s) => {
                for r in &s.reports {
                    reports.push_str(&serde_json::to_string(r).map_err(runtime)?);
                    reports.push('\n');
                }
                raw.push(s.episode.trajectory);
            }
            Err(e) => {
                eprintln!("warning: {e}");
                failures += 1;
            }
        }
    }
    let prompt = system_prompt(EpisodeMode::Agent, &loop_cfg.registry);
    let mut dataset = emit_cold_start_dataset(&raw, &cfg.curation, &prompt).map_err(runtime)?;
    dataset.manifest.synthesis_failures = failures;
    dataset.write_to(&cfg.out_dir).map_err(runtime)?;
    write_file(&cfg.out_dir.join("observations.jsonl"), &reports)?;

    let pairs: Vec<_> = inputs.iter().map(|i| (i.image.id().to_string(), i.ground_truth.expect("loaded"))).collect();
    let mut sft = Vec::new();
    emit_sft_dataset(&pairs, &mut sft).map_err(runtime)?;
    fs::write(cfg.out_dir.join("sft.jsonl"), sft).map_err(runtime)?;

    if dataset.manifest.accepted == 0 {
        eprintln!("warning: no trajectory passed curation ({} raw)", dataset.manifest.raw);
    }
    Ok(dataset.manifest)
}

/// Writes `probe_manifest.json` and `curriculum.jsonl`.
pub fn cmd_filter(
    cfg: &RunConfig,
    lookup: &dyn Fn(&str) -> Option<String>,
) -> Result<(ProbeManifest, Curriculum), CliError> {
    let inputs = load_inputs(cfg)?;
    let policy = build_policy(cfg.policy.as_ref(), "policy", lookup)?;
    let loop_cfg = cfg.loop_config(policy)?;
    let records = probe(&inputs, &loop_cfg, &cfg.filter, cfg.parallelism).map_err(|e| CliError::Config(e.to_string()))?;
    let manifest = ProbeManifest::build(&records, &cfg.filter).map_err(runtime)?;
    let curriculum = build_curriculum(&records, &cfg.filter).map_err(runtime)?;
    prepare_out_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("probe_manifest.json"), &json_pretty(&manifest)?)?;
    write_file(&cfg.out_dir.join("curriculum.jsonl"), &curriculum.to_jsonl())?;
    Ok((manifest, curriculum))
}

/// Writes `mapping.csv` (`original_id,anonymized_id`) and, for a ground
/// truth table, the renamed `ground_truth.csv`.
pub fn cmd_anonymize(
    cfg: &RunConfig,
    input: &Path,
    lookup: &dyn Fn(&str) -> Option<String>,
) -> Result<Vec<(String, String)>, CliError> {
    let salt = lookup(ANON_SALT_ENV)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| CliError::Config(format!("{ANON_SALT_ENV} is not set")))?;
    if !input.is_file() {
        return Err(CliError::Config(format!("input {} does not exist", input.display())));
    }
    let is_table = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let (mapping, renamed) = if is_table {
        let rows = read_ground_truth(input).map_err(|e| CliError::Config(e.to_string()))?;
        let (renamed, mapping) = anonymize_ground_truth(&rows, &salt).map_err(runtime)?;
        (mapping, Some(renamed))
    } else {
        let text = fs::read_to_string(input).map_err(runtime)?;
        let ids = text.lines().map(str::trim).filter(|l| !l.is_empty());
        (anonymize_corpus(ids, &salt).map_err(runtime)?, None)
    };
    prepare_out_dir(&cfg.out_dir)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["original_id", "anonymized_id"]).map_err(runtime)?;
    for (a, b) in &mapping {
        w.write_record([a, b]).map_err(runtime)?;
    }
    fs::write(cfg.out_dir.join("mapping.csv"), w.into_inner().map_err(runtime)?).map_err(runtime)?;
    if let Some(rows) = renamed {
        write_file(&cfg.out_dir.join("ground_truth.csv"), &write_ground_truth(&rows).map_err(runtime)?)?;
    }
    Ok(mapping)
}

/// Render `report.json` and `usage.json` from `dir`.
pub fn cmd_report(dir: &Path, format: ReportFormat) -> Result<String, CliError> {
    let read = |name: &str| {
        fs::read_to_string(dir.join(name)).map_err(|e| CliError::Config(format!("cannot read {}: {e}", dir.join(name).display())))
    };
    let eval = parse_eval_json(&read("report.json")?).map_err(runtime)?;
    let usage = parse_usage_json(&read("usage.json")?).map_err(runtime)?;
    let mut out = render_eval(&eval, format);
    if format == ReportFormat::Table {
        out.push('\n');
    }
    out.push_str(&render_usage(&usage, format));
    Ok(out)
}

fn execute(cli: &Cli, lookup: &dyn Fn(&str) -> Option<String>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_config(cli.config.as_deref(), &Overrides::from(&cli.flags), lookup)?;
    let say = |out: &mut dyn Write, msg: String| writeln!(out, "{msg}").map_err(runtime);
    match &cli.command {
        Command::Run => {
            let o = cmd_run(&cfg, lookup)?;
            stdout.write_all(render_eval(&o.eval, ReportFormat::Table).as_bytes()).map_err(runtime)?;
            say(stdout, format!("wrote {}", cfg.out_dir.display()))
        }
        Command::Datagen => {
            let m = cmd_datagen(&cfg, lookup)?;
            say(
                stdout,
                format!("raw {} accepted {} rate {:.3}; wrote {}", m.raw, m.accepted, m.acceptance_rate, cfg.out_dir.display()),
            )
        }
        Command::Filter => {
            let (m, c) = cmd_filter(&cfg, lookup)?;
            say(
                stdout,
                format!(
                    "{} images probed x{}; phase one {} phase two {}; wrote {}",
                    m.images.len(),
                    m.trials,
                    c.phase_one.len(),
                    c.phase_two.len(),
                    cfg.out_dir.display()
                ),
            )
        }
        Command::Anonymize { input } => {
            let map = cmd_anonymize(&cfg, input, lookup)?;
            say(stdout, format!("renamed {} ids; wrote {}", map.len(), cfg.out_dir.display()))
        }
        Command::Report { in_dir, format } => {
            let text = cmd_report(in_dir.as_deref().unwrap_or(&cfg.out_dir), *format)?;
            stdout.write_all(text.as_bytes()).map_err(runtime)
        }
    }
}

/// Parse `args` (including the program name), run the command and return
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_with(args, &|k| std::env::var(k).ok(), &mut std::io::stdout())
}

/// [`run_cli`] with an explicit environment and output sink.
pub fn run_cli_with<I, T>(args: I, lookup: &dyn Fn(&str) -> Option<String>, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, lookup, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests;
