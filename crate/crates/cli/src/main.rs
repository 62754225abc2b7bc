use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hvsim_core::experiment::{check_trend, run_experiment, ExperimentConfig, ResultsTable, StackSource, Variant};
use hvsim_core::observer::{auc_with_ci, percent_correct, read_score_log, ScoreRecord};
use hvsim_core::stack::{stack_file_name, write_stack};
use hvsim_core::synth::{build_dataset, SynthConfig};
use hvsim_core::{ImageStack, Label};
use hvsim_study::StudyConfig;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "hvsim", version, about = "HVS-modeled numerical observer and reading-study tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a twin healthy/lesion dataset from a synthesis config
    Synth {
        config: PathBuf,
        /// Output directory (overrides `out_dir` in the config)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the perception stage on one stack, for inspection
    Perceive {
        config: PathBuf,
        stack_id: String,
        /// Write each perceived volume as little-endian f32 here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full experiment and write the results table
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Summarize a results table (.csv or .json) and check the masking trend
    Report {
        results: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Serve the reading study over HTTP
    StudyServe {
        config: PathBuf,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Percent correct and AUC per observer and complexity from a JSONL score log
    StudyAnalyze {
        scores: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug)]
struct CliError {
    code: String,
    message: String,
}

impl From<hvsim_core::Error> for CliError {
    fn from(e: hvsim_core::Error) -> Self {
        CliError {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<hvsim_study::StudyError> for CliError {
    fn from(e: hvsim_study::StudyError) -> Self {
        CliError {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

fn fail(code: &str, message: impl Into<String>) -> CliError {
    CliError {
        code: code.to_string(),
        message: message.into(),
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Deserialize)]
struct SynthJob {
    #[serde(default)]
    out_dir: Option<PathBuf>,
    #[serde(flatten)]
    synth: SynthConfig,
}

fn synth(config: &Path, out: Option<PathBuf>) -> CliResult {
    let text = fs::read_to_string(config).map_err(|e| hvsim_core::Error::io(config, e))?;
    let job: SynthJob = serde_json::from_str(&text).map_err(hvsim_core::Error::from)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let out = out
        .or(job.out_dir)
        .map(|p| if p.is_relative() { base.join(p) } else { p })
        .unwrap_or_else(|| base.join("dataset"));
    let (manifest, clips) = build_dataset(&job.synth, &out)?;
    let summary = json!({
        "out_dir": out,
        "stacks": manifest.entries.len(),
        "class_counts": manifest.class_counts(),
        "clipped": clips,
    });
    println!("{summary}");
    Ok(())
}

#[derive(Serialize)]
struct PerceiveSummary {
    model: String,
    method: String,
    mean: f64,
    rms: f64,
    min: f64,
    max: f64,
    path: Option<PathBuf>,
}

fn perceive(config: &Path, stack_id: &str, out: Option<PathBuf>) -> CliResult {
    let config = ExperimentConfig::load(config)?;
    config.validate()?;
    let source = StackSource::open(&config.dataset)?;
    let index = source
        .find(stack_id)
        .ok_or_else(|| fail("unknown_stack", format!("no stack {stack_id} in dataset")))?;
    if let Some(dir) = &out {
        fs::create_dir_all(dir).map_err(|e| hvsim_core::Error::io(dir, e))?;
    }
    source.with_stack(index, |stack| {
        for &variant in &config.variants {
            let volume = config.perceiver(variant, stack.dims)?.perceive(stack)?;
            let (min, max) = volume
                .data
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let path = match &out {
                Some(dir) => {
                    let name = format!("{}.{}.{}", stack.id, variant.model, variant.method);
                    let path = dir.join(stack_file_name(&name));
                    let voxels = volume.data.iter().map(|&v| v as f32).collect();
                    write_stack(&path, &ImageStack::new(stack.dims, voxels)?)?;
                    Some(path)
                }
                None => None,
            };
            let summary = PerceiveSummary {
                model: variant.model.to_string(),
                method: variant.method.to_string(),
                mean: volume.mean(),
                rms: volume.rms(),
                min,
                max,
                path,
            };
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
        Ok(())
    })?;
    Ok(())
}

fn run(config: &Path, out: Option<PathBuf>, threads: Option<usize>) -> CliResult {
    let mut config = ExperimentConfig::load(config)?;
    if out.is_some() {
        config.output_dir = out;
    }
    if threads.is_some() {
        config.threads = threads;
    }
    let table = run_experiment(&config)?;
    match &config.output_dir {
        Some(dir) => println!(
            "{}",
            json!({
                "results_csv": dir.join("results.csv"),
                "results_json": dir.join("results.json"),
                "rows": table.rows.len(),
                "config_hash": table.config_hash,
            })
        ),
        None => print!("{}", table.to_csv()),
    }
    Ok(())
}

fn report(results: &Path, as_json: bool) -> CliResult {
    let table = ResultsTable::load(results)?;
    let trend = check_trend(&table);
    if as_json {
        let trend = match &trend {
            Ok(t) => serde_json::to_value(t).expect("trend serializes"),
            Err(e) => json!({ "error": e.code(), "message": e.to_string() }),
        };
        println!("{}", json!({ "config_hash": table.config_hash, "rows": table.rows, "trend": trend }));
        return Ok(());
    }
    let mut variants: Vec<Variant> = table.rows.iter().map(|r| r.variant()).collect();
    variants.sort();
    variants.dedup();
    let mut text = String::new();
    for v in variants {
        let _ = write!(text, "{:<18}{:<4}", v.model.to_string(), v.method.to_string());
        let mut rows: Vec<_> = table.rows.iter().filter(|r| r.variant() == v).collect();
        rows.sort_by_key(|r| r.complexity);
        for r in rows {
            let _ = write!(text, "  L{} {:.3} [{:.3},{:.3}]", r.complexity, r.auc, r.ci_low, r.ci_high);
        }
        text.push('\n');
    }
    match trend {
        Ok(t) => {
            for v in &t.variants {
                let _ = writeln!(text, "spearman {} {}: {:+.3}", v.model, v.method, v.spearman);
            }
            let _ = writeln!(text, "masking+PM decreasing with complexity: {}", t.masking_pm_decreasing);
            let _ = writeln!(text, "masking lowers PM AUC: {}", t.masking_reduces_auc);
        }
        Err(e) => {
            let _ = writeln!(text, "trend check skipped: {e}");
        }
    }
    print!("{text}");
    Ok(())
}

fn study_serve(config: &Path, bind: Option<String>) -> CliResult {
    let mut config = StudyConfig::load(config)?;
    if let Some(bind) = bind {
        config.bind = bind;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| fail("io", e.to_string()))?;
    runtime.block_on(hvsim_study::serve(config))?;
    Ok(())
}

#[derive(Serialize)]
struct LevelAuc {
    auc: f64,
    ci_low: f64,
    ci_high: f64,
    n_healthy: usize,
    n_lesion: usize,
}

#[derive(Serialize)]
struct ObserverSummary {
    records: usize,
    percent_correct: Option<BTreeMap<u8, f64>>,
    auc: BTreeMap<u8, LevelAuc>,
}

fn analyze(records: &[ScoreRecord]) -> CliResult<BTreeMap<String, ObserverSummary>> {
    let mut by_observer: BTreeMap<String, Vec<ScoreRecord>> = BTreeMap::new();
    for r in records {
        by_observer.entry(r.observer_id.clone()).or_default().push(r.clone());
    }
    let mut out = BTreeMap::new();
    for (observer, recs) in by_observer {
        let ratings = recs.iter().all(ScoreRecord::is_rating);
        let pc = if ratings { Some(percent_correct(&recs)?) } else { None };
        let mut auc = BTreeMap::new();
        let levels: std::collections::BTreeSet<u8> = recs.iter().map(|r| r.complexity).collect();
        for level in levels {
            let pick = |label| -> Vec<f64> {
                recs.iter()
                    .filter(|r| r.complexity == level && r.label == label)
                    .map(|r| r.score)
                    .collect()
            };
            let (healthy, lesion) = (pick(Label::Healthy), pick(Label::Lesion));
            if healthy.is_empty() || lesion.is_empty() {
                continue;
            }
            let est = auc_with_ci(&healthy, &lesion, &Default::default())?;
            auc.insert(
                level,
                LevelAuc {
                    auc: est.auc,
                    ci_low: est.ci_low,
                    ci_high: est.ci_high,
                    n_healthy: healthy.len(),
                    n_lesion: lesion.len(),
                },
            );
        }
        out.insert(
            observer,
            ObserverSummary {
                records: recs.len(),
                percent_correct: pc,
                auc,
            },
        );
    }
    Ok(out)
}

fn study_analyze(scores: &Path, as_json: bool) -> CliResult {
    let records = read_score_log(scores)?;
    if records.is_empty() {
        return Err(fail("empty_log", format!("{} holds no score records", scores.display())));
    }
    let summary = analyze(&records)?;
    if as_json {
        println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        return Ok(());
    }
    for (observer, s) in &summary {
        println!("observer {observer} ({} records)", s.records);
        let levels: std::collections::BTreeSet<u8> = s
            .auc
            .keys()
            .copied()
            .chain(s.percent_correct.iter().flat_map(|m| m.keys().copied()))
            .collect();
        for level in levels {
            let mut line = format!("  complexity {level}:");
            if let Some(pc) = s.percent_correct.as_ref().and_then(|m| m.get(&level)) {
                let _ = write!(line, " percent correct {pc:.4}");
            }
            if let Some(a) = s.auc.get(&level) {
                let _ = write!(line, " AUC {:.3} [{:.3}, {:.3}]", a.auc, a.ci_low, a.ci_high);
            }
            println!("{line}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth { config, out } => synth(&config, out),
        Command::Perceive { config, stack_id, out } => perceive(&config, &stack_id, out),
        Command::Run { config, out, threads } => run(&config, out, threads),
        Command::Report { results, json } => report(&results, json),
        Command::StudyServe { config, bind } => study_serve(&config, bind),
        Command::StudyAnalyze { scores, json } => study_analyze(&scores, json),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line: Value = json!({ "error": e.code, "message": e.message });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
