mod args;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use slowfast_core::ablation::run_ablation;
use slowfast_core::ingest::{GroundTruth, ScoreSeries};
use slowfast_core::pipeline::{self, Clients, PipelineError};
use slowfast_core::synthetic::{SyntheticConfig, SyntheticDataset};
use slowfast_core::{EvalReport, KnowledgeBase, PipelineConfig};

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cli.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn labels_if_present(cfg: &PipelineConfig) -> Result<Vec<GroundTruth>, PipelineError> {
    match &cfg.paths.labels {
        Some(_) => pipeline::load_truth(cfg),
        None => Ok(Vec::new()),
    }
}

/// Mock clients see the labels of every video they may be asked about.
fn clients(cfg: &PipelineConfig, test: &[ScoreSeries], truth: &[GroundTruth]) -> Result<Clients, PipelineError> {
    if !cfg.mock {
        return Clients::live(cfg);
    }
    let train = match &cfg.paths.train_scores {
        Some(p) if p.exists() => pipeline::load_train_scores(cfg)?,
        _ => Vec::new(),
    };
    Ok(Clients::oracle(test, truth, &train))
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(value: &impl serde::Serialize) {
    emit(&format!("{}\n", serde_json::to_string_pretty(value).expect("value serializes")));
}

fn emit_report(cfg: &PipelineConfig, report: &EvalReport, default: Option<PathBuf>) -> Result<(), PipelineError> {
    match cfg.paths.report.clone().or(default) {
        Some(path) => {
            pipeline::write_text(&path, &report.to_json())?;
            eprintln!("micro AUC {:.4}, macro AUC {:.4} -> {}", report.micro_auc, report.macro_auc, path.display());
        }
        None => emit(&report.to_json()),
    }
    Ok(())
}

fn build_kb(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let train = pipeline::load_train_scores(cfg)?;
    let kb_path = cfg
        .paths
        .kb
        .clone()
        .ok_or_else(|| PipelineError::Config("no output path for the knowledge base: pass --kb <path>".into()))?;
    let clients = clients(cfg, &[], &[])?;
    let (kb, summary) = pipeline::build_kb(cfg, &clients, &train)?;
    kb.persist(&kb_path)?;
    let mut partitions = serde_json::Map::new();
    for (scene, label) in kb.partition_keys() {
        let n = kb.partition(&scene, label).count();
        partitions.insert(format!("{scene}/{label}"), n.into());
    }
    print_json(&serde_json::json!({
        "kb": kb_path,
        "patterns": kb.len(),
        "partitions": partitions,
        "build": summary,
    }));
    Ok(())
}

fn load_kb(cfg: &PipelineConfig, clients: &Clients) -> Result<Option<KnowledgeBase>, PipelineError> {
    pipeline::load_kb_for_detection(cfg, clients.embedder.dim())
}

fn detect(cfg: &PipelineConfig) -> Result<pipeline::DetectOutput, PipelineError> {
    let test = pipeline::load_test_scores(cfg)?;
    let truth = labels_if_present(cfg)?;
    let clients = clients(cfg, &test, &truth)?;
    let kb = load_kb(cfg, &clients)?;
    let out = pipeline::detect(cfg, &clients, &test, kb.as_ref())?;
    out.write(&out_dir(cfg))?;
    eprintln!(
        "intervention rate {:.4} ({} of {} windows)",
        out.summary.intervention_rate, out.summary.selected, out.summary.windows
    );
    Ok(out)
}

fn evaluate(cfg: &PipelineConfig, fused_dir: Option<&Path>) -> Result<(), PipelineError> {
    let dir = fused_dir.map(Path::to_path_buf).unwrap_or_else(|| out_dir(cfg).join("fused"));
    let fused = pipeline::read_fused_dir(&dir)?;
    let truth = pipeline::load_truth(cfg)?;
    let report = pipeline::evaluate(&fused, &truth, cfg.echo())?;
    if let Some(curves) = &cfg.paths.curves {
        pipeline::write_curves(curves, &fused, &truth)?;
    }
    emit_report(cfg, &report, None)
}

fn run_all(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let truth = pipeline::load_truth(cfg)?;
    let out = detect(cfg)?;
    let mut report = pipeline::evaluate(&out.fused, &truth, cfg.echo())?;
    report.intervention_rate = Some(out.summary.intervention_rate);
    if let Some(curves) = &cfg.paths.curves {
        pipeline::write_curves(curves, &out.fused, &truth)?;
    }
    emit_report(cfg, &report, Some(out_dir(cfg).join("report.json")))
}

fn ablate(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let test = pipeline::load_test_scores(cfg)?;
    let truth = pipeline::load_truth(cfg)?;
    let clients = clients(cfg, &test, &truth)?;
    let mut with_rag = cfg.clone();
    with_rag.kb.rag = true;
    let kb = load_kb(&with_rag, &clients)?.expect("retrieval enabled");
    let report = run_ablation(cfg, &clients, &test, &truth, &kb)?;
    for row in &report.rows {
        eprintln!(
            "{:<14} micro {:.4}  macro {:.4}",
            row.name.as_deref().unwrap_or(""),
            row.micro_auc,
            row.macro_auc
        );
    }
    match &cfg.paths.report {
        Some(path) => pipeline::write_text(path, &report.to_json()),
        None => {
            emit(&report.to_json());
            Ok(())
        }
    }
}

fn synth(cfg: &PipelineConfig, dir: &Path, videos: usize, frames: usize, noise: Option<f64>) -> Result<(), PipelineError> {
    let defaults = SyntheticConfig::default();
    let sc = SyntheticConfig {
        videos,
        frames,
        noise: noise.unwrap_or(defaults.noise),
        window: cfg.gate.window,
        seed: cfg.seed,
        ..defaults
    };
    if frames < sc.window || !(sc.noise >= 0.0) {
        return Err(PipelineError::Config("synth needs --frames >= window and a non-negative --noise".into()));
    }
    SyntheticDataset::generate(&sc).write(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    eprintln!("wrote synthetic benchmark to {}", dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = config(cli)?;
    match &cli.command {
        Command::BuildKb => build_kb(&cfg),
        Command::Detect => detect(&cfg).map(|out| print_json(&out.summary)),
        Command::Evaluate { fused_dir } => evaluate(&cfg, fused_dir.as_deref()),
        Command::Ablate => ablate(&cfg),
        Command::Run => run_all(&cfg),
        Command::Synth {
            dir,
            videos,
            frames,
            noise,
        } => synth(&cfg, dir, *videos, *frames, *noise),
    }
}
