use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use slowfast_core::config::parse_sigma;
use slowfast_core::entropy_gate::{parse_period, Period};
use slowfast_core::{Dataset, PipelineConfig, Theta};

const CONFIG_KEYS: &str = "\
Config file keys (TOML; flags override file values):
  seed, mock, dataset (ped2|avenue|shanghaitech), normalize_scores
  [paths]   scores, labels, train_scores, frames_root, kb, templates, out, report, curves
  [gate]    window, bins, sigma, theta (number | pNN | inf), period (integer | inf),
            entropy_mode (per_sample | per_bin)
  [kb]      tau, top_k, train_period (integer | inf), rag, aggregator (auto | medoid | llm)
  [fusion]  alpha, smooth_sigma (number | off)
  [client]  api_base, chat_model, vision_model, embed_model, embed_dim, image_mode (url | base64),
            max_inflight, max_frames, timeout_secs, retries,
            describe_temperature, train_temperature, test_temperature

Environment: SLOWFAST_API_BASE, SLOWFAST_API_KEY, SLOWFAST_CHAT_MODEL, SLOWFAST_EMBED_MODEL

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error";

#[derive(Debug, Parser)]
#[command(name = "slowfast", version, about = "Slow-fast video anomaly detection over per-frame score streams")]
#[command(after_long_help = CONFIG_KEYS)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Use the deterministic offline mock clients instead of HTTP endpoints.
    #[arg(long, global = true)]
    pub mock: bool,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Repeat for more detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(flatten)]
    pub overrides: Overrides,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine normal training videos into a knowledge base.
    BuildKb,
    /// Gate, analyze and fuse the test videos.
    Detect,
    /// Score fused curves against ground-truth labels.
    Evaluate {
        /// Directory of fused CSVs (default: <out>/fused).
        #[arg(long, value_name = "DIR")]
        fused_dir: Option<PathBuf>,
    },
    /// Run the four-row component ablation.
    Ablate,
    /// Detect, then evaluate.
    Run,
    /// Write a synthetic benchmark (scores, labels, training scores).
    Synth {
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        videos: usize,
        #[arg(long, default_value_t = 400)]
        frames: usize,
        #[arg(long)]
        noise: Option<f64>,
    },
}

fn theta(s: &str) -> Result<Theta, String> {
    s.parse().map_err(|e| format!("{e}"))
}

/// A smoothing sigma where `None` means off.
#[derive(Debug, Clone, Copy)]
pub struct Sigma(pub Option<f64>);

fn sigma(s: &str) -> Result<Sigma, String> {
    parse_sigma(s).map(Sigma)
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    #[arg(long, global = true, value_name = "PATH", help_heading = "Paths")]
    pub scores: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH", help_heading = "Paths")]
    pub labels: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH", help_heading = "Paths")]
    pub train_scores: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR", help_heading = "Paths")]
    pub frames_root: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH", help_heading = "Paths")]
    pub kb: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR", help_heading = "Paths")]
    pub templates: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR", help_heading = "Paths")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH", help_heading = "Paths")]
    pub report: Option<PathBuf>,
    /// Write per-video `frame_index,fused,label` CSVs here.
    #[arg(long, global = true, value_name = "DIR", help_heading = "Paths")]
    pub curves: Option<PathBuf>,

    /// Min-max normalize raw scores per video on load.
    #[arg(long, global = true, help_heading = "Gate")]
    pub normalize: bool,
    #[arg(long, global = true, help_heading = "Gate")]
    pub window_n: Option<usize>,
    #[arg(long, global = true, help_heading = "Gate")]
    pub bins: Option<usize>,
    /// Entropy smoothing sigma.
    #[arg(long, global = true, help_heading = "Gate")]
    pub sigma: Option<f64>,
    /// Entropy threshold: a number, a per-video percentile like p75, or inf.
    #[arg(long, global = true, value_parser = theta, help_heading = "Gate")]
    pub theta: Option<Theta>,
    /// Periodic sampling interval in windows at test time, or inf.
    #[arg(long, global = true, value_parser = parse_period, help_heading = "Gate")]
    pub period_t: Option<Period>,

    #[arg(long, global = true, help_heading = "Knowledge base")]
    pub tau: Option<f64>,
    #[arg(long, global = true, help_heading = "Knowledge base")]
    pub topk: Option<usize>,
    /// Sampling interval in windows when mining training videos, or inf.
    #[arg(long, global = true, value_parser = parse_period, help_heading = "Knowledge base")]
    pub train_period_t: Option<Period>,
    /// Assess without retrieved knowledge.
    #[arg(long, global = true, help_heading = "Knowledge base")]
    pub no_rag: bool,

    /// Dataset preset for the fusion weight.
    #[arg(long, global = true, value_parser = str::parse::<Dataset>, help_heading = "Fusion")]
    pub dataset: Option<Dataset>,
    #[arg(long, global = true, help_heading = "Fusion")]
    pub alpha: Option<f64>,
    /// Final smoothing sigma, or off.
    #[arg(long, global = true, value_parser = sigma, help_heading = "Fusion")]
    pub smooth_sigma: Option<Sigma>,

    #[arg(long, global = true, help_heading = "Client")]
    pub max_inflight: Option<usize>,
}

impl Cli {
    /// Applies the global flags and overrides on top of `cfg`.
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        let o = &self.overrides;
        if self.mock {
            cfg.mock = true;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut cfg.paths.scores, &o.scores);
        set(&mut cfg.paths.labels, &o.labels);
        set(&mut cfg.paths.train_scores, &o.train_scores);
        set(&mut cfg.paths.frames_root, &o.frames_root);
        set(&mut cfg.paths.kb, &o.kb);
        set(&mut cfg.paths.templates, &o.templates);
        set(&mut cfg.paths.out, &o.out);
        set(&mut cfg.paths.report, &o.report);
        set(&mut cfg.paths.curves, &o.curves);
        if o.normalize {
            cfg.normalize_scores = true;
        }
        if let Some(v) = o.window_n {
            cfg.gate.window = v;
        }
        if let Some(v) = o.bins {
            cfg.gate.bins = v;
        }
        if let Some(v) = o.sigma {
            cfg.gate.sigma = v;
        }
        if let Some(v) = o.theta {
            cfg.gate.theta = v;
        }
        if let Some(v) = o.period_t {
            cfg.gate.period = v;
        }
        if let Some(v) = o.tau {
            cfg.kb.tau = v;
        }
        if let Some(v) = o.topk {
            cfg.kb.top_k = v;
        }
        if let Some(v) = o.train_period_t {
            cfg.kb.train_period = v;
        }
        if o.no_rag {
            cfg.kb.rag = false;
        }
        if let Some(v) = o.dataset {
            cfg.dataset = Some(v);
        }
        if let Some(v) = o.alpha {
            cfg.fusion.alpha = Some(v);
        }
        if let Some(Sigma(v)) = o.smooth_sigma {
            cfg.fusion.smooth_sigma = v;
        }
        if let Some(v) = o.max_inflight {
            cfg.client.max_inflight = v;
        }
    }
}
