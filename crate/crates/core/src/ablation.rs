//! Component ablation: each row adds one piece of the pipeline on top of
//! the previous one.
//!
//! | row | windows sent to the slow path | integration | retrieval |
//! |-----|-------------------------------|-------------|-----------|
//! | `periodic`     | periodic only        | replace            | no  |
//! | `+entropy`     | entropy and periodic | replace            | no  |
//! | `+integration` | entropy and periodic | weighted, smoothed | no  |
//! | `full`         | entropy and periodic | weighted, smoothed | yes |

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::entropy_gate::Theta;
use crate::evaluation::EvalReport;
use crate::ingest::{GroundTruth, ScoreSeries};
use crate::knowledge_base::KnowledgeBase;
use crate::pipeline::{detect, evaluate, evaluate_fast, Clients, PipelineError};

pub const ROW_NAMES: [&str; 4] = ["periodic", "+entropy", "+integration", "full"];

/// The four configurations derived from `base`.
pub fn ablation_configs(base: &PipelineConfig) -> Vec<(&'static str, PipelineConfig)> {
    let mut periodic = base.clone();
    periodic.gate.theta = Theta::Absolute(f64::INFINITY);
    periodic.fusion.alpha = Some(1.0);
    periodic.fusion.smooth_sigma = None;
    periodic.kb.rag = false;

    let mut entropy = base.clone();
    entropy.fusion.alpha = Some(1.0);
    entropy.fusion.smooth_sigma = None;
    entropy.kb.rag = false;

    let mut integration = base.clone();
    integration.kb.rag = false;

    let mut full = base.clone();
    full.kb.rag = true;

    ROW_NAMES.into_iter().zip([periodic, entropy, integration, full]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub fast_only: EvalReport,
    pub rows: Vec<EvalReport>,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Micro AUC never drops from one row to the next.
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].micro_auc >= w[0].micro_auc)
    }
}

pub fn run_ablation(
    base: &PipelineConfig,
    clients: &Clients,
    series: &[ScoreSeries],
    truth: &[GroundTruth],
    kb: &KnowledgeBase,
) -> Result<AblationReport, PipelineError> {
    let mut fast_only = evaluate_fast(series, truth, base.echo())?;
    fast_only.name = Some("fast_only".into());
    let mut rows = Vec::with_capacity(ROW_NAMES.len());
    for (name, cfg) in ablation_configs(base) {
        let out = detect(&cfg, clients, series, cfg.kb.rag.then_some(kb))?;
        let mut report = evaluate(&out.fused, truth, cfg.echo())?;
        report.name = Some(name.to_string());
        report.intervention_rate = Some(out.summary.intervention_rate);
        log::info!("ablation {name}: micro {:.4} macro {:.4}", report.micro_auc, report.macro_auc);
        rows.push(report);
    }
    Ok(AblationReport { fast_only, rows })
}
