//! Pipeline configuration: one JSON file naming the inputs and parameters;
//! command-line flags override individual entries. Relative paths resolve
//! against the config file's directory.

use std::path::{Path, PathBuf};

use ctxray::derive::DeriveConfig;
use ctxray::eval::IouMode;
use ctxray::project::{Cleanup2D, ProjectionParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub volume: PathBuf,
    pub input_labels: PathBuf,
    pub taxonomy: PathBuf,
    pub lexicon: PathBuf,
    pub embeddings: PathBuf,
    pub reports: PathBuf,
    /// Optional pre-tagged reports; takes precedence over `reports`.
    pub pretagged_reports: Option<PathBuf>,
    pub annotations: PathBuf,
    pub proposals: PathBuf,
    pub derived_dir: PathBuf,
    pub projected_dir: PathBuf,
    pub groundings: PathBuf,
    pub hitrate_metrics: PathBuf,
    pub topk_metrics: PathBuf,
    pub derive: DeriveConfig,
    pub projection: ProjectionParams,
    pub cleanup: Cleanup2D,
    pub k: usize,
    pub iou_thresholds: Vec<f64>,
    pub iou_mode: IouMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            volume: "volume.json".into(),
            input_labels: "labels".into(),
            taxonomy: "taxonomy.json".into(),
            lexicon: "lexicon.tsv".into(),
            embeddings: "embeddings.vec".into(),
            reports: "reports.json".into(),
            pretagged_reports: None,
            annotations: "annotations.json".into(),
            proposals: "proposals.json".into(),
            derived_dir: "derived".into(),
            projected_dir: "projected".into(),
            groundings: "groundings.json".into(),
            hitrate_metrics: "metrics_hitrate.json".into(),
            topk_metrics: "metrics_topk.json".into(),
            derive: DeriveConfig::default(),
            projection: ProjectionParams::default(),
            cleanup: Cleanup2D::default(),
            k: 5,
            iou_thresholds: vec![0.25, 0.5, 0.75],
            iou_mode: IouMode::Inclusive,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| format!("malformed config: {e}"))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        fix(&mut self.volume);
        fix(&mut self.input_labels);
        fix(&mut self.taxonomy);
        fix(&mut self.lexicon);
        fix(&mut self.embeddings);
        fix(&mut self.reports);
        if let Some(p) = &mut self.pretagged_reports {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        fix(&mut self.annotations);
        fix(&mut self.proposals);
        fix(&mut self.derived_dir);
        fix(&mut self.projected_dir);
        fix(&mut self.groundings);
        fix(&mut self.hitrate_metrics);
        fix(&mut self.topk_metrics);
    }

    /// Config contents as written next to a phantom kit (all paths relative).
    pub fn kit_defaults() -> Self {
        Self::default()
    }
}
