//! Pipeline entry points: phantom generation, label derivation, projection,
//! grounding and evaluation. Failures print a machine-readable envelope
//! `{"error":"<module>.<code>","detail":...}` on stderr and exit nonzero.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::PipelineConfig;
use ctxray::data::{
    load_label_volume, load_taxonomy, load_volume, save_label_volume, save_mask, save_volume,
    DataError, LabelVolume, Mask3D, Volume3D, VolumeDtype,
};
use ctxray::derive::{derive_all, DeriveAllError};
use ctxray::eval::{
    build_hitrate_report, build_topk_report, load_annotations, load_proposals, save_metrics,
    EvalError,
};
use ctxray::ground::{
    ground_phrases, load_groundings, save_groundings, GroundError, GroundingDoc, RegionSet,
};
use ctxray::language::{
    filter_phrases, load_embeddings, load_lexicon, load_pretagged_reports, load_reports,
    split_sentences, tag_phrase, LanguageError, TaggedPhrase,
};
use ctxray::phantom::{self, PhantomError};
use ctxray::project::{
    intensity_project, project_labels, write_image, Image2D, Mask2D, ProjectError, ProjectionAxis,
};

#[derive(Parser)]
#[command(
    name = "ctxray",
    version,
    about = "CT to pseudo-X-ray projection, anatomy labels and phrase grounding"
)]
struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ViewArg {
    Frontal,
    Lateral,
}

impl From<ViewArg> for ProjectionAxis {
    fn from(v: ViewArg) -> Self {
        match v {
            ViewArg::Frontal => ProjectionAxis::Frontal,
            ViewArg::Lateral => ProjectionAxis::Lateral,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural CT phantom and its demo input kit.
    Phantom {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cube side in voxels (at least 32).
        #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(32..))]
        size: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive the composed hierarchical label volume from a CT plus input
    /// organ masks.
    Derive {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        volume: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project the CT and its labels into a pseudo-X-ray per view.
    Project {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to one view (default: both).
        #[arg(long, value_enum)]
        view: Option<ViewArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ground report phrases onto the projected anatomy regions.
    Ground {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        view: Option<ViewArg>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score proposals or groundings against annotations.
    Eval {
        #[command(subcommand)]
        which: EvalCommand,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Hit rate of proposal boxes at each IoU threshold.
    Hitrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "iou", value_delimiter = ',')]
        iou: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-k region retrieval at each (k, IoU) pair.
    Topk {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "k", value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long = "iou", value_delimiter = ',')]
        iou: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Data(DataError),
    Derive(DeriveAllError),
    Project(ProjectError),
    Language(LanguageError),
    Ground(GroundError),
    Eval(EvalError),
    Phantom(PhantomError),
    Config(String),
    Io(std::io::Error),
}

macro_rules! from_err {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::$variant(e)
            }
        }
    };
}
from_err!(Data, DataError);
from_err!(Derive, DeriveAllError);
from_err!(Project, ProjectError);
from_err!(Language, LanguageError);
from_err!(Ground, GroundError);
from_err!(Eval, EvalError);
from_err!(Phantom, PhantomError);
from_err!(Io, std::io::Error);

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Data(e) => e.code(),
            CliError::Derive(e) => e.code(),
            CliError::Project(e) => e.code(),
            CliError::Language(e) => e.code(),
            CliError::Ground(e) => e.code(),
            CliError::Eval(e) => e.code(),
            CliError::Phantom(e) => e.code(),
            CliError::Config(_) => "cli.InvalidConfig",
            CliError::Io(_) => "cli.IoFailure",
        }
    }

    fn detail(&self) -> String {
        match self {
            CliError::Data(e) => e.to_string(),
            CliError::Derive(e) => e.to_string(),
            CliError::Project(e) => e.to_string(),
            CliError::Language(e) => e.to_string(),
            CliError::Ground(e) => e.to_string(),
            CliError::Eval(e) => e.to_string(),
            CliError::Phantom(e) => e.to_string(),
            CliError::Config(d) => d.clone(),
            CliError::Io(e) => e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // ignore AlreadyInitialized when tests drive main() twice
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let envelope = serde_json::json!({ "error": e.code(), "detail": e.detail() });
            eprintln!("{envelope}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Phantom { seed, size, out } => cmd_phantom(seed, size as usize, &out),
        Command::Derive {
            config,
            volume,
            labels,
            taxonomy,
            out,
        } => {
            let mut cfg = PipelineConfig::load(&config).map_err(CliError::Config)?;
            if let Some(p) = volume {
                cfg.volume = p;
            }
            if let Some(p) = labels {
                cfg.input_labels = p;
            }
            if let Some(p) = taxonomy {
                cfg.taxonomy = p;
            }
            if let Some(p) = out {
                cfg.derived_dir = p;
            }
            cmd_derive(&cfg)
        }
        Command::Project { config, view, out } => {
            let mut cfg = PipelineConfig::load(&config).map_err(CliError::Config)?;
            if let Some(p) = out {
                cfg.projected_dir = p;
            }
            cmd_project(&cfg, views(view))
        }
        Command::Ground {
            config,
            view,
            k,
            out,
        } => {
            let mut cfg = PipelineConfig::load(&config).map_err(CliError::Config)?;
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(p) = out {
                cfg.groundings = p;
            }
            cmd_ground(&cfg, views(view))
        }
        Command::Eval { which } => match which {
            EvalCommand::Hitrate { config, iou, out } => {
                let mut cfg = PipelineConfig::load(&config).map_err(CliError::Config)?;
                if let Some(taus) = iou {
                    cfg.iou_thresholds = taus;
                }
                if let Some(p) = out {
                    cfg.hitrate_metrics = p;
                }
                cmd_eval_hitrate(&cfg)
            }
            EvalCommand::Topk {
                config,
                k,
                iou,
                out,
            } => {
                let mut cfg = PipelineConfig::load(&config).map_err(CliError::Config)?;
                if let Some(taus) = iou {
                    cfg.iou_thresholds = taus;
                }
                if let Some(p) = out {
                    cfg.topk_metrics = p;
                }
                let ks = k.unwrap_or_else(|| vec![1, 5, 10]);
                cmd_eval_topk(&cfg, &ks)
            }
        },
    }
}

fn views(arg: Option<ViewArg>) -> Vec<ProjectionAxis> {
    match arg {
        Some(v) => vec![v.into()],
        None => vec![ProjectionAxis::Frontal, ProjectionAxis::Lateral],
    }
}

fn view_name(view: ProjectionAxis) -> &'static str {
    match view {
        ProjectionAxis::Frontal => "frontal",
        ProjectionAxis::Lateral => "lateral",
    }
}

fn cmd_phantom(seed: u64, size: usize, out: &Path) -> Result<(), CliError> {
    let phantom = phantom::generate(seed, size);
    phantom::write_kit(&phantom, seed, out)?;
    let cfg = PipelineConfig::kit_defaults();
    let text = serde_json::to_string_pretty(&cfg).expect("config serialization");
    std::fs::write(out.join("config.json"), text)?;
    Ok(())
}

fn cmd_derive(cfg: &PipelineConfig) -> Result<(), CliError> {
    let volume = load_volume(&cfg.volume)?;
    let inputs = load_label_volume(&cfg.input_labels)?;
    let tax = load_taxonomy(&cfg.taxonomy)?;
    let output = derive_all(&volume, &inputs, &tax, &cfg.derive)?;
    save_label_volume(&output.labels, cfg.derived_dir.join("labels"))?;
    save_mask(&output.body, cfg.derived_dir.join("body"))?;
    save_mask(&output.bone, cfg.derived_dir.join("bone"))?;
    let warnings = serde_json::json!({ "warnings": output.warnings });
    std::fs::write(
        cfg.derived_dir.join("warnings.json"),
        serde_json::to_string_pretty(&warnings).expect("warning serialization"),
    )?;
    Ok(())
}

fn cmd_project(cfg: &PipelineConfig, views: Vec<ProjectionAxis>) -> Result<(), CliError> {
    let volume = load_volume(&cfg.volume)?;
    let tax = load_taxonomy(&cfg.taxonomy)?;
    let labels = load_label_volume(cfg.derived_dir.join("labels"))?;
    let body = ctxray::data::load_mask(cfg.derived_dir.join("body"))?;
    let bone = ctxray::data::load_mask(cfg.derived_dir.join("bone"))?;
    for view in views {
        let params = ctxray::project::ProjectionParams {
            axis: view,
            ..cfg.projection.clone()
        };
        let image = intensity_project(&volume, &body, &bone, &params)?;
        let name = view_name(view);
        write_image(&image, cfg.projected_dir.join(format!("{name}.pgm")))?;
        save_float_image(&image, &cfg.projected_dir.join(format!("{name}_float")))?;

        let visible = ctxray::project::filter_labels_for_view(&labels, &tax, view)?;
        let regions = project_labels(&visible, &params, cfg.cleanup);
        let mut flat = LabelVolume::new(
            [1, image.shape()[0], image.shape()[1]],
            labels.taxonomy_ref(),
        );
        for (id, mask) in &regions {
            flat.insert(id.clone(), mask2d_to_3d(mask))?;
        }
        save_label_volume(&flat, cfg.projected_dir.join(format!("{name}_regions")))?;
    }
    Ok(())
}

fn save_float_image(image: &Image2D, stem: &Path) -> Result<(), CliError> {
    let [h, w] = image.shape();
    let voxels: Vec<f32> = image.pixels().iter().map(|&p| p as f32).collect();
    let volume =
        Volume3D::new([1, h, w], [1.0, 1.0, 1.0], voxels).expect("image pixels are finite");
    save_volume(&volume, stem, VolumeDtype::F32)?;
    Ok(())
}

fn mask2d_to_3d(mask: &Mask2D) -> Mask3D {
    let [h, w] = mask.shape();
    Mask3D::from_bits([1, h, w], mask.bits().to_vec()).expect("bit count matches")
}

fn load_region_set(dir: &Path, view: ProjectionAxis) -> Result<RegionSet, CliError> {
    let flat = load_label_volume(dir)?;
    let [_, h, w] = flat.shape();
    let mut set = RegionSet::new(view, [h, w]);
    for (id, mask) in flat.iter() {
        set.insert(id, Mask2D::from_bits([h, w], mask.bits().to_vec()));
    }
    Ok(set)
}

/// Phrases per report: split + tag + filter, or the pre-tagged path when
/// configured.
fn report_phrases(cfg: &PipelineConfig) -> Result<Vec<(String, Vec<TaggedPhrase>)>, CliError> {
    if let Some(pretagged) = &cfg.pretagged_reports {
        let reports = load_pretagged_reports(pretagged)?;
        return Ok(reports
            .into_iter()
            .map(|r| {
                let phrases =
                    filter_phrases(r.phrases.into_iter().map(|p| p.into_tagged()).collect());
                (r.id, phrases)
            })
            .collect());
    }
    let lex = load_lexicon(&cfg.lexicon)?;
    let reports = load_reports(&cfg.reports)?;
    Ok(reports
        .into_iter()
        .map(|r| {
            let phrases = split_sentences(&r)
                .iter()
                .map(|text| tag_phrase(text, &lex))
                .collect();
            (r.id, filter_phrases(phrases))
        })
        .collect())
}

fn cmd_ground(cfg: &PipelineConfig, views: Vec<ProjectionAxis>) -> Result<(), CliError> {
    let tax = load_taxonomy(&cfg.taxonomy)?;
    let lex = load_lexicon(&cfg.lexicon)?;
    let table = load_embeddings(&cfg.embeddings)?;
    let reports = report_phrases(cfg)?;
    let mut docs: Vec<GroundingDoc> = Vec::new();
    for view in views {
        let dir = cfg
            .projected_dir
            .join(format!("{}_regions", view_name(view)));
        let regions = load_region_set(&dir, view)?;
        for (report_id, phrases) in &reports {
            docs.push(ground_phrases(
                report_id, phrases, &regions, &tax, &lex, &table, cfg.k,
            )?);
        }
    }
    if let Some(dir) = cfg.groundings.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_groundings(&docs, &cfg.groundings)?;
    Ok(())
}

fn cmd_eval_hitrate(cfg: &PipelineConfig) -> Result<(), CliError> {
    let gts = load_annotations(&cfg.annotations)?;
    let proposals = load_proposals(&cfg.proposals)?;
    let report = build_hitrate_report(&gts, &proposals, &cfg.iou_thresholds, cfg.iou_mode)?;
    save_metrics(&report, &cfg.hitrate_metrics)?;
    print_metrics(&report);
    Ok(())
}

fn cmd_eval_topk(cfg: &PipelineConfig, ks: &[usize]) -> Result<(), CliError> {
    let gts = load_annotations(&cfg.annotations)?;
    let groundings = load_groundings(&cfg.groundings)?;
    let report = build_topk_report(&gts, &groundings, ks, &cfg.iou_thresholds, cfg.iou_mode)?;
    save_metrics(&report, &cfg.topk_metrics)?;
    print_metrics(&report);
    Ok(())
}

fn print_metrics(report: &ctxray::eval::MetricsReport) {
    for (view, metrics) in &report.views {
        if !metrics.hit_rate.is_empty() {
            let cells: Vec<String> = metrics
                .hit_rate
                .iter()
                .map(|(tau, v)| format!("HR@{tau}={v}"))
                .collect();
            println!(
                "{view} (n={}): {}",
                metrics.annotation_count,
                cells.join(" ")
            );
        }
        let mut rows: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for (k, per_tau) in &metrics.top_k {
            for (tau, v) in per_tau {
                rows.entry(k).or_default().push(format!("top{k}@{tau}={v}"));
            }
        }
        for (_, cells) in rows {
            println!(
                "{view} (n={}): {}",
                metrics.annotation_count,
                cells.join(" ")
            );
        }
    }
}
