//! Subcommand arguments and implementations.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use lesionfuse_core::ctprep::{container, stack_3slice, PrepOptions};
use lesionfuse_core::eval::{evaluate, stratified_report, EvalConfig, DEFAULT_FP_TARGETS, DEFAULT_MATCH_IOU};
use lesionfuse_core::fusion::{fuse_runs, FusionConfig, RescaleMode, DEFAULT_IOU_THRESH};
use lesionfuse_core::records::{write_annotations, write_detections, write_jsonl};
use lesionfuse_core::simlab::{gen_scene, profile_seed, simulate_detector, DetectorProfile, SceneConfig};
use lesionfuse_core::Error;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::ingest::{ingest_generic_csv, ColumnMapping};
use crate::input::{read_annotations, read_detections, read_runs};
use crate::report::{table_row, ReportDocument, TABLE_HEADER};

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Writes to `path`, or to standard output when absent or `-`.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> CliResult<()> {
    match path.filter(|p| p.as_os_str() != "-") {
        Some(p) => {
            let mut buf = Vec::new();
            f(&mut buf).map_err(|e| CliError::io(p, e))?;
            write_file(p, &buf)
        }
        None => {
            let stdout = io::stdout();
            let mut lock = BufWriter::new(stdout.lock());
            f(&mut lock).and_then(|_| lock.flush()).map_err(|e| CliError::input(format!("stdout: {e}")))
        }
    }
}

fn parse_weight(s: &str) -> Result<(String, f64), String> {
    let (model, w) = s.split_once('=').ok_or_else(|| format!("'{s}' must look like model=weight"))?;
    let w: f64 = w.parse().map_err(|_| format!("'{w}' is not a number"))?;
    Ok((model.to_string(), w))
}

fn domain(e: Error) -> CliError {
    CliError::domain(e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct FuseArgs {
    /// Detection JSONL files; each (model, epoch) tag is one run.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESH)]
    pub iou_thresh: f64,
    #[arg(long, default_value_t = 0.0)]
    pub score_thresh: f64,
    /// Per-model weight, repeatable: --weights vfnet=2
    #[arg(long = "weights", value_parser = parse_weight)]
    pub weights: Vec<(String, f64)>,
    #[arg(long, default_value = "min_clamp")]
    pub rescale: RescaleMode,
    /// Override the number of sources N used for rescaling.
    #[arg(long)]
    pub n_sources: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_fuse(args: &FuseArgs) -> CliResult<()> {
    let runs = read_runs(&args.inputs)?;
    let cfg = FusionConfig {
        iou_thresh: args.iou_thresh,
        score_thresh: args.score_thresh,
        model_weights: args.weights.iter().cloned().collect(),
        rescale: args.rescale,
        n_sources: args.n_sources,
    };
    let fused = fuse_runs(&runs, &cfg).map_err(|e| match e {
        Error::InvalidConfig(_) | Error::DuplicateSource(_) => CliError::input(e.to_string()),
        other => domain(other),
    })?;
    with_output(args.out.as_deref(), |w| write_detections(w, &fused))
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub detections: PathBuf,
    pub ground_truth: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MATCH_IOU)]
    pub match_iou: f64,
    /// Comma-separated FP-per-image targets.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FP_TARGETS)]
    pub fp_targets: Vec<f64>,
    /// Add per-SAD-bin sub-reports.
    #[arg(long)]
    pub stratify: bool,
    /// Number of evaluated images; defaults to the distinct image ids seen.
    #[arg(long)]
    pub n_images: Option<usize>,
    /// Row label; defaults to the detection file stem.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub out_froc: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<ReportDocument> {
    let dets = read_detections(&args.detections)?;
    let gts = read_annotations(&args.ground_truth)?;
    let cfg = EvalConfig { match_iou: args.match_iou, fp_targets: args.fp_targets.clone(), n_images: args.n_images };
    cfg.validate().map_err(|e| CliError::input(e.to_string()))?;
    let report = if args.stratify { stratified_report(&dets, &gts, &cfg) } else { evaluate(&dets, &gts, &cfg) }
        .map_err(|e| match e {
            Error::NoAnnotations => CliError::domain(format!(
                "{}: no ground-truth annotations, so sensitivity and mAP are undefined",
                args.ground_truth.display()
            )),
            other => domain(other),
        })?;
    let method = args.method.clone().unwrap_or_else(|| {
        args.detections.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "detections".into())
    });
    let doc = ReportDocument::new(&method, args.match_iou, args.stratify, &report);

    if let Some(p) = &args.out_json {
        let mut json = serde_json::to_vec_pretty(&doc).expect("report serializes");
        json.push(b'\n');
        write_file(p, &json)?;
    }
    let csv = doc.to_csv();
    if let Some(p) = &args.out_csv {
        write_file(p, csv.as_bytes())?;
    }
    if let Some(p) = &args.out_froc {
        write_file(p, crate::report::froc_csv(&report).as_bytes())?;
    }
    print!("{csv}");
    Ok(doc)
}

/// Simulation config file: a scene plus one entry per detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub scene: SceneConfig,
    pub detectors: Vec<DetectorProfile>,
}

impl SimulationConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::input(format!("invalid config at '{path}': {}", e.into_inner()))
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    pub config: PathBuf,
    /// Overrides the scene seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_gt: PathBuf,
    /// Each detector is written to `<prefix><name>.jsonl`.
    #[arg(long)]
    pub out_dets: String,
    /// Optional image manifest (one JSON object per image).
    #[arg(long)]
    pub out_manifest: Option<PathBuf>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<Vec<PathBuf>> {
    let text = fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let mut cfg = SimulationConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.scene.seed = seed;
    }
    let mut names = BTreeMap::new();
    for (i, d) in cfg.detectors.iter().enumerate() {
        d.validate().map_err(|e| CliError::input(format!("invalid config at 'detectors[{i}]': {e}")))?;
        if let Some(prev) = names.insert(d.name.clone(), i) {
            return Err(CliError::input(format!(
                "invalid config at 'detectors[{i}].name': '{}' already used by detectors[{prev}]",
                d.name
            )));
        }
    }
    let scene = gen_scene(&cfg.scene).map_err(|e| CliError::input(format!("invalid config at 'scene': {e}")))?;

    let mut gt = Vec::new();
    write_annotations(&mut gt, &scene.annotations).expect("in-memory write");
    write_file(&args.out_gt, &gt)?;
    if let Some(p) = &args.out_manifest {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &scene.images).expect("in-memory write");
        write_file(p, &buf)?;
    }
    let mut written = Vec::new();
    for (j, profile) in cfg.detectors.iter().enumerate() {
        let dets = simulate_detector(&scene, profile, profile_seed(cfg.scene.seed, j)).map_err(domain)?;
        let path = PathBuf::from(format!("{}{}.jsonl", args.out_dets, profile.name));
        let mut buf = Vec::new();
        write_detections(&mut buf, &dets).expect("in-memory write");
        write_file(&path, &buf)?;
        written.push(path);
    }
    eprintln!(
        "simulated {} images, {} lesions, {} detector file(s)",
        scene.images.len(),
        scene.annotations.len(),
        written.len()
    );
    Ok(written)
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    /// Volume in the binary (HUV1) or text (HUVOL 1) container.
    pub volume: PathBuf,
    #[arg(long)]
    pub key_slice: usize,
    /// Output image (binary PPM); provenance goes to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_equalize: bool,
}

#[derive(Debug, Serialize)]
struct PreprocessSidecar<'a> {
    source: String,
    width: usize,
    height: usize,
    key_slice: usize,
    channel_order: [&'a str; 3],
    #[serde(flatten)]
    provenance: &'a lesionfuse_core::ctprep::Provenance,
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> CliResult<()> {
    let file = fs::File::open(&args.volume).map_err(|e| CliError::io(&args.volume, e))?;
    let vol = container::read_any(io::BufReader::new(file))
        .map_err(|e| CliError::input(format!("{}: {e}", args.volume.display())))?;
    let img = stack_3slice(&vol, args.key_slice, PrepOptions { equalize: !args.no_equalize })
        .map_err(|e| CliError::input(e.to_string()))?;

    let mut ppm = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    ppm.extend(img.interleaved());
    write_file(&args.out, &ppm)?;

    let sidecar = PreprocessSidecar {
        source: args.volume.display().to_string(),
        width: img.width(),
        height: img.height(),
        key_slice: img.key_slice,
        channel_order: ["below", "key", "above"],
        provenance: &img.provenance,
    };
    let mut side_path = args.out.clone().into_os_string();
    side_path.push(".json");
    let mut json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    json.push(b'\n');
    write_file(Path::new(&side_path), &json)
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Report JSON files written by `eval --out-json`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Include per-bin rows, prefixed with the method name.
    #[arg(long)]
    pub strata: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Combines several report documents into one table.
pub fn cmd_report(args: &ReportArgs) -> CliResult<String> {
    let mut table = String::from(TABLE_HEADER);
    table.push('\n');
    for p in &args.reports {
        let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let doc: ReportDocument = serde_path_to_error::deserialize(de).map_err(|e| {
            CliError::input(format!("{}: invalid report at '{}': {}", p.display(), e.path(), e.inner()))
        })?;
        table.push_str(&table_row(&doc.method, Some(&doc.overall)));
        table.push('\n');
        if args.strata {
            for s in &doc.strata {
                table.push_str(&table_row(&format!("{} ({})", doc.method, s.label), s.metrics.as_ref()));
                table.push('\n');
            }
        }
    }
    with_output(args.out.as_deref(), |w| w.write_all(table.as_bytes()))?;
    Ok(table)
}

#[derive(Debug, Clone, Args)]
pub struct IngestCsvArgs {
    pub csv: PathBuf,
    /// Field mapping, repeatable: --map image_id=File_name --map box=Bounding_boxes
    #[arg(long = "map", required = true)]
    pub mappings: Vec<String>,
    /// Fail on the first invalid row instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_ingest_csv(args: &IngestCsvArgs) -> CliResult<usize> {
    let mapping = ColumnMapping::parse(&args.mappings)?;
    if !args.delimiter.is_ascii() {
        return Err(CliError::input("delimiter must be a single ASCII character"));
    }
    let outcome = ingest_generic_csv(&args.csv, &mapping, args.delimiter as u8, args.strict)?;
    for issue in &outcome.skipped {
        eprintln!("{}: skipped row at line {}: {}", args.csv.display(), issue.line, issue.message);
    }
    with_output(args.out.as_deref(), |w| write_jsonl(w, &outcome.records))?;
    Ok(outcome.records.len())
}
