//! Reading JSONL inputs with `file:line` diagnostics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use lesionfuse_core::boxcore::SourceTag;
use lesionfuse_core::fusion::Run;
use lesionfuse_core::records::{read_jsonl, AnnotationRecord, DetectionRecord};
use lesionfuse_core::{Detection, Error, LesionAnnotation};

use crate::error::{CliError, CliResult};

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn located(path: &Path, err: Error) -> CliError {
    match err {
        Error::Parse { line, message } => CliError::input(format!("{}:{line}: {message}", path.display())),
        other => CliError::input(format!("{}: {other}", path.display())),
    }
}

/// Detections with the line each came from.
pub fn read_detection_file(path: &Path) -> CliResult<Vec<(usize, Detection)>> {
    read_jsonl::<DetectionRecord>(open(path)?)
        .map_err(|e| located(path, e))?
        .into_iter()
        .map(|(line, r)| {
            r.to_detection().map(|d| (line, d)).map_err(|e| CliError::input(format!("{}:{line}: {e}", path.display())))
        })
        .collect()
}

pub fn read_detections(path: &Path) -> CliResult<Vec<Detection>> {
    Ok(read_detection_file(path)?.into_iter().map(|(_, d)| d).collect())
}

pub fn read_annotations(path: &Path) -> CliResult<Vec<LesionAnnotation>> {
    read_jsonl::<AnnotationRecord>(open(path)?)
        .map_err(|e| located(path, e))?
        .into_iter()
        .map(|(line, r)| r.to_annotation().map_err(|e| CliError::input(format!("{}:{line}: {e}", path.display()))))
        .collect()
}

/// Splits detection files into runs.
///
/// Each record belongs to the run named by its `(model, epoch)` fields;
/// records without a model take the file stem. One tag appearing in two
/// different files is an error.
pub fn read_runs(paths: &[impl AsRef<Path>]) -> CliResult<Vec<Run>> {
    let mut runs: BTreeMap<SourceTag, (usize, Vec<Detection>)> = BTreeMap::new();
    for (file_idx, path) in paths.iter().enumerate() {
        let path = path.as_ref();
        let stem =
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string());
        let dets = read_detection_file(path)?;
        if dets.is_empty() {
            // an empty file is still a run that found nothing
            let tag = SourceTag::new(stem.clone(), None);
            if let Some((other, _)) = runs.get(&tag) {
                return Err(CliError::input(format!(
                    "duplicate source tag {tag}: appears in {} and {}",
                    paths[*other].as_ref().display(),
                    path.display()
                )));
            }
            runs.insert(tag, (file_idx, Vec::new()));
        }
        for (_, d) in dets {
            let model = if d.source_model().is_empty() { stem.clone() } else { d.source_model().to_string() };
            let tag = SourceTag::new(model, d.source_epoch());
            let entry = runs.entry(tag.clone()).or_insert((file_idx, Vec::new()));
            if entry.0 != file_idx {
                return Err(CliError::input(format!(
                    "duplicate source tag {tag}: appears in {} and {}",
                    paths[entry.0].as_ref().display(),
                    path.display()
                )));
            }
            entry.1.push(d);
        }
    }
    Ok(runs.into_iter().map(|(tag, (_, dets))| Run::new(tag, dets)).collect())
}
