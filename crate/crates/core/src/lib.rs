//! Post-processing and evaluation toolkit for ensembles of lesion detectors.
//!
//! The crate is organised bottom-up:
//!
//! * [`boxcore`] holds the geometric primitives (boxes, RECIST measurements,
//!   size bins) shared by everything else.
//! * [`fusion`] merges predictions from several detector runs with Weighted
//!   Boxes Fusion, with greedy NMS as the comparison baseline.
//! * [`eval`] matches detections to ground truth and computes FROC
//!   sensitivities, average precision and size-stratified reports.
//! * [`ctprep`] turns HU slice volumes into windowed, equalized 3-slice images.
//! * [`simlab`] generates seeded synthetic scenes and noisy detectors.
//! * [`records`] defines the JSONL wire formats used between the stages.

pub mod boxcore;
pub mod ctprep;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod records;
pub mod simlab;

pub use boxcore::{
    bin_of, iou, recist_to_box, short_axis_mm, BBox, Detection, LesionAnnotation, Point, RecistMeasurement, SizeBin,
};
pub use error::{Error, Result};
