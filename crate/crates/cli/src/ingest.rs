//! Mapping-driven CSV adapter producing annotation records.
//!
//! The caller names which CSV column feeds which annotation field, so no
//! dataset's layout is baked in. Fields:
//!
//! | field | content |
//! |---|---|
//! | `image_id` | required |
//! | `x1`, `y1`, `x2`, `y2` | box corners, one number each |
//! | `box` | alternative: one cell holding `x1, y1, x2, y2` |
//! | `recist` | one cell holding the 8 RECIST endpoint coordinates |
//! | `long_x1` .. `short_y2` | alternative: 8 separate endpoint columns |
//! | `sad_mm` | short-axis diameter |
//! | `spacing_mm_px` | pixel spacing; a list cell uses its first number |
//! | `label` | integer category |
//!
//! When `sad_mm` is absent but RECIST endpoints and spacing are present,
//! the SAD is derived from the short axis.

use std::collections::BTreeMap;
use std::path::Path;

use lesionfuse_core::boxcore::{short_axis_mm, RecistMeasurement};
use lesionfuse_core::records::AnnotationRecord;

use crate::error::{CliError, CliResult};

const RECIST_COLUMNS: [&str; 8] =
    ["long_x1", "long_y1", "long_x2", "long_y2", "short_x1", "short_y1", "short_x2", "short_y2"];
const CORNER_COLUMNS: [&str; 4] = ["x1", "y1", "x2", "y2"];
const KNOWN_FIELDS: &[&str] = &[
    "image_id",
    "x1",
    "y1",
    "x2",
    "y2",
    "box",
    "recist",
    "long_x1",
    "long_y1",
    "long_x2",
    "long_y2",
    "short_x1",
    "short_y1",
    "short_x2",
    "short_y2",
    "sad_mm",
    "spacing_mm_px",
    "label",
];

/// Field name -> CSV column header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColumnMapping {
    pub columns: BTreeMap<String, String>,
}

impl ColumnMapping {
    /// Parses repeated `field=column` arguments.
    pub fn parse(pairs: &[String]) -> CliResult<Self> {
        let mut columns = BTreeMap::new();
        for p in pairs {
            let (field, column) = p
                .split_once('=')
                .ok_or_else(|| CliError::input(format!("mapping '{p}' must look like field=column")))?;
            let field = field.trim();
            if field.is_empty() || !KNOWN_FIELDS.contains(&field) {
                return Err(CliError::input(format!("unknown mapping field '{field}'")));
            }
            columns.insert(field.to_string(), column.to_string());
        }
        let m = Self { columns };
        m.check_complete()?;
        Ok(m)
    }

    fn has(&self, field: &str) -> bool {
        self.columns.contains_key(field)
    }

    fn check_complete(&self) -> CliResult<()> {
        if !self.has("image_id") {
            return Err(CliError::input("mapping must name the image_id column"));
        }
        let corners = CORNER_COLUMNS.iter().filter(|c| self.has(c)).count();
        if !self.has("box") && corners != 4 {
            return Err(CliError::input("mapping must name either box or all of x1, y1, x2, y2"));
        }
        let endpoints = RECIST_COLUMNS.iter().filter(|c| self.has(c)).count();
        if endpoints != 0 && endpoints != 8 {
            return Err(CliError::input("RECIST endpoint mapping needs all eight long_*/short_* columns"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    /// 1-based line in the CSV file (header is line 1).
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestOutcome {
    pub records: Vec<AnnotationRecord>,
    pub skipped: Vec<RowIssue>,
}

fn numbers(cell: &str) -> Result<Vec<f64>, String> {
    cell.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect()
}

fn number(cell: &str, field: &str) -> Result<f64, String> {
    match numbers(cell)?.as_slice() {
        [v] => Ok(*v),
        _ => Err(format!("{field}: expected one number, got '{cell}'")),
    }
}

/// Reads a CSV through `mapping`. With `strict`, the first invalid row is
/// fatal; otherwise invalid rows are collected in `skipped`.
pub fn ingest_generic_csv(
    path: &Path,
    mapping: &ColumnMapping,
    delimiter: u8,
    strict: bool,
) -> CliResult<IngestOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::input(format!("{}: {e}", path.display())))?.clone();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (field, column) in &mapping.columns {
        let pos = headers.iter().position(|h| h.trim_start_matches('\u{feff}') == column).ok_or_else(|| {
            CliError::input(format!("{}: mapped column '{column}' (for {field}) not found", path.display()))
        })?;
        index.insert(field.as_str(), pos);
    }

    let mut out = IngestOutcome::default();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| CliError::input(format!("{}:{line}: {e}", path.display())))?;
        let cell = |field: &str| index.get(field).map(|&i| row.get(i).unwrap_or("").trim());
        match convert_row(&cell) {
            Ok(rec) => out.records.push(rec),
            Err(message) if strict => {
                return Err(CliError::input(format!("{}: row at line {line}: {message}", path.display())));
            }
            Err(message) => out.skipped.push(RowIssue { line, message }),
        }
    }
    Ok(out)
}

fn convert_row<'a>(cell: &impl Fn(&str) -> Option<&'a str>) -> Result<AnnotationRecord, String> {
    let image_id = cell("image_id").unwrap_or("").to_string();
    let [x1, y1, x2, y2] = match cell("box") {
        Some(b) => {
            let v = numbers(b)?;
            <[f64; 4]>::try_from(v.as_slice()).map_err(|_| format!("box: expected 4 numbers, got '{b}'"))?
        }
        None => {
            let mut c = [0.0; 4];
            for (slot, name) in c.iter_mut().zip(CORNER_COLUMNS) {
                *slot = number(cell(name).unwrap_or(""), name)?;
            }
            c
        }
    };
    let recist = match cell("recist") {
        Some("") => None,
        Some(r) => {
            let v = numbers(r)?;
            Some(<[f64; 8]>::try_from(v.as_slice()).map_err(|_| format!("recist: expected 8 numbers, got '{r}'"))?)
        }
        None if cell("long_x1").is_some() => {
            let mut v = [0.0; 8];
            for (slot, name) in v.iter_mut().zip(RECIST_COLUMNS) {
                *slot = number(cell(name).unwrap_or(""), name)?;
            }
            Some(v)
        }
        None => None,
    };
    let optional = |field: &str| -> Result<Option<f64>, String> {
        match cell(field) {
            None | Some("") => Ok(None),
            Some(c) => numbers(c)?.first().copied().map(Some).ok_or_else(|| format!("{field}: empty value")),
        }
    };
    let spacing_mm_px = optional("spacing_mm_px")?;
    let mut sad_mm = match cell("sad_mm") {
        None | Some("") => None,
        Some(c) => Some(number(c, "sad_mm")?),
    };
    let label = match cell("label") {
        None | Some("") => 0,
        Some(c) => c.parse::<u32>().map_err(|_| format!("label: '{c}' is not a non-negative integer"))?,
    };
    if sad_mm.is_none() {
        if let (Some(r), Some(s)) = (recist, spacing_mm_px) {
            let m = RecistMeasurement::from_flat(r).map_err(|e| e.to_string())?;
            sad_mm = Some(short_axis_mm(&m, s).map_err(|e| e.to_string())?);
        }
    }
    let rec = AnnotationRecord { image_id, x1, y1, x2, y2, label, recist, sad_mm, spacing_mm_px };
    rec.to_annotation().map_err(|e| e.to_string())?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn mapping(pairs: &[&str]) -> ColumnMapping {
        ColumnMapping::parse(&pairs.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn direct_mapping() {
        let f = csv_file("img,a,b,c,d\ni1,0,0,10,10\ni2,5,5,6,8\n");
        let m = mapping(&["image_id=img", "x1=a", "y1=b", "x2=c", "y2=d"]);
        let out = ingest_generic_csv(f.path(), &m, b',', true).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[1].y2, 8.0);
    }

    #[test]
    fn strict_names_bad_row() {
        let f = csv_file("img,a,b,c,d\ni1,0,0,10,10\ni2,9,0,1,1\n");
        let m = mapping(&["image_id=img", "x1=a", "y1=b", "x2=c", "y2=d"]);
        let err = ingest_generic_csv(f.path(), &m, b',', true).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("line 3"), "{err}");
        let lenient = ingest_generic_csv(f.path(), &m, b',', false).unwrap();
        assert_eq!(lenient.records.len(), 1);
        assert_eq!(lenient.skipped[0].line, 3);
    }

    #[test]
    fn sad_derived_from_recist() {
        let f = csv_file(
            "File_name,Bounding_boxes,Measurement_coordinates,Spacing_mm_px_\n\
             x.png,\"0, 0, 20, 4\",\"0, 0, 20, 0, 0, 0, 3, 4\",\"2.0, 2.0, 5\"\n",
        );
        let m = mapping(&[
            "image_id=File_name",
            "box=Bounding_boxes",
            "recist=Measurement_coordinates",
            "spacing_mm_px=Spacing_mm_px_",
        ]);
        let out = ingest_generic_csv(f.path(), &m, b',', true).unwrap();
        assert_eq!(out.records[0].sad_mm, Some(10.0));
        assert_eq!(out.records[0].spacing_mm_px, Some(2.0));
    }

    #[test]
    fn missing_column_is_an_input_error() {
        let f = csv_file("img,a,b,c\ni1,0,0,10\n");
        let m = mapping(&["image_id=img", "x1=a", "y1=b", "x2=c", "y2=d"]);
        let err = ingest_generic_csv(f.path(), &m, b',', false).unwrap_err();
        assert!(err.to_string().contains("'d'"));
    }

    #[test]
    fn incomplete_mapping_rejected() {
        assert!(ColumnMapping::parse(&["x1=a".into()]).is_err());
        assert!(ColumnMapping::parse(&["image_id=i".into(), "x1=a".into()]).is_err());
        assert!(ColumnMapping::parse(&["image_id=i".into(), "box=b".into(), "bogus=c".into()]).is_err());
        assert!(ColumnMapping::parse(&["image_id=i".into(), "box=b".into(), "long_x1=c".into()]).is_err());
    }
}
