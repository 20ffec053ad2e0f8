//! Helpers shared by the end-to-end test targets.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_lesionfuse");

pub fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

pub fn det_line(image: &str, b: [f64; 4], score: f64) -> String {
    format!(r#"{{"image_id":"{image}","x1":{},"y1":{},"x2":{},"y2":{},"score":{score}}}"#, b[0], b[1], b[2], b[3])
}

pub fn gt_line(image: &str, b: [f64; 4], sad_mm: Option<f64>) -> String {
    let sad = sad_mm.map(|s| format!(r#","sad_mm":{s}"#)).unwrap_or_default();
    format!(r#"{{"image_id":"{image}","x1":{},"y1":{},"x2":{},"y2":{}{sad}}}"#, b[0], b[1], b[2], b[3])
}

pub fn lines(v: &[String]) -> String {
    v.iter().map(|l| format!("{l}\n")).collect()
}

/// Two images with one lesion each: image 1 has a hit at 0.9 and a false
/// positive at 0.8, image 2 only a false positive at 0.7.
pub fn froc_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let gt = write(
        dir,
        "froc_gt.jsonl",
        &lines(&[gt_line("img1", [0.0, 0.0, 10.0, 10.0], None), gt_line("img2", [0.0, 0.0, 10.0, 10.0], None)]),
    );
    let dets = write(
        dir,
        "froc_dets.jsonl",
        &lines(&[
            det_line("img1", [0.0, 0.0, 10.0, 10.0], 0.9),
            det_line("img1", [50.0, 50.0, 60.0, 60.0], 0.8),
            det_line("img2", [50.0, 50.0, 60.0, 60.0], 0.7),
        ]),
    );
    (dets, gt)
}

/// Small, medium and large lesions, each found exactly.
pub fn mixed_size_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let boxes = [[0.0, 0.0, 8.0, 8.0], [20.0, 20.0, 45.0, 45.0], [100.0, 100.0, 160.0, 160.0]];
    let sads = [5.0, 20.0, 40.0];
    let gt: Vec<String> = boxes.iter().zip(sads).map(|(b, s)| gt_line("img1", *b, Some(s))).collect();
    let dets: Vec<String> = boxes.iter().map(|b| det_line("img1", *b, 0.9)).collect();
    (write(dir, "mixed_dets.jsonl", &lines(&dets)), write(dir, "mixed_gt.jsonl", &lines(&gt)))
}

/// One-slice text volume in window (-1500, 500) with varied values.
pub fn text_volume(n_slices: usize) -> String {
    let mut s = format!("HUVOL 1\nsize 4 3 {n_slices}\nspacing 0.8 2.0\n");
    for k in 0..n_slices {
        s.push_str("slice -1500 500\n");
        let base = k as i32 * 10;
        for row in [[-2000, -1500, -500, 0], [100, 200, 300, 400], [500, 900, -700, 9000]] {
            let r: Vec<String> = row.iter().map(|v| (v + base).to_string()).collect();
            s.push_str(&r.join(" "));
            s.push('\n');
        }
    }
    s
}

/// Parses a binary P6 PPM into (width, height, rgb bytes).
pub fn read_ppm(bytes: &[u8]) -> (usize, usize, Vec<u8>) {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
    }
    assert_eq!(fields[0], "P6");
    assert_eq!(fields[3], "255");
    let (w, h) = (fields[1].parse().unwrap(), fields[2].parse().unwrap());
    (w, h, bytes[pos + 1..].to_vec())
}
