//! HU slice volumes to 3-channel 8-bit images.
//!
//! Each channel is clipped to its slice's display window, linearly mapped to
//! `[0, 255]` and histogram equalized. All rounding is half away from zero
//! and done in integer arithmetic, so outputs are bit-exact everywhere.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// A row-major 2-D raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} raster needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster { width: self.width, height: self.height, data: self.data.iter().map(|v| f(*v)).collect() }
    }
}

pub type HuRaster = Raster<i16>;
pub type GrayRaster = Raster<u8>;

/// Display window in HU, `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Window {
    pub lo: i32,
    pub hi: i32,
}

impl Window {
    pub fn new(lo: i32, hi: i32) -> Result<Self> {
        if lo >= hi {
            return Err(Error::InvalidWindow { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    fn check(&self) -> Result<()> {
        Self::new(self.lo, self.hi).map(|_| ())
    }
}

/// Clamps every value into the window.
pub fn window_clip(slice: &HuRaster, window: Window) -> Result<HuRaster> {
    window.check()?;
    Ok(slice.map(|v| (v as i32).clamp(window.lo, window.hi) as i16))
}

/// `round((v - lo) / (hi - lo) * 255)`, half away from zero.
pub fn normalize_u8(slice: &HuRaster, window: Window) -> Result<GrayRaster> {
    window.check()?;
    if let Some(&v) = slice.data.iter().find(|&&v| (v as i32) < window.lo || (v as i32) > window.hi) {
        return Err(Error::OutsideWindow { value: v as i32, lo: window.lo, hi: window.hi });
    }
    let span = (window.hi - window.lo) as i64;
    Ok(slice.map(|v| {
        let num = (v as i64 - window.lo as i64) * 255;
        // non-negative, so floor((2n + d) / 2d) rounds half away from zero
        ((2 * num + span) / (2 * span)) as u8
    }))
}

/// 256-bin cumulative-histogram equalization.
///
/// `out(v) = round((cdf(v) - cdf_min) / (n - cdf_min) * 255)` where
/// `cdf_min` is the CDF at the lowest occupied bin. A raster holding a
/// single distinct value is returned unchanged.
pub fn hist_equalize(img: &GrayRaster) -> Result<GrayRaster> {
    if img.data.is_empty() {
        return Err(Error::EmptyRaster);
    }
    let mut hist = [0u64; 256];
    for &v in &img.data {
        hist[v as usize] += 1;
    }
    let n = img.data.len() as u64;
    let mut cdf = [0u64; 256];
    let mut acc = 0;
    for (i, h) in hist.iter().enumerate() {
        acc += h;
        cdf[i] = acc;
    }
    let cdf_min = hist.iter().position(|&h| h > 0).map(|i| cdf[i]).unwrap_or(0);
    let denom = n - cdf_min;
    if denom == 0 {
        return Ok(img.clone());
    }
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate() {
        let num = cdf[v].saturating_sub(cdf_min) * 255;
        *out = ((2 * num + denom) / (2 * denom)) as u8;
    }
    Ok(img.map(|v| lut[v as usize]))
}

/// A stack of HU slices with per-slice windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceVolume {
    width: usize,
    height: usize,
    slices: Vec<HuRaster>,
    windows: Vec<Window>,
    pixel_spacing_mm: f64,
    slice_spacing_mm: f64,
}

impl SliceVolume {
    pub fn new(
        slices: Vec<HuRaster>,
        windows: Vec<Window>,
        pixel_spacing_mm: f64,
        slice_spacing_mm: f64,
    ) -> Result<Self> {
        let first = slices.first().ok_or(Error::EmptyRaster)?;
        let (width, height) = (first.width, first.height);
        if width == 0 || height == 0 {
            return Err(Error::EmptyRaster);
        }
        if slices.iter().any(|s| s.width != width || s.height != height) {
            return Err(Error::DimensionMismatch("all slices must share dimensions".into()));
        }
        if windows.len() != slices.len() {
            return Err(Error::DimensionMismatch(format!("{} windows for {} slices", windows.len(), slices.len())));
        }
        for w in &windows {
            w.check()?;
        }
        for s in [pixel_spacing_mm, slice_spacing_mm] {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidSpacing(s));
            }
        }
        Ok(Self { width, height, slices, windows, pixel_spacing_mm, slice_spacing_mm })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn slices(&self) -> &[HuRaster] {
        &self.slices
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn pixel_spacing_mm(&self) -> f64 {
        self.pixel_spacing_mm
    }

    pub fn slice_spacing_mm(&self) -> f64 {
        self.slice_spacing_mm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepOptions {
    pub equalize: bool,
}

impl Default for PrepOptions {
    fn default() -> Self {
        Self { equalize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Provenance {
    /// Source slice of each channel, (below, key, above).
    pub slice_indices: [usize; 3],
    pub windows: [Window; 3],
    pub equalized: bool,
}

/// Three 8-bit channels ordered (below, key, above).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedImage {
    pub channels: [GrayRaster; 3],
    pub key_slice: usize,
    pub provenance: Provenance,
}

impl PreparedImage {
    pub fn width(&self) -> usize {
        self.channels[1].width
    }

    pub fn height(&self) -> usize {
        self.channels[1].height
    }

    /// Interleaved RGB bytes, channel 0 first.
    pub fn interleaved(&self) -> Vec<u8> {
        let n = self.width() * self.height();
        let mut out = Vec::with_capacity(n * 3);
        for i in 0..n {
            out.extend(self.channels.iter().map(|c| c.data[i]));
        }
        out
    }
}

pub fn prepare_slice(slice: &HuRaster, window: Window, opts: PrepOptions) -> Result<GrayRaster> {
    let clipped = window_clip(slice, window)?;
    let norm = normalize_u8(&clipped, window)?;
    if opts.equalize {
        hist_equalize(&norm)
    } else {
        Ok(norm)
    }
}

/// Builds the (key-1, key, key+1) image; missing neighbours replicate the key slice.
pub fn stack_3slice(vol: &SliceVolume, key: usize, opts: PrepOptions) -> Result<PreparedImage> {
    let n = vol.n_slices();
    if key >= n {
        return Err(Error::KeySliceOutOfRange { key, n_slices: n });
    }
    let below = key.checked_sub(1).unwrap_or(key);
    let above = if key + 1 < n { key + 1 } else { key };
    let idx = [below, key, above];
    let channels = [
        prepare_slice(&vol.slices[below], vol.windows[below], opts)?,
        prepare_slice(&vol.slices[key], vol.windows[key], opts)?,
        prepare_slice(&vol.slices[above], vol.windows[above], opts)?,
    ];
    Ok(PreparedImage {
        channels,
        key_slice: key,
        provenance: Provenance { slice_indices: idx, windows: idx.map(|i| vol.windows[i]), equalized: opts.equalize },
    })
}

/// Binary volume container.
///
/// Layout, all little-endian:
///
/// ```text
/// magic        4 bytes  "HUV1"
/// width        u32
/// height       u32
/// n_slices     u32
/// pixel_mm     f64
/// slice_mm     f64
/// windows      n_slices x (i32 lo, i32 hi)
/// body         n_slices x height x width i16, row-major
/// ```
pub mod container {
    use super::*;

    pub const MAGIC: &[u8; 4] = b"HUV1";
    pub const TEXT_MAGIC: &str = "HUVOL";

    fn fmt_err(msg: impl Into<String>) -> Error {
        Error::Format(msg.into())
    }

    pub fn write_binary(vol: &SliceVolume, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(vol.width as u32).to_le_bytes())?;
        w.write_all(&(vol.height as u32).to_le_bytes())?;
        w.write_all(&(vol.n_slices() as u32).to_le_bytes())?;
        w.write_all(&vol.pixel_spacing_mm.to_le_bytes())?;
        w.write_all(&vol.slice_spacing_mm.to_le_bytes())?;
        for win in &vol.windows {
            w.write_all(&win.lo.to_le_bytes())?;
            w.write_all(&win.hi.to_le_bytes())?;
        }
        for s in &vol.slices {
            for v in &s.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    struct Cursor<'a> {
        buf: &'a [u8],
        pos: usize,
    }

    impl<'a> Cursor<'a> {
        fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
            let end = self.pos + N;
            let bytes = self
                .buf
                .get(self.pos..end)
                .ok_or_else(|| fmt_err(format!("truncated while reading {what} at byte {}", self.pos)))?;
            self.pos = end;
            Ok(bytes.try_into().expect("slice length checked"))
        }
    }

    pub fn read_binary(bytes: &[u8]) -> Result<SliceVolume> {
        let mut c = Cursor { buf: bytes, pos: 0 };
        let magic: [u8; 4] = c.take("magic").map_err(|_| fmt_err("bad header magic"))?;
        if &magic != MAGIC {
            return Err(fmt_err("bad header magic"));
        }
        let width = u32::from_le_bytes(c.take("width")?) as usize;
        let height = u32::from_le_bytes(c.take("height")?) as usize;
        let n = u32::from_le_bytes(c.take("n_slices")?) as usize;
        let pixel = f64::from_le_bytes(c.take("pixel spacing")?);
        let slice = f64::from_le_bytes(c.take("slice spacing")?);
        let expected = 32usize
            .checked_add(n.checked_mul(8).ok_or_else(|| fmt_err("header overflow"))?)
            .and_then(|h| width.checked_mul(height)?.checked_mul(n)?.checked_mul(2)?.checked_add(h))
            .ok_or_else(|| fmt_err("header dimensions overflow"))?;
        if bytes.len() != expected {
            return Err(fmt_err(format!("expected {expected} bytes for header, got {}", bytes.len())));
        }
        let mut windows = Vec::with_capacity(n);
        for _ in 0..n {
            let lo = i32::from_le_bytes(c.take("window")?);
            let hi = i32::from_le_bytes(c.take("window")?);
            windows.push(Window::new(lo, hi)?);
        }
        let mut slices = Vec::with_capacity(n);
        for _ in 0..n {
            let mut data = Vec::with_capacity(width * height);
            for _ in 0..width * height {
                data.push(i16::from_le_bytes(c.take("voxel")?));
            }
            slices.push(Raster::new(width, height, data)?);
        }
        SliceVolume::new(slices, windows, pixel, slice)
    }

    /// Line-oriented equivalent of the binary container for small fixtures.
    ///
    /// ```text
    /// HUVOL 1
    /// size <width> <height> <n_slices>
    /// spacing <pixel_mm> <slice_mm>
    /// slice <lo> <hi>
    /// <height rows of width integers>
    /// slice <lo> <hi>
    /// ...
    /// ```
    ///
    /// Blank lines and lines starting with `#` are ignored.
    pub fn read_text(text: &str) -> Result<SliceVolume> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut next =
            |what: &str| lines.next().ok_or_else(|| fmt_err(format!("unexpected end of input, expected {what}")));

        let (ln, header) = next("header")?;
        let mut it = header.split_whitespace();
        if it.next() != Some(TEXT_MAGIC) || it.next() != Some("1") {
            return Err(fmt_err(format!("bad header magic on line {ln}")));
        }

        fn fields<T: std::str::FromStr>(ln: usize, line: &str, key: &str, n: usize) -> Result<Vec<T>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(fmt_err(format!("line {ln}: expected '{key}'")));
            }
            let v: Vec<T> = it
                .map(|t| t.parse().map_err(|_| fmt_err(format!("line {ln}: cannot parse '{t}'"))))
                .collect::<Result<_>>()?;
            if v.len() != n {
                return Err(fmt_err(format!("line {ln}: '{key}' takes {n} values")));
            }
            Ok(v)
        }

        let (ln, l) = next("size")?;
        let size: Vec<usize> = fields(ln, l, "size", 3)?;
        let (width, height, n) = (size[0], size[1], size[2]);
        let (ln, l) = next("spacing")?;
        let spacing: Vec<f64> = fields(ln, l, "spacing", 2)?;

        let mut slices = Vec::with_capacity(n);
        let mut windows = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = next("slice")?;
            let w: Vec<i32> = fields(ln, l, "slice", 2)?;
            windows.push(Window::new(w[0], w[1])?);
            let mut data = Vec::with_capacity(width * height);
            for _ in 0..height {
                let (ln, row) = next("raster row")?;
                let vals: Vec<i16> = row
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| fmt_err(format!("line {ln}: bad HU value '{t}'"))))
                    .collect::<Result<_>>()?;
                if vals.len() != width {
                    return Err(fmt_err(format!("line {ln}: expected {width} values, got {}", vals.len())));
                }
                data.extend(vals);
            }
            slices.push(Raster::new(width, height, data)?);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(fmt_err(format!("line {ln}: trailing content")));
        }
        SliceVolume::new(slices, windows, spacing[0], spacing[1])
    }

    pub fn write_text(vol: &SliceVolume) -> String {
        let mut s = format!(
            "{TEXT_MAGIC} 1\nsize {} {} {}\nspacing {} {}\n",
            vol.width,
            vol.height,
            vol.n_slices(),
            vol.pixel_spacing_mm,
            vol.slice_spacing_mm
        );
        for (slice, win) in vol.slices.iter().zip(&vol.windows) {
            s.push_str(&format!("slice {} {}\n", win.lo, win.hi));
            for row in slice.data.chunks(vol.width) {
                let row: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
        }
        s
    }

    /// Reads either form, sniffing the leading magic.
    pub fn read_any(mut r: impl Read) -> Result<SliceVolume> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| fmt_err(e.to_string()))?;
        if buf.starts_with(MAGIC) {
            return read_binary(&buf);
        }
        let text = std::str::from_utf8(&buf).map_err(|_| fmt_err("bad header magic"))?;
        read_text(text)
    }
}
