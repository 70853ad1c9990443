//! Tile quality control: background (Otsu), dark-area and pen-ink filters,
//! plus binary PPM I/O for tiles.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit RGB tile, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TileRaster {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl TileRaster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Value(format!("tile must be non-empty, got {width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::Shape(format!("{width}x{height} RGB tile needs {} bytes, got {}", width * height * 3, pixels.len())));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn rgb(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut next_token = || -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Truncation("PPM header ended early".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if next_token()? != "P6" {
            return Err(Error::Format("not a binary PPM (P6) file".into()));
        }
        let mut number = |what: &str| -> Result<usize> {
            let t = next_token()?;
            t.parse().map_err(|_| Error::Format(format!("bad PPM {what}: {t:?}")))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if maxval != 255 {
            return Err(Error::Format(format!("PPM maxval must be 255, got {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        let data = bytes.get(pos + 1..).unwrap_or(&[]);
        let need = width * height * 3;
        if data.len() < need {
            return Err(Error::Truncation(format!("PPM raster has {} of {need} bytes", data.len())));
        }
        Self::new(width, height, data[..need].to_vec())
    }
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<TileRaster> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    TileRaster::from_ppm(&bytes)
}

pub fn write_ppm(path: impl AsRef<Path>, tile: &TileRaster) -> Result<()> {
    let path = path.as_ref();
    std::fs::File::create(path).and_then(|mut f| f.write_all(&tile.to_ppm())).map_err(|e| Error::io(path, e))
}

/// Integer-rounded Rec.601 luma.
pub fn gray(rgb: [u8; 3]) -> u8 {
    let [r, g, b] = rgb.map(u32::from);
    ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
}

pub fn gray_histogram(tile: &TileRaster) -> [u64; 256] {
    let mut hist = [0u64; 256];
    tile.rgb().for_each(|p| hist[gray(p) as usize] += 1);
    hist
}

/// Otsu threshold: `t` maximising the between-class variance of
/// `{≤ t}` vs `{> t}`; ties resolve to the smallest `t`.
pub fn otsu_threshold(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    let sum: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
    let (mut n0, mut s0) = (0u64, 0u128);
    let (mut best_t, mut best) = (0u8, 0.0f64);
    for t in 0..256usize {
        n0 += hist[t];
        s0 += t as u128 * hist[t] as u128;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let score = between_class(total, sum, n0, s0);
        if score > best {
            best = score;
            best_t = t as u8;
        }
    }
    best_t
}

/// `(S·n0 − N·s0)² / (n0·n1)`, proportional to the between-class variance.
fn between_class(total: u64, sum: u128, n0: u64, s0: u128) -> f64 {
    let num = (sum * n0 as u128) as i128 - (total as u128 * s0) as i128;
    let num = num as f64;
    num * num / (n0 as f64 * (total - n0) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QcThresholds {
    pub background_max: f64,
    pub blackish_max: f64,
    pub pen_max: f64,
    /// Pixels with `max(R, G, B)` below this are dark.
    pub dark_cutoff: u8,
    /// Ink channel must exceed this value...
    pub ink_min: u8,
    /// ...and exceed both other channels by more than this margin.
    pub ink_margin: u8,
    /// Histograms whose dominant bin holds at least this share are
    /// degenerate for Otsu.
    pub degenerate_share: f64,
    /// A degenerate tile is all background iff its dominant gray exceeds this.
    pub degenerate_bright: u8,
}

impl Default for QcThresholds {
    fn default() -> Self {
        Self {
            background_max: 0.90,
            blackish_max: 0.05,
            pen_max: 0.05,
            dark_cutoff: 60,
            ink_min: 100,
            ink_margin: 30,
            degenerate_share: 0.99,
            degenerate_bright: 200,
        }
    }
}

pub fn background_fraction(tile: &TileRaster, th: &QcThresholds) -> f64 {
    let hist = gray_histogram(tile);
    let n = tile.n_pixels() as f64;
    let (mode, &count) = hist.iter().enumerate().max_by_key(|(i, c)| (**c, std::cmp::Reverse(*i))).expect("256 bins");
    if count as f64 >= th.degenerate_share * n {
        return if mode > th.degenerate_bright as usize { 1.0 } else { 0.0 };
    }
    let t = otsu_threshold(&hist) as usize;
    hist[t + 1..].iter().sum::<u64>() as f64 / n
}

pub fn blackish_fraction(tile: &TileRaster, th: &QcThresholds) -> f64 {
    let dark = tile.rgb().filter(|p| p.iter().max().copied().unwrap_or(0) < th.dark_cutoff).count();
    dark as f64 / tile.n_pixels() as f64
}

/// Red, green and blue ink coverage.
pub fn penmark_fractions(tile: &TileRaster, th: &QcThresholds) -> [f64; 3] {
    let mut counts = [0usize; 3];
    for p in tile.rgb() {
        for (c, count) in counts.iter_mut().enumerate() {
            let v = p[c] as i32;
            let others = (0..3).filter(|&o| o != c).map(|o| p[o] as i32).max().unwrap_or(0);
            if v > th.ink_min as i32 && v - others > th.ink_margin as i32 {
                *count += 1;
            }
        }
    }
    counts.map(|c| c as f64 / tile.n_pixels() as f64)
}

pub const REASON_BACKGROUND: &str = "background";
pub const REASON_BLACKISH: &str = "blackish";
pub const PEN_REASONS: [&str; 3] = ["pen_red", "pen_green", "pen_blue"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QcReport {
    pub background: f64,
    pub blackish: f64,
    pub pen: [f64; 3],
    pub keep: bool,
    pub reasons: Vec<&'static str>,
}

pub fn qc_filter(tile: &TileRaster, th: &QcThresholds) -> QcReport {
    let background = background_fraction(tile, th);
    let blackish = blackish_fraction(tile, th);
    let pen = penmark_fractions(tile, th);
    let mut reasons = Vec::new();
    if background > th.background_max {
        reasons.push(REASON_BACKGROUND);
    }
    if blackish > th.blackish_max {
        reasons.push(REASON_BLACKISH);
    }
    for (f, r) in pen.iter().zip(PEN_REASONS) {
        if *f > th.pen_max {
            reasons.push(r);
        }
    }
    QcReport { background, blackish, pen, keep: reasons.is_empty(), reasons }
}

pub const QC_HEADER: [&str; 8] = ["tile_id", "background", "blackish", "pen_red", "pen_green", "pen_blue", "verdict", "reasons"];

pub fn write_qc_csv<W: Write>(writer: W, rows: &[(String, QcReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(QC_HEADER)?;
    for (id, r) in rows {
        w.write_record([
            id.clone(),
            r.background.to_string(),
            r.blackish.to_string(),
            r.pen[0].to_string(),
            r.pen[1].to_string(),
            r.pen[2].to_string(),
            if r.keep { "keep" } else { "reject" }.to_string(),
            r.reasons.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<qc csv>", e))?;
    Ok(())
}
