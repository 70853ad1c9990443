//! Seeded augmentation families for copy detection: similarity warp,
//! brightness/contrast/gamma, Gaussian noise and elastic deformation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tileqc::{write_ppm, TileRaster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Geo,
    Color,
    Noise,
    Deform,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Geo, Family::Color, Family::Noise, Family::Deform];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Geo => "geo",
            Family::Color => "color",
            Family::Noise => "noise",
            Family::Deform => "deform",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown augmentation family {s:?} (expected geo, color, noise or deform)")))
    }
}

/// Sampling ranges for every family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub rotate_deg: f64,
    pub scale_frac: f64,
    pub shift_frac: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub noise_var_min: f64,
    pub noise_var_max: f64,
    pub elastic_sigma: f64,
    pub elastic_alpha: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate_deg: 30.0,
            scale_frac: 0.10,
            shift_frac: 0.10,
            brightness: 0.30,
            contrast: 0.30,
            gamma_min: 0.80,
            gamma_max: 1.20,
            noise_var_min: 1.0,
            noise_var_max: 25.0,
            elastic_sigma: 12.0,
            elastic_alpha: 20.0,
        }
    }
}

impl AugmentConfig {
    /// Ranges that make every family the identity transform.
    pub fn zero_magnitude() -> Self {
        Self {
            rotate_deg: 0.0,
            scale_frac: 0.0,
            shift_frac: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            gamma_min: 1.0,
            gamma_max: 1.0,
            noise_var_min: 0.0,
            noise_var_max: 0.0,
            elastic_alpha: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoParams {
    pub rotate_deg: f64,
    pub scale: f64,
    /// Shift in pixels.
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorParams {
    /// Contrast multiplier.
    pub alpha: f64,
    /// Brightness offset as a fraction of 255.
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub variance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    pub sigma: f64,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AugmentParams {
    Geo(GeoParams),
    Color(ColorParams),
    Noise(NoiseParams),
    Deform(ElasticParams),
}

impl AugmentParams {
    pub fn family(&self) -> Family {
        match self {
            AugmentParams::Geo(_) => Family::Geo,
            AugmentParams::Color(_) => Family::Color,
            AugmentParams::Noise(_) => Family::Noise,
            AugmentParams::Deform(_) => Family::Deform,
        }
    }
}

fn symmetric<R: Rng>(rng: &mut R, limit: f64) -> f64 {
    if limit == 0.0 {
        0.0
    } else {
        rng.random_range(-limit..=limit)
    }
}

fn between<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub fn sample_params<R: Rng>(family: Family, cfg: &AugmentConfig, width: usize, height: usize, rng: &mut R) -> AugmentParams {
    match family {
        Family::Geo => AugmentParams::Geo(GeoParams {
            rotate_deg: symmetric(rng, cfg.rotate_deg),
            scale: 1.0 + symmetric(rng, cfg.scale_frac),
            dx: symmetric(rng, cfg.shift_frac) * width as f64,
            dy: symmetric(rng, cfg.shift_frac) * height as f64,
        }),
        Family::Color => AugmentParams::Color(ColorParams {
            alpha: 1.0 + symmetric(rng, cfg.contrast),
            beta: symmetric(rng, cfg.brightness),
            gamma: between(rng, cfg.gamma_min, cfg.gamma_max),
        }),
        Family::Noise => {
            AugmentParams::Noise(NoiseParams { variance: between(rng, cfg.noise_var_min, cfg.noise_var_max), seed: rng.next_u64() })
        }
        Family::Deform => AugmentParams::Deform(ElasticParams { sigma: cfg.elastic_sigma, alpha: cfg.elastic_alpha, seed: rng.next_u64() }),
    }
}

pub fn apply(tile: &TileRaster, params: &AugmentParams) -> TileRaster {
    match params {
        AugmentParams::Geo(p) => apply_geometric(tile, p),
        AugmentParams::Color(p) => apply_color(tile, p),
        AugmentParams::Noise(p) => apply_noise(tile, p),
        AugmentParams::Deform(p) => apply_elastic(tile, p),
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Snaps coordinates that are integers up to rounding noise, so exact
/// quarter turns stay pixel permutations.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Bilinear sample with `border` mapping out-of-range integer coordinates to
/// in-range ones, or to `None` for constant black.
fn bilinear(tile: &TileRaster, x: f64, y: f64, border: impl Fn(i64, usize) -> Option<usize>) -> [u8; 3] {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut acc = [0.0f64; 3];
    for (yy, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
        if wy == 0.0 {
            continue;
        }
        let Some(sy) = border(yy, tile.height()) else { continue };
        for (xx, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
            if wx == 0.0 {
                continue;
            }
            let Some(sx) = border(xx, tile.width()) else { continue };
            let p = tile.get(sx, sy);
            for c in 0..3 {
                acc[c] += wx * wy * p[c] as f64;
            }
        }
    }
    acc.map(to_u8)
}

fn constant_border(i: i64, n: usize) -> Option<usize> {
    (i >= 0 && (i as usize) < n).then_some(i as usize)
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
pub fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Similarity transform about the tile centre, bilinear, black fill.
pub fn apply_geometric(tile: &TileRaster, p: &GeoParams) -> TileRaster {
    let (w, h) = (tile.width(), tile.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let theta = p.rotate_deg.to_radians();
    let (sin, cos) = if p.rotate_deg == 0.0 { (0.0, 1.0) } else { theta.sin_cos() };
    let mut out = tile.clone();
    for y in 0..h {
        for x in 0..w {
            // inverse of p' = c + s·R(p − c) + t
            let u = x as f64 - cx - p.dx;
            let v = y as f64 - cy - p.dy;
            let sx = snap(cx + (cos * u + sin * v) / p.scale);
            let sy = snap(cy + (-sin * u + cos * v) / p.scale);
            out.set(x, y, bilinear(tile, sx, sy, constant_border));
        }
    }
    out
}

/// `clip(α·v + β·255)` followed by `255·(v/255)^γ`, per channel.
pub fn apply_color(tile: &TileRaster, p: &ColorParams) -> TileRaster {
    let lut: Vec<u8> = (0..256)
        .map(|v| {
            let lin = (p.alpha * v as f64 + p.beta * 255.0).clamp(0.0, 255.0);
            to_u8(255.0 * (lin / 255.0).powf(p.gamma))
        })
        .collect();
    let pixels = tile.pixels().iter().map(|&v| lut[v as usize]).collect();
    TileRaster::new(tile.width(), tile.height(), pixels).expect("same shape")
}

/// Adds i.i.d. `N(0, variance)` to every channel of every pixel.
pub fn apply_noise(tile: &TileRaster, p: &NoiseParams) -> TileRaster {
    if p.variance <= 0.0 {
        return tile.clone();
    }
    let mut s = rng::stream(p.seed, "noise", &[]);
    let normal = Normal::new(0.0, p.variance.sqrt()).expect("finite variance");
    let pixels = tile.pixels().iter().map(|&v| to_u8(v as f64 + normal.sample(&mut s))).collect();
    TileRaster::new(tile.width(), tile.height(), pixels).expect("same shape")
}

/// Normalised Gaussian kernel of radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur of a `w × h` field with reflected borders.
pub fn smooth_field(field: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return field.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k.iter().enumerate().map(|(j, kv)| kv * field[y * w + reflect_index(x as i64 + j as i64 - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k.iter().enumerate().map(|(j, kv)| kv * tmp[reflect_index(y as i64 + j as i64 - r, h) * w + x]).sum();
        }
    }
    out
}

/// Displacement fields `(dx, dy)` in pixels.
pub fn elastic_fields(w: usize, h: usize, p: &ElasticParams) -> (Vec<f64>, Vec<f64>) {
    let mut s = rng::stream(p.seed, "elastic", &[]);
    let mut draw = || -> Vec<f64> { (0..w * h).map(|_| s.random_range(-1.0..=1.0)).collect() };
    let (rx, ry) = (draw(), draw());
    let scale = |f: Vec<f64>| -> Vec<f64> { f.into_iter().map(|v| v * p.alpha).collect() };
    (scale(smooth_field(&rx, w, h, p.sigma)), scale(smooth_field(&ry, w, h, p.sigma)))
}

/// Backward warp by smoothed random displacement fields.
pub fn apply_elastic(tile: &TileRaster, p: &ElasticParams) -> TileRaster {
    if p.alpha == 0.0 {
        return tile.clone();
    }
    let (w, h) = (tile.width(), tile.height());
    let (dx, dy) = elastic_fields(w, h, p);
    let mut out = tile.clone();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out.set(x, y, bilinear(tile, x as f64 + dx[i], y as f64 + dy[i], |i, n| Some(reflect_index(i, n))));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedTile {
    pub tile_id: String,
    pub family: Family,
    pub params: AugmentParams,
    pub tile: TileRaster,
}

impl AugmentedTile {
    pub fn relative_path(&self) -> String {
        format!("aug/{}/{}.ppm", self.family, self.tile_id)
    }
}

fn check_tile_id(id: &str) -> Result<()> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) {
        return Err(Error::Argument(format!("tile id {id:?} is not usable as a file name")));
    }
    Ok(())
}

/// One augmented copy per tile and family. Every copy draws from its own
/// stream keyed by `(seed, tile_id, family)`.
pub fn augment_tile(tile_id: &str, tile: &TileRaster, family: Family, cfg: &AugmentConfig, seed: u64) -> AugmentedTile {
    let mut s = rng::stream(seed, "augment", &[rng::id_part(tile_id), family as u64]);
    let params = sample_params(family, cfg, tile.width(), tile.height(), &mut s);
    AugmentedTile { tile_id: tile_id.to_string(), family, params, tile: apply(tile, &params) }
}

/// Output order: tiles in input order, families in the order given.
pub fn make_copy_detection_set(
    tiles: &[(String, TileRaster)],
    families: &[Family],
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<AugmentedTile>> {
    tiles.iter().try_for_each(|(id, _)| check_tile_id(id))?;
    let jobs: Vec<(usize, Family)> = (0..tiles.len()).flat_map(|t| families.iter().map(move |&f| (t, f))).collect();
    Ok(jobs.into_par_iter().map(|(t, f)| augment_tile(&tiles[t].0, &tiles[t].1, f, cfg, seed)).collect())
}

pub const AUG_MANIFEST_HEADER: [&str; 4] = ["tile_id", "family", "params_json", "path"];

/// Writes `aug/<family>/<tile_id>.ppm` under `out_dir` and
/// `aug_manifest.csv` next to them.
pub fn write_copy_detection_set(out_dir: &Path, set: &[AugmentedTile]) -> Result<()> {
    let mut w = csv::Writer::from_path(out_dir.join("aug_manifest.csv"))?;
    w.write_record(AUG_MANIFEST_HEADER)?;
    for a in set {
        let rel = a.relative_path();
        let path = out_dir.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_ppm(&path, &a.tile)?;
        w.write_record([a.tile_id.as_str(), a.family.as_str(), &serde_json::to_string(&a.params)?, &rel])?;
    }
    w.flush().map_err(|e| Error::io(out_dir.join("aug_manifest.csv"), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pattern(w: usize, h: usize) -> TileRaster {
        let mut t = TileRaster::filled(w, h, [0; 3]).unwrap();
        for y in 0..h {
            for x in 0..w {
                t.set(x, y, [(x * 17 + y * 3) as u8, (y * 11) as u8, ((x * y) % 251) as u8]);
            }
        }
        t
    }

    fn gradient(n: usize) -> TileRaster {
        let mut t = TileRaster::filled(n, n, [0; 3]).unwrap();
        for y in 0..n {
            for x in 0..n {
                let v = (255 * x / (n - 1)) as u8;
                t.set(x, y, [v, (255 * y / (n - 1)) as u8, 128]);
            }
        }
        t
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let t = pattern(23, 17);
        let geo = GeoParams { rotate_deg: 0.0, scale: 1.0, dx: 0.0, dy: 0.0 };
        assert_eq!(apply_geometric(&t, &geo), t);
        let color = ColorParams { alpha: 1.0, beta: 0.0, gamma: 1.0 };
        assert_eq!(apply_color(&t, &color), t);
        assert_eq!(apply_noise(&t, &NoiseParams { variance: 0.0, seed: 4 }), t);
        let el = ElasticParams { sigma: 12.0, alpha: 0.0, seed: 4 };
        assert_eq!(apply_elastic(&t, &el), t);
        let zero = AugmentConfig::zero_magnitude();
        for f in Family::ALL {
            assert_eq!(augment_tile("x", &t, f, &zero, 9).tile, t, "{f}");
        }
    }

    #[test]
    fn quarter_turn_is_permutation() {
        let n = 15;
        let t = pattern(n, n);
        let out = apply_geometric(&t, &GeoParams { rotate_deg: 90.0, scale: 1.0, dx: 0.0, dy: 0.0 });
        for y in 0..n {
            for x in 0..n {
                assert_eq!(out.get(x, y), t.get(y, n - 1 - x), "({x}, {y})");
            }
        }
    }

    #[test]
    fn shift_moves_content_and_fills_black() {
        let t = pattern(10, 10);
        let out = apply_geometric(&t, &GeoParams { rotate_deg: 0.0, scale: 1.0, dx: 2.0, dy: 0.0 });
        assert_eq!(out.get(5, 3), t.get(3, 3));
        assert_eq!(out.get(0, 3), [0; 3]);
    }

    #[test]
    fn sampled_params_in_range() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            for f in Family::ALL {
                match sample_params(f, &cfg, 224, 224, &mut rng) {
                    AugmentParams::Geo(p) => {
                        assert!(p.rotate_deg.abs() <= 30.0);
                        assert!((0.9..=1.1).contains(&p.scale));
                        assert!(p.dx.abs() <= 22.4 && p.dy.abs() <= 22.4);
                    }
                    AugmentParams::Color(p) => {
                        assert!((0.7..=1.3).contains(&p.alpha));
                        assert!(p.beta.abs() <= 0.3);
                        assert!((0.8..=1.2).contains(&p.gamma));
                    }
                    AugmentParams::Noise(p) => assert!((1.0..=25.0).contains(&p.variance)),
                    AugmentParams::Deform(p) => assert_eq!((p.sigma, p.alpha), (12.0, 20.0)),
                }
            }
        }
    }

    #[test]
    fn gamma_pointwise() {
        let t = TileRaster::filled(2, 2, [128; 3]).unwrap();
        let out = apply_color(&t, &ColorParams { alpha: 1.0, beta: 0.0, gamma: 2.0 });
        let expect = (255.0 * (128.0f64 / 255.0).powi(2)).round() as u8;
        assert_eq!(expect, 64);
        assert_eq!(out.get(0, 0), [64; 3]);
        let bright = TileRaster::filled(2, 2, [200; 3]).unwrap();
        let saturate = apply_color(&bright, &ColorParams { alpha: 1.3, beta: 0.3, gamma: 0.8 });
        assert_eq!(saturate.get(1, 1), [255; 3]);
    }

    #[test]
    fn noise_mean_and_determinism() {
        let t = TileRaster::filled(224, 224, [128; 3]).unwrap();
        let p = NoiseParams { variance: 25.0, seed: 77 };
        let a = apply_noise(&t, &p);
        assert_eq!(a, apply_noise(&t, &p));
        let mean: f64 = a.pixels().iter().map(|&v| v as f64 - 128.0).sum::<f64>() / a.pixels().len() as f64;
        assert!(mean.abs() <= 1.0, "{mean}");
        let var: f64 = a.pixels().iter().map(|&v| (v as f64 - 128.0).powi(2)).sum::<f64>() / a.pixels().len() as f64;
        assert!((var - 25.0).abs() < 1.5, "{var}");
    }

    #[test]
    fn kernel_normalised() {
        for s in [0.5, 3.0, 12.0] {
            let k = gaussian_kernel(s);
            assert!((k.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert_eq!(k.len(), 2 * (3.0 * s).ceil() as usize + 1);
        }
    }

    #[test]
    fn reflect_indexing() {
        let got: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-37, 3), reflect_index(36, 3));
    }

    #[test]
    fn elastic_bounds() {
        let p = ElasticParams { sigma: 12.0, alpha: 20.0, seed: 5 };
        let (dx, dy) = elastic_fields(64, 64, &p);
        let max = dx.iter().chain(&dy).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.0 && max <= 20.0);
        let t = gradient(64);
        let out = apply_elastic(&t, &p);
        let change: f64 =
            out.pixels().iter().zip(t.pixels()).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum::<f64>() / t.pixels().len() as f64;
        assert!(change > 0.0 && change < 20.0, "{change}");
    }

    #[test]
    fn copy_set_layout() {
        let tiles: Vec<(String, TileRaster)> = (0..3).map(|i| (format!("t{i}"), pattern(8, 8))).collect();
        let cfg = AugmentConfig::default();
        assert!(make_copy_detection_set(&tiles, &[], &cfg, 1).unwrap().is_empty());
        let set = make_copy_detection_set(&tiles, &Family::ALL, &cfg, 1).unwrap();
        assert_eq!(set.len(), 12);
        assert_eq!(set[5].tile_id, "t1");
        assert_eq!(set[5].family, Family::Color);
        assert_eq!(set[5].relative_path(), "aug/color/t1.ppm");
        // independent of the other tiles in the batch
        assert_eq!(set[5], augment_tile("t1", &tiles[1].1, Family::Color, &cfg, 1));
        let bad = vec![("../x".to_string(), pattern(2, 2))];
        assert!(make_copy_detection_set(&bad, &Family::ALL, &cfg, 1).is_err());
    }

    #[test]
    fn writes_manifest_and_tiles() {
        let dir = tempfile::tempdir().unwrap();
        let tiles = vec![("a".to_string(), pattern(6, 5))];
        let set = make_copy_detection_set(&tiles, &[Family::Noise, Family::Geo], &AugmentConfig::default(), 3).unwrap();
        write_copy_detection_set(dir.path(), &set).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("aug_manifest.csv")).unwrap();
        let lines: Vec<&str> = manifest.lines().collect();
        assert_eq!(lines[0], "tile_id,family,params_json,path");
        assert!(lines[1].starts_with("a,noise,\"{\"\"variance\"\":"));
        assert!(lines[2].ends_with(",aug/geo/a.ppm"));
        let back = crate::tileqc::read_ppm(dir.path().join("aug/noise/a.ppm")).unwrap();
        assert_eq!(back, set[0].tile);
    }

    #[test]
    fn family_names() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
        assert!("jpeg".parse::<Family>().is_err());
    }
}
