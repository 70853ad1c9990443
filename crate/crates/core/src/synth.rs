//! Synthetic fixtures with planted signal: two-Gaussian tile tasks,
//! indicator-instance MIL bags, copy-detection tables and simple tiles.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::augment::Family;
use crate::config::{ModelInput, RunConfig};
use crate::dataspec::{write_embeddings, write_manifest, EmbeddingTable, Label, LabelKind, ManifestEntry, SampleManifest};
use crate::error::{Error, Result};
use crate::rng;
use crate::runner::{ProbeKind, TaskKind};
use crate::tileqc::TileRaster;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileTaskSpec {
    pub n_tiles: usize,
    pub n_groups: usize,
    pub dim: usize,
    /// Class means sit at `±margin` (in noise standard deviations) along
    /// the first axis.
    pub margin: f64,
    /// Permute the labels across tiles after generation.
    pub shuffle_labels: bool,
}

impl Default for TileTaskSpec {
    fn default() -> Self {
        Self { n_tiles: 2000, n_groups: 50, dim: 32, margin: 4.0, shuffle_labels: false }
    }
}

fn gaussian(rng: &mut impl Rng) -> f32 {
    let v: f64 = StandardNormal.sample(rng);
    v as f32
}

/// Two-class tiles; every group holds tiles of a single class and groups
/// alternate between classes. Classes are named `neg` and `pos`.
pub fn tile_task(spec: &TileTaskSpec, seed: u64) -> Result<(EmbeddingTable, SampleManifest)> {
    if spec.n_groups < 2 || spec.n_tiles < spec.n_groups || spec.dim == 0 {
        return Err(Error::Argument("tile task needs >= 2 groups, one tile per group and dim >= 1".into()));
    }
    let mut r = rng::stream(seed, "synth-tiles", &[]);
    let mut data = Vec::with_capacity(spec.n_tiles * spec.dim);
    let mut labels = Vec::with_capacity(spec.n_tiles);
    for i in 0..spec.n_tiles {
        let group = i % spec.n_groups;
        let class = group % 2;
        let sign = if class == 1 { 1.0 } else { -1.0 };
        for j in 0..spec.dim {
            let mean = if j == 0 { sign * spec.margin } else { 0.0 };
            data.push(mean as f32 + gaussian(&mut r));
        }
        labels.push(class);
    }
    if spec.shuffle_labels {
        labels.shuffle(&mut rng::stream(seed, "synth-shuffle", &[]));
    }
    let entries = labels
        .iter()
        .enumerate()
        .map(|(i, &c)| ManifestEntry {
            sample_id: format!("t{i:05}"),
            row_index: i,
            group_id: format!("g{:03}", i % spec.n_groups),
            bag_id: None,
            label: Label::Class(c),
        })
        .collect();
    Ok((
        EmbeddingTable::new(spec.n_tiles, spec.dim, data)?,
        SampleManifest { entries, kind: LabelKind::Class, class_names: vec!["neg".into(), "pos".into()] },
    ))
}

/// Linear regression tiles: `y = 10·x₀ + 50 + noise`.
pub fn tile_regression_task(
    n_tiles: usize,
    n_groups: usize,
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<(EmbeddingTable, SampleManifest)> {
    let mut r = rng::stream(seed, "synth-regression", &[]);
    let mut data = Vec::with_capacity(n_tiles * dim);
    let mut entries = Vec::with_capacity(n_tiles);
    for i in 0..n_tiles {
        let row: Vec<f32> = (0..dim).map(|_| gaussian(&mut r)).collect();
        let y = 10.0 * row[0] as f64 + 50.0 + noise * gaussian(&mut r) as f64;
        data.extend(row);
        entries.push(ManifestEntry {
            sample_id: format!("t{i:05}"),
            row_index: i,
            group_id: format!("g{:03}", i % n_groups),
            bag_id: None,
            label: Label::Real(y),
        });
    }
    Ok((EmbeddingTable::new(n_tiles, dim, data)?, SampleManifest { entries, kind: LabelKind::Real, class_names: Vec::new() }))
}

/// Balanced two-class bags of 4–8 instances; a positive bag holds exactly
/// one instance shifted by `shift` on every coordinate. One patient per bag.
pub fn mil_task(n_bags: usize, dim: usize, shift: f64, seed: u64) -> Result<(EmbeddingTable, SampleManifest)> {
    if dim == 0 || n_bags < 2 {
        return Err(Error::Argument("MIL task needs >= 2 bags and dim >= 1".into()));
    }
    let mut r = rng::stream(seed, "synth-mil", &[]);
    let mut data = Vec::new();
    let mut entries = Vec::new();
    for b in 0..n_bags {
        let class = b % 2;
        let k = r.random_range(4..=8);
        let hit = r.random_range(0..k);
        for t in 0..k {
            let row = entries.len();
            for _ in 0..dim {
                let mut v = gaussian(&mut r);
                if class == 1 && t == hit {
                    v += shift as f32;
                }
                data.push(v);
            }
            entries.push(ManifestEntry {
                sample_id: format!("b{b:03}_t{t}"),
                row_index: row,
                group_id: format!("p{b:03}"),
                bag_id: Some(format!("b{b:03}")),
                label: Label::Class(class),
            });
        }
    }
    Ok((
        EmbeddingTable::new(entries.len(), dim, data)?,
        SampleManifest { entries, kind: LabelKind::Class, class_names: vec!["neg".into(), "pos".into()] },
    ))
}

/// Random originals and, per family, a copy perturbed by Gaussian noise of
/// standard deviation `noise` (0 gives identity copies).
pub fn copy_detect_tables(
    n: usize,
    dim: usize,
    families: &[Family],
    noise: f64,
    seed: u64,
) -> Result<(EmbeddingTable, Vec<(Family, EmbeddingTable)>)> {
    let mut r = rng::stream(seed, "synth-copy", &[]);
    let original = EmbeddingTable::new(n, dim, (0..n * dim).map(|_| gaussian(&mut r)).collect())?;
    let augmented = families
        .iter()
        .map(|&f| {
            let mut s = rng::stream(seed, "synth-copy-family", &[f as u64]);
            let data = original.data().iter().map(|&v| v + (noise as f32) * gaussian(&mut s)).collect();
            Ok((f, EmbeddingTable::new(n, dim, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((original, augmented))
}

/// Pink stained texture with a few lighter gaps; passes QC.
pub fn tissue_tile(size: usize, seed: u64) -> Result<TileRaster> {
    let mut r = rng::stream(seed, "synth-tissue", &[]);
    let mut t = TileRaster::filled(size, size, [0; 3])?;
    for y in 0..size {
        for x in 0..size {
            let wave = ((x as f64 * 0.21).sin() + (y as f64 * 0.17).cos()) * 20.0;
            let jitter = r.random_range(-12.0..12.0);
            let base = 170.0 + wave + jitter;
            t.set(
                x,
                y,
                [(base + 40.0).clamp(0.0, 255.0) as u8, (base - 60.0).clamp(0.0, 255.0) as u8, (base + 10.0).clamp(0.0, 255.0) as u8],
            );
        }
    }
    Ok(t)
}

fn write_model(dir: &Path, id: &str, table: &EmbeddingTable, manifest: &SampleManifest) -> Result<ModelInput> {
    let emb = format!("{id}.emb1");
    let csv = format!("{id}.csv");
    write_embeddings(dir.join(&emb), table)?;
    write_manifest(dir.join(&csv), manifest)?;
    Ok(ModelInput { id: id.to_string(), embeddings: PathBuf::from(emb), manifest: Some(PathBuf::from(csv)), augmented: BTreeMap::new() })
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Tile classification fixture with a `good` (margin 4) and a `weak`
/// (margin 0.25) encoder over the same tiles. Returns the config path.
pub fn write_tile_fixture(dir: &Path, spec: &TileTaskSpec, seed: u64) -> Result<PathBuf> {
    create(dir)?;
    let (good, manifest) = tile_task(spec, seed)?;
    let (weak, _) = tile_task(&TileTaskSpec { margin: 0.25, ..*spec }, seed)?;
    let cfg = RunConfig {
        seed,
        models: vec![write_model(dir, "good", &good, &manifest)?, write_model(dir, "weak", &weak, &manifest)?],
        ..Default::default()
    };
    write_config(dir, &cfg)
}

/// Slide classification fixture: indicator-instance bags for one encoder.
pub fn write_mil_fixture(dir: &Path, n_bags: usize, dim: usize, shift: f64, seed: u64) -> Result<PathBuf> {
    create(dir)?;
    let (table, manifest) = mil_task(n_bags, dim, shift, seed)?;
    let mut cfg = RunConfig { seed, ..Default::default() };
    cfg.task.kind = TaskKind::SlideClass;
    cfg.task.probe = ProbeKind::Abmil;
    cfg.models = vec![write_model(dir, "mil", &table, &manifest)?];
    write_config(dir, &cfg)
}

/// Copy-detection fixture with identity copies for every family.
pub fn write_copy_fixture(dir: &Path, n: usize, dim: usize, seed: u64) -> Result<PathBuf> {
    create(dir)?;
    let (original, augmented) = copy_detect_tables(n, dim, &Family::ALL, 0.0, seed)?;
    write_embeddings(dir.join("original.emb1"), &original)?;
    let mut paths = BTreeMap::new();
    for (f, t) in &augmented {
        let name = format!("{f}.emb1");
        write_embeddings(dir.join(&name), t)?;
        paths.insert(*f, PathBuf::from(name));
    }
    let mut cfg = RunConfig { seed, ..Default::default() };
    cfg.task.kind = TaskKind::CopyDetect;
    cfg.models = vec![ModelInput { id: "enc".into(), embeddings: PathBuf::from("original.emb1"), manifest: None, augmented: paths }];
    write_config(dir, &cfg)
}

/// A directory of tiles for QC and augmentation: `tissue_*` tiles, one
/// white background tile and one black tile.
pub fn write_tile_images(dir: &Path, n_tissue: usize, size: usize, seed: u64) -> Result<()> {
    create(dir)?;
    for i in 0..n_tissue {
        crate::tileqc::write_ppm(dir.join(format!("tissue_{i:03}.ppm")), &tissue_tile(size, rng::derive_seed(seed, "tile", &[i as u64]))?)?;
    }
    crate::tileqc::write_ppm(dir.join("white.ppm"), &TileRaster::filled(size, size, [245, 245, 245])?)?;
    crate::tileqc::write_ppm(dir.join("black.ppm"), &TileRaster::filled(size, size, [10, 10, 10])?)?;
    Ok(())
}
