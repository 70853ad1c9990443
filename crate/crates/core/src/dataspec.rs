//! Data model: embedding tables, sample manifests, bags and spot-to-tubule
//! label aggregation.
//!
//! # EMB1 layout
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EMB1" (45 4D 42 31)
//! 4       4     version, u32 LE (= 1)
//! 8       8     n_rows, u64 LE
//! 16      4     dim, u32 LE
//! 20      ...   n_rows * dim f32 LE, row-major, no padding
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMB1_MAGIC: [u8; 4] = *b"EMB1";
pub const EMB1_VERSION: u32 = 1;
const EMB1_HEADER_LEN: usize = 20;

/// Number of cell types in a spot proportion vector.
pub const N_CELL_TYPES: usize = 16;

/// Dense row-major matrix of feature vectors, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    n_rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(n_rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if n_rows == 0 || dim == 0 {
            return Err(Error::Shape(format!("embedding table must be non-empty, got {n_rows}x{dim}")));
        }
        if data.len() != n_rows * dim {
            return Err(Error::Shape(format!("expected {} values for {n_rows}x{dim}, got {}", n_rows * dim, data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Value(format!("non-finite value at row {}, column {}", pos / dim, pos % dim)));
        }
        Ok(Self { n_rows, dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != dim {
                return Err(Error::Shape(format!("row {i} has length {}, expected {dim}", r.as_ref().len())));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Returns a copy with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(self.n_rows, self.dim, self.data.iter().map(|v| v * factor).collect())
    }

    /// Rows gathered in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            if r >= self.n_rows {
                return Err(Error::Range(format!("row {r} >= {}", self.n_rows)));
            }
            data.extend_from_slice(self.row(r));
        }
        Self::new(rows.len(), self.dim, data)
    }

    pub fn to_emb1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EMB1_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&EMB1_MAGIC);
        out.extend_from_slice(&EMB1_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_emb1_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < EMB1_HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != EMB1_MAGIC {
                return Err(Error::Format("bad magic".into()));
            }
            return Err(Error::Truncation(format!("header needs {EMB1_HEADER_LEN} bytes, file has {}", bytes.len())));
        }
        if bytes[..4] != EMB1_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != EMB1_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n_rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as u64;
        if n_rows == 0 || dim == 0 {
            return Err(Error::Format(format!("empty shape {n_rows}x{dim}")));
        }
        let expected = n_rows.checked_mul(dim).and_then(|v| v.checked_mul(4)).ok_or_else(|| Error::Format("shape overflows".into()))?;
        let payload = &bytes[EMB1_HEADER_LEN..];
        if payload.len() as u64 != expected {
            return Err(Error::Truncation(format!(
                "header declares {n_rows}x{dim} ({expected} bytes), payload has {} bytes",
                payload.len()
            )));
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(n_rows as usize, dim as usize, data)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::from_emb1_bytes(&bytes)
}

pub fn write_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, table.to_emb1_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Class,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Real(f64),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match *self {
            Label::Class(c) => Some(c),
            Label::Real(_) => None,
        }
    }

    pub fn real(&self) -> Option<f64> {
        match *self {
            Label::Real(v) => Some(v),
            Label::Class(_) => None,
        }
    }

    fn same_as(&self, other: &Label) -> bool {
        match (self, other) {
            (Label::Class(a), Label::Class(b)) => a == b,
            (Label::Real(a), Label::Real(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub row_index: usize,
    pub group_id: String,
    pub bag_id: Option<String>,
    pub label: Label,
}

/// Per-row metadata paired with an [`EmbeddingTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleManifest {
    pub entries: Vec<ManifestEntry>,
    pub kind: LabelKind,
    /// Class names in index order (empty for regression).
    pub class_names: Vec<String>,
}

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRecord {
    sample_id: String,
    row_index: String,
    group_id: String,
    bag_id: String,
    label: String,
}

pub const MANIFEST_HEADER: [&str; 5] = ["sample_id", "row_index", "group_id", "bag_id", "label"];

impl SampleManifest {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Parses and validates a manifest against a table with `n_rows` rows.
    pub fn from_reader<R: Read>(reader: R, n_rows: usize, kind: LabelKind) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::Format(format!(
                "manifest header must be `{}`, got `{}`",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut raw = Vec::new();
        for (line, rec) in rdr.deserialize::<ManifestRecord>().enumerate() {
            let rec = rec?;
            let row_index: usize =
                rec.row_index.trim().parse().map_err(|_| Error::Format(format!("line {}: bad row_index `{}`", line + 2, rec.row_index)))?;
            raw.push((rec, row_index));
        }

        let mut seen_rows = BTreeSet::new();
        let mut seen_ids = BTreeSet::new();
        for (rec, row) in &raw {
            if *row >= n_rows {
                return Err(Error::Range(format!("row_index {row} for sample `{}` but table has {n_rows} rows", rec.sample_id)));
            }
            if !seen_rows.insert(*row) {
                return Err(Error::Duplicate(format!("row_index {row}")));
            }
            if !seen_ids.insert(rec.sample_id.as_str()) {
                return Err(Error::Duplicate(format!("sample_id `{}`", rec.sample_id)));
            }
        }
        if seen_rows.len() != n_rows {
            return Err(Error::Coverage(format!("{} of {n_rows} rows are listed", seen_rows.len())));
        }

        let (labels, class_names) = match kind {
            LabelKind::Class => {
                let strings: Vec<&str> = raw.iter().map(|(r, _)| r.label.as_str()).collect();
                if strings.iter().any(|s| s.is_empty()) {
                    return Err(Error::LabelKind("empty label".into()));
                }
                let numeric = strings.iter().filter(|s| s.trim().parse::<f64>().is_ok()).count();
                if numeric != 0 && numeric != strings.len() {
                    return Err(Error::LabelKind("class labels mix numeric and textual values".into()));
                }
                let names: Vec<String> = strings.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>().into_iter().collect();
                if names.len() < 2 {
                    return Err(Error::LabelKind(format!("classification needs at least 2 classes, found {}", names.len())));
                }
                let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
                let labels = strings.iter().map(|s| Label::Class(index[s])).collect();
                (labels, names)
            }
            LabelKind::Real => {
                let mut labels = Vec::with_capacity(raw.len());
                for (rec, _) in &raw {
                    let v: f64 = rec.label.trim().parse().map_err(|_| {
                        Error::LabelKind(format!("sample `{}`: regression label `{}` is not a real number", rec.sample_id, rec.label))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Value(format!("sample `{}`: non-finite label", rec.sample_id)));
                    }
                    labels.push(Label::Real(v));
                }
                (labels, Vec::new())
            }
        };

        let entries = raw
            .into_iter()
            .zip(labels)
            .map(|((rec, row_index), label)| ManifestEntry {
                sample_id: rec.sample_id,
                row_index,
                group_id: rec.group_id,
                bag_id: if rec.bag_id.is_empty() { None } else { Some(rec.bag_id) },
                label,
            })
            .collect();
        Ok(Self { entries, kind, class_names })
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(MANIFEST_HEADER)?;
        for e in &self.entries {
            let label = match e.label {
                Label::Class(c) => self.class_names[c].clone(),
                Label::Real(v) => format!("{v}"),
            };
            wtr.write_record([
                e.sample_id.as_str(),
                &e.row_index.to_string(),
                e.group_id.as_str(),
                e.bag_id.as_deref().unwrap_or(""),
                &label,
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<manifest>", e))?;
        Ok(())
    }

    /// True when two manifests describe the same samples with the same
    /// groups, bags and labels (row order and row indices may differ).
    pub fn same_design(&self, other: &SampleManifest) -> bool {
        if self.kind != other.kind || self.class_names != other.class_names {
            return false;
        }
        let key = |m: &SampleManifest| {
            let mut v: Vec<_> = m.entries.iter().map(|e| (e.sample_id.clone(), e.group_id.clone(), e.bag_id.clone(), e.label)).collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v
        };
        let (a, b) = (key(self), key(other));
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.0 == y.0 && x.1 == y.1 && x.2 == y.2 && x.3.same_as(&y.3))
    }
}

pub fn load_manifest(path: impl AsRef<Path>, table: &EmbeddingTable, kind: LabelKind) -> Result<SampleManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    SampleManifest::from_reader(file, table.n_rows(), kind)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &SampleManifest) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    manifest.write(BufWriter::new(file))
}

/// One slide: the rows of its tile embeddings and its slide-level label.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub bag_id: String,
    pub group_id: String,
    pub label: Label,
    /// Row indices into the embedding table, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BagSet {
    /// Sorted by `bag_id`.
    pub bags: Vec<Bag>,
}

impl BagSet {
    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn get(&self, bag_id: &str) -> Option<&Bag> {
        self.bags.binary_search_by(|b| b.bag_id.as_str().cmp(bag_id)).ok().map(|i| &self.bags[i])
    }
}

pub fn assemble_bags(manifest: &SampleManifest) -> Result<BagSet> {
    let mut by_id: BTreeMap<&str, Bag> = BTreeMap::new();
    for e in &manifest.entries {
        let bag_id = e.bag_id.as_deref().ok_or_else(|| Error::Argument(format!("sample `{}` has no bag_id", e.sample_id)))?;
        match by_id.get_mut(bag_id) {
            Some(bag) => {
                if !bag.label.same_as(&e.label) {
                    return Err(Error::LabelConflict { bag: bag_id.to_string(), what: "labels" });
                }
                if bag.group_id != e.group_id {
                    return Err(Error::LabelConflict { bag: bag_id.to_string(), what: "group ids" });
                }
                bag.members.push(e.row_index);
            }
            None => {
                by_id.insert(
                    bag_id,
                    Bag { bag_id: bag_id.to_string(), group_id: e.group_id.clone(), label: e.label, members: vec![e.row_index] },
                );
            }
        }
    }
    let bags = by_id
        .into_values()
        .map(|mut b| {
            b.members.sort_unstable();
            b
        })
        .collect();
    Ok(BagSet { bags })
}

/// A spatial spot overlapping one tubule.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotVector {
    pub spot_id: String,
    pub proportions: [f64; N_CELL_TYPES],
    /// Overlap area with the tubule in pixels².
    pub overlap_area: f64,
}

impl SpotVector {
    pub fn new(spot_id: impl Into<String>, proportions: [f64; N_CELL_TYPES], overlap_area: f64) -> Result<Self> {
        let spot_id = spot_id.into();
        if !(overlap_area >= 0.0 && overlap_area.is_finite()) {
            return Err(Error::Value(format!("spot `{spot_id}`: overlap area {overlap_area}")));
        }
        if proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Value(format!("spot `{spot_id}`: negative or non-finite proportion")));
        }
        let sum: f64 = proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Value(format!("spot `{spot_id}`: proportions sum to {sum}")));
        }
        Ok(Self { spot_id, proportions, overlap_area })
    }
}

/// Area-weighted mean of the proportion vectors of all spots with positive
/// overlap.
pub fn aggregate_spot_vectors(spots: &[SpotVector]) -> Result<[f64; N_CELL_TYPES]> {
    let total: f64 = spots.iter().filter(|s| s.overlap_area > 0.0).map(|s| s.overlap_area).sum();
    if total <= 0.0 {
        return Err(Error::EmptyOverlap);
    }
    let mut out = [0.0; N_CELL_TYPES];
    for s in spots.iter().filter(|s| s.overlap_area > 0.0) {
        let w = s.overlap_area / total;
        for (o, p) in out.iter_mut().zip(&s.proportions) {
            *o += w * p;
        }
    }
    Ok(out)
}

/// Reads a `spot_id,area,p0,...,p15` table.
pub fn read_spot_table<R: Read>(reader: R) -> Result<Vec<SpotVector>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut expected = vec!["spot_id".to_string(), "area".to_string()];
    expected.extend((0..N_CELL_TYPES).map(|i| format!("p{i}")));
    if header != expected {
        return Err(Error::Format(format!("spot table header must be `{}`", expected.join(","))));
    }
    let mut spots = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].trim().parse().map_err(|_| Error::Format(format!("line {}: column {} is not a number", line + 2, header[i])))
        };
        let area = num(1)?;
        let mut p = [0.0; N_CELL_TYPES];
        for (i, slot) in p.iter_mut().enumerate() {
            *slot = num(2 + i)?;
        }
        spots.push(SpotVector::new(&rec[0], p, area)?);
    }
    Ok(spots)
}

/// Labels an aggregated tubule vector as reference-state when the share of
/// `reference` cell types among `reference ∪ altered` exceeds `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStateRule {
    pub reference: Vec<usize>,
    pub altered: Vec<usize>,
    #[serde(default = "default_majority")]
    pub threshold: f64,
}

fn default_majority() -> f64 {
    0.5
}

impl ReferenceStateRule {
    /// `None` when neither state is present in the vector.
    pub fn is_reference(&self, y: &[f64; N_CELL_TYPES]) -> Option<bool> {
        let r: f64 = self.reference.iter().map(|&i| y[i]).sum();
        let a: f64 = self.altered.iter().map(|&i| y[i]).sum();
        if r + a <= 0.0 {
            return None;
        }
        Some(r / (r + a) > self.threshold)
    }
}
