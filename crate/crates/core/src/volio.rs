//! Volume and tabular I/O, population intensity normalization and the
//! planted-strata synthetic generator.
//!
//! MMFV layout: magic `MMFV`, then little-endian `u32` version (1), `nx`,
//! `ny`, `nz`, then `nx·ny·nz` little-endian `f32` voxels with x varying
//! fastest.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::stats_util::percentile_in_place;

pub const MMFV_MAGIC: &[u8; 4] = b"MMFV";
pub const MMFV_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum VolioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic {found:?}, expected \"MMFV\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported MMFV version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated header ({0} bytes)")]
    TruncatedHeader(usize),
    #[error("payload mismatch: dims {dims:?} need {expected} voxels, file carries {found_bytes} payload bytes")]
    PayloadMismatch {
        dims: [usize; 3],
        expected: usize,
        found_bytes: usize,
    },
    #[error("non-finite voxel at index {0}")]
    NonFinite(usize),
    #[error("invalid dims {0:?}")]
    InvalidDims([usize; 3]),
    #[error("degenerate intensity range: q_lo = q_hi = {0}")]
    DegenerateRange(f64),
    #[error("phenotype table, row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate subject id `{0}`")]
    DuplicateSubject(String),
    #[error("{0}")]
    Invalid(String),
}

impl VolioError {
    fn io(path: &Path, source: io::Error) -> Self {
        VolioError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, VolioError>;

/// One modality's scalar field for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub voxels: Vec<f32>,
    pub modality: String,
}

impl Volume {
    pub fn new(dims: [usize; 3], voxels: Vec<f32>, modality: impl Into<String>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(VolioError::InvalidDims(dims));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if voxels.len() != expected {
            return Err(VolioError::PayloadMismatch {
                dims,
                expected,
                found_bytes: voxels.len() * 4,
            });
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(VolioError::NonFinite(i));
        }
        Ok(Self {
            dims,
            voxels,
            modality: modality.into(),
        })
    }

    pub fn zeros(dims: [usize; 3], modality: impl Into<String>) -> Self {
        Self {
            dims,
            voxels: vec![0.0; dims[0] * dims[1] * dims[2]],
            modality: modality.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }
}

pub fn encode_volume(vol: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * vol.len());
    out.extend_from_slice(MMFV_MAGIC);
    out.extend_from_slice(&MMFV_VERSION.to_le_bytes());
    for d in vol.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &vol.voxels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8], modality: impl Into<String>) -> Result<Volume> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MMFV_MAGIC {
            return Err(VolioError::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(VolioError::TruncatedHeader(bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MMFV_MAGIC {
        return Err(VolioError::BadMagic { found: magic });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != MMFV_VERSION {
        return Err(VolioError::UnsupportedVersion(version));
    }
    let dims = [word(2) as usize, word(3) as usize, word(4) as usize];
    if dims.contains(&0) {
        return Err(VolioError::InvalidDims(dims));
    }
    let expected = dims[0] * dims[1] * dims[2];
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected * 4 {
        return Err(VolioError::PayloadMismatch {
            dims,
            expected,
            found_bytes: payload.len(),
        });
    }
    let voxels: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(dims, voxels, modality)
}

/// Reads an MMFV file. The modality tag is taken from the file stem.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| VolioError::io(path, e))?;
    let modality = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_volume(&bytes, modality)
}

pub fn write_volume(path: impl AsRef<Path>, vol: &Volume) -> Result<()> {
    let path = path.as_ref();
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&encode_volume(vol)))
        .map_err(|e| VolioError::io(path, e))
}

/// The population percentiles used by [`minmax_normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityRange {
    pub q_lo: f64,
    pub q_hi: f64,
}

impl IntensityRange {
    pub fn from_values(values: &[f32], p_lo: f64, p_hi: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(VolioError::Invalid("no values to normalize".into()));
        }
        let mut v: Vec<f64> = values.iter().map(|&x| f64::from(x)).collect();
        let q_lo = percentile_in_place(&mut v, p_lo);
        let q_hi = percentile_in_place(&mut v, p_hi);
        if q_hi <= q_lo {
            return Err(VolioError::DegenerateRange(q_lo));
        }
        Ok(Self { q_lo, q_hi })
    }

    #[inline]
    pub fn apply(&self, v: f32) -> f32 {
        ((f64::from(v) - self.q_lo) / (self.q_hi - self.q_lo)).clamp(0.0, 1.0) as f32
    }
}

/// Min-max normalization between the `p_lo` and `p_hi` population
/// percentiles, clamped into `[0, 1]`.
pub fn minmax_normalize(values: &[f32], p_lo: f64, p_hi: f64) -> Result<Vec<f32>> {
    let range = IntensityRange::from_values(values, p_lo, p_hi)?;
    Ok(values.iter().map(|&v| range.apply(v)).collect())
}

/// Normalizes one modality jointly over every subject's volume.
pub fn normalize_population(volumes: &mut [&mut Volume], p_lo: f64, p_hi: f64) -> Result<IntensityRange> {
    let pooled: Vec<f32> = volumes.iter().flat_map(|v| v.voxels.iter().copied()).collect();
    let range = IntensityRange::from_values(&pooled, p_lo, p_hi)?;
    for vol in volumes.iter_mut() {
        for v in vol.voxels.iter_mut() {
            *v = range.apply(*v);
        }
    }
    Ok(range)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// One volume per modality, in the dataset's modality order.
    pub volumes: Vec<Volume>,
}

impl SubjectRecord {
    pub fn volume(&self, modality: &str) -> Option<&Volume> {
        self.volumes.iter().find(|v| v.modality == modality)
    }
}

/// A population of subjects sharing one modality set and one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub modalities: Vec<String>,
    pub dims: [usize; 3],
    pub subjects: Vec<SubjectRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.subjects {
            if !seen.insert(s.subject_id.as_str()) {
                return Err(VolioError::DuplicateSubject(s.subject_id.clone()));
            }
            if s.volumes.len() != self.modalities.len() {
                return Err(VolioError::Invalid(format!(
                    "subject {} has {} volumes, expected {}",
                    s.subject_id,
                    s.volumes.len(),
                    self.modalities.len()
                )));
            }
            for (v, m) in s.volumes.iter().zip(&self.modalities) {
                if &v.modality != m || v.dims != self.dims {
                    return Err(VolioError::Invalid(format!(
                        "subject {}: volume {} {:?} does not match modality {} {:?}",
                        s.subject_id, v.modality, v.dims, m, self.dims
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }

    /// Subset by subject index, preserving the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            modalities: self.modalities.clone(),
            dims: self.dims,
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }

    /// Population min-max normalization, per modality.
    pub fn normalize(&mut self, p_lo: f64, p_hi: f64) -> Result<Vec<IntensityRange>> {
        let mut ranges = Vec::with_capacity(self.modalities.len());
        for m in 0..self.modalities.len() {
            let mut vols: Vec<&mut Volume> = self.subjects.iter_mut().map(|s| &mut s.volumes[m]).collect();
            ranges.push(normalize_population(&mut vols, p_lo, p_hi)?);
        }
        Ok(ranges)
    }
}

/// Subject × variable phenotype matrix with a missing-value mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PhenoTable {
    pub subject_ids: Vec<String>,
    pub variable_names: Vec<String>,
    /// Row-major `n × p`; masked cells hold `NaN`.
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
    /// Variables removed at load time for having no variance.
    pub dropped: Vec<String>,
}

impl PhenoTable {
    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_variables(&self) -> usize {
        self.variable_names.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.n_variables() + j;
        (!self.missing[k]).then_some(self.values[k])
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn from_rows(subject_ids: Vec<String>, variable_names: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let p = variable_names.len();
        let mut values = Vec::with_capacity(rows.len() * p);
        let mut missing = Vec::with_capacity(rows.len() * p);
        if rows.len() != subject_ids.len() {
            return Err(VolioError::Invalid("row count does not match subject ids".into()));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(VolioError::Csv {
                    row: r + 2,
                    column: row.len() + 1,
                    message: format!("expected {p} values"),
                });
            }
            for cell in row {
                values.push(cell.unwrap_or(f64::NAN));
                missing.push(cell.is_none());
            }
        }
        Ok(Self {
            subject_ids,
            variable_names,
            values,
            missing,
            dropped: Vec::new(),
        })
    }

    /// Removes variables with fewer than two distinct observed values.
    fn drop_constant_columns(&mut self) {
        let (n, p) = (self.n_subjects(), self.n_variables());
        let keep: Vec<bool> = (0..p)
            .map(|j| {
                let mut obs = (0..n).filter_map(|i| self.get(i, j));
                match obs.next() {
                    Some(first) => obs.any(|v| v != first),
                    None => false,
                }
            })
            .collect();
        if keep.iter().all(|&k| k) {
            return;
        }
        let mut values = Vec::new();
        let mut missing = Vec::new();
        for i in 0..n {
            for j in (0..p).filter(|&j| keep[j]) {
                values.push(self.values[i * p + j]);
                missing.push(self.missing[i * p + j]);
            }
        }
        let mut names = Vec::new();
        for (j, name) in self.variable_names.drain(..).enumerate() {
            if keep[j] {
                names.push(name);
            } else {
                log::warn!("dropping phenotype `{name}`: zero variance");
                self.dropped.push(name);
            }
        }
        self.variable_names = names;
        self.values = values;
        self.missing = missing;
    }
}

/// Parses a phenotype CSV: header row, `subject_id` first, blank cells
/// are missing. Zero-variance variables are dropped with a warning.
pub fn parse_phenotypes<R: io::Read>(reader: R) -> Result<PhenoTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| VolioError::Csv {
            row: 1,
            column: 0,
            message: e.to_string(),
        })?
        .clone();
    if header.is_empty() || &header[0] != "subject_id" {
        return Err(VolioError::Csv {
            row: 1,
            column: 1,
            message: "first column must be `subject_id`".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row_no = r + 2;
        let rec = rec.map_err(|e| VolioError::Csv {
            row: row_no,
            column: 0,
            message: e.to_string(),
        })?;
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(VolioError::DuplicateSubject(id));
        }
        let mut row = Vec::with_capacity(names.len());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            if cell.is_empty() {
                row.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(Some(v)),
                _ => {
                    return Err(VolioError::Csv {
                        row: row_no,
                        column: c + 1,
                        message: format!("non-numeric cell `{cell}`"),
                    })
                }
            }
        }
        ids.push(id);
        rows.push(row);
    }
    let mut table = PhenoTable::from_rows(ids, names, rows)?;
    table.drop_constant_columns();
    Ok(table)
}

pub fn load_phenotypes(path: impl AsRef<Path>) -> Result<PhenoTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| VolioError::io(path, e))?;
    parse_phenotypes(io::BufReader::new(file))
}

pub fn write_phenotypes<W: io::Write>(table: &PhenoTable, writer: W) -> Result<()> {
    let to_err = |e: csv::Error| VolioError::Invalid(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["subject_id".to_string()];
    header.extend(table.variable_names.iter().cloned());
    w.write_record(&header).map_err(to_err)?;
    for (i, id) in table.subject_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        for j in 0..table.n_variables() {
            rec.push(table.get(i, j).map(|v| format!("{v}")).unwrap_or_default());
        }
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| VolioError::Invalid(e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dims: [usize; 3],
    modalities: Vec<String>,
    subjects: Vec<String>,
}

fn volume_path(dir: &Path, subject: &str, modality: &str) -> PathBuf {
    dir.join("volumes").join(format!("{subject}_{modality}.mmfv"))
}

/// Writes a dataset directory: `manifest.json` and one MMFV file per
/// subject and modality under `volumes/`.
pub fn write_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    data.validate()?;
    let vdir = dir.join("volumes");
    fs::create_dir_all(&vdir).map_err(|e| VolioError::io(&vdir, e))?;
    let manifest = Manifest {
        format: "fusestrata-dataset/1".into(),
        dims: data.dims,
        modalities: data.modalities.clone(),
        subjects: data.subject_ids(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| VolioError::io(&path, e))?;
    for s in &data.subjects {
        for v in &s.volumes {
            write_volume(volume_path(dir, &s.subject_id, &v.modality), v)?;
        }
    }
    Ok(())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| VolioError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| VolioError::Invalid(format!("{}: {e}", path.display())))?;
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for id in &manifest.subjects {
        let mut volumes = Vec::with_capacity(manifest.modalities.len());
        for m in &manifest.modalities {
            let mut v = read_volume(volume_path(dir, id, m))?;
            v.modality = m.clone();
            volumes.push(v);
        }
        subjects.push(SubjectRecord {
            subject_id: id.clone(),
            volumes,
        });
    }
    let data = Dataset {
        modalities: manifest.modalities,
        dims: manifest.dims,
        subjects,
    };
    data.validate()?;
    Ok(data)
}

/// Writes `subject_id,group` rows.
pub fn write_labels<W: io::Write>(ids: &[String], labels: &[usize], writer: W) -> Result<()> {
    let to_err = |e: csv::Error| VolioError::Invalid(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "group"]).map_err(to_err)?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string()]).map_err(to_err)?;
    }
    w.flush().map_err(|e| VolioError::Invalid(e.to_string()))
}

/// Parameters of the planted-strata generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub dims: [usize; 3],
    pub n_groups: usize,
    pub effect_size: f64,
    pub seed: u64,
    pub n_modalities: usize,
    /// Dimensions must be divisible by `2^depth`.
    pub depth: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 60,
            dims: [32, 32, 24],
            n_groups: 3,
            effect_size: 2.0,
            seed: 7,
            n_modalities: 2,
            depth: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    /// Volumes already population-normalized into `[0, 1]`.
    pub data: Dataset,
    pub labels: Vec<usize>,
    pub phenotypes: PhenoTable,
    /// Phenotype variables driven by group identity.
    pub planted_variables: Vec<String>,
}

const BASE_BUMPS: usize = 5;
const BASE_AMPLITUDE: f64 = 0.06;
const VOXEL_NOISE: f64 = 0.015;
const GROUP_AMPLITUDE: f64 = 0.1;
const PHENO_PER_FACTOR: usize = 4;

struct Bump {
    center: [f64; 3],
    sigma: f64,
    amplitude: f64,
}

impl Bump {
    #[inline]
    fn at(&self, p: [f64; 3]) -> f64 {
        let d2: f64 = (0..3).map(|a| (p[a] - self.center[a]).powi(2)).sum();
        self.amplitude * (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Generates a population with `n_groups` planted strata.
///
/// Each subject gets, per modality, an ellipsoidal "brain" template on a
/// zero background, a few random smooth bumps and voxel noise. Group `g`
/// adds a localized bump at a group-specific site, scaled by
/// `effect_size` (sign alternates across modalities). Subject `i` belongs
/// to group `i mod n_groups`.
///
/// The phenotype table has three latent traits with four indicator
/// variables each. The first trait's mean depends on group identity, so
/// its indicators (`planted_*`) carry the strata; the other two are noise.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    let [nx, ny, nz] = cfg.dims;
    if cfg.n_groups == 0 || cfg.n_groups > cfg.n_subjects {
        return Err(VolioError::Invalid(format!(
            "n_groups ({}) must be in 1..=n_subjects ({})",
            cfg.n_groups, cfg.n_subjects
        )));
    }
    let unit = 1usize << cfg.depth;
    if cfg.dims.iter().any(|&d| d == 0 || d % unit != 0) {
        return Err(VolioError::Invalid(format!(
            "dims {:?} must be positive multiples of 2^{} = {unit}",
            cfg.dims, cfg.depth
        )));
    }
    if cfg.n_modalities == 0 {
        return Err(VolioError::Invalid("need at least one modality".into()));
    }
    let modalities: Vec<String> = (1..=cfg.n_modalities).map(|m| format!("m{m}")).collect();
    let center = [nx as f64 / 2.0 - 0.5, ny as f64 / 2.0 - 0.5, nz as f64 / 2.0 - 0.5];
    let radii = [0.42 * nx as f64, 0.42 * ny as f64, 0.42 * nz as f64];
    let min_dim = nx.min(ny).min(nz) as f64;
    let max_dim = nx.max(ny) as f64;

    // per-voxel normalized squared radius inside the ellipsoid, None outside
    let mut r2 = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64, y as f64, z as f64];
                let rr: f64 = (0..3).map(|a| ((p[a] - center[a]) / radii[a]).powi(2)).sum();
                r2.push((rr <= 1.0).then_some(rr));
            }
        }
    }

    let group_sites: Vec<[f64; 3]> = (0..cfg.n_groups)
        .map(|g| {
            let angle = 2.0 * std::f64::consts::PI * g as f64 / cfg.n_groups as f64;
            [
                center[0] + 0.22 * nx as f64 * angle.cos(),
                center[1] + 0.22 * ny as f64 * angle.sin(),
                center[2],
            ]
        })
        .collect();
    let group_sigma = 0.1 * max_dim;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let labels: Vec<usize> = (0..cfg.n_subjects).map(|i| i % cfg.n_groups).collect();
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    for (i, &group) in labels.iter().enumerate() {
        let mut rng = seed::stream(cfg.seed, "synth-subject", i as u64);
        let mut volumes = Vec::with_capacity(cfg.n_modalities);
        for (m, name) in modalities.iter().enumerate() {
            let bumps: Vec<Bump> = (0..BASE_BUMPS)
                .map(|_| Bump {
                    center: [
                        nx as f64 * rng.random_range(0.25..0.75),
                        ny as f64 * rng.random_range(0.25..0.75),
                        nz as f64 * rng.random_range(0.25..0.75),
                    ],
                    sigma: 0.12 * min_dim,
                    amplitude: BASE_AMPLITUDE * noise.sample(&mut rng),
                })
                .collect();
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let planted = Bump {
                center: group_sites[group],
                sigma: group_sigma,
                amplitude: sign * GROUP_AMPLITUDE * cfg.effect_size,
            };
            let mut voxels = Vec::with_capacity(r2.len());
            let mut k = 0;
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let v = match r2[k] {
                            None => 0.0,
                            Some(rr) => {
                                let p = [x as f64, y as f64, z as f64];
                                let template = if m % 2 == 0 { 0.45 + 0.3 * rr } else { 0.8 - 0.35 * rr };
                                let field: f64 = bumps.iter().map(|b| b.at(p)).sum();
                                let v = template + field + planted.at(p) + VOXEL_NOISE * noise.sample(&mut rng);
                                v.max(0.01)
                            }
                        };
                        voxels.push(v as f32);
                        k += 1;
                    }
                }
            }
            volumes.push(Volume::new(cfg.dims, voxels, name.clone())?);
        }
        subjects.push(SubjectRecord {
            subject_id: format!("sub{:04}", i + 1),
            volumes,
        });
    }
    let mut data = Dataset {
        modalities,
        dims: cfg.dims,
        subjects,
    };
    data.normalize(0.1, 99.9)?;

    let (phenotypes, planted_variables) = synth_phenotypes(cfg, &labels, &data.subject_ids());
    Ok(SynthDataset {
        data,
        labels,
        phenotypes,
        planted_variables,
    })
}

fn synth_phenotypes(cfg: &SynthConfig, labels: &[usize], ids: &[String]) -> (PhenoTable, Vec<String>) {
    let traits = ["planted", "trait_b", "trait_c"];
    let names: Vec<String> = traits
        .iter()
        .flat_map(|t| (1..=PHENO_PER_FACTOR).map(move |j| format!("{t}_{j}")))
        .collect();
    let planted = names[..PHENO_PER_FACTOR].to_vec();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let centre = (cfg.n_groups as f64 - 1.0) / 2.0;
    let rows = labels
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let mut rng = seed::stream(cfg.seed, "synth-pheno", i as u64);
            let latent = [
                1.5 * (g as f64 - centre) + 0.5 * noise.sample(&mut rng),
                noise.sample(&mut rng),
                noise.sample(&mut rng),
            ];
            (0..names.len())
                .map(|j| {
                    let f = latent[j / PHENO_PER_FACTOR];
                    let x = 0.8 * f + 0.45 * noise.sample(&mut rng);
                    // arbitrary per-variable units
                    Some(x * (2.0 + j as f64) + 10.0 * j as f64)
                })
                .collect()
        })
        .collect();
    let table = PhenoTable::from_rows(ids.to_vec(), names, rows).expect("consistent rows");
    (table, planted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_volume_roundtrip() {
        let v = Volume::zeros([2, 2, 2], "m1");
        let back = decode_volume(&encode_volume(&v), "m1").unwrap();
        assert_eq!(back, v);
        assert_eq!(back.dims, [2, 2, 2]);
    }

    #[test]
    fn payload_mismatch_detected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MMFV");
        for w in [1u32, 4, 4, 3] {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        for _ in 0..47 {
            bytes.extend_from_slice(&0f32.to_le_bytes());
        }
        let err = decode_volume(&bytes, "x").unwrap_err();
        assert!(matches!(err, VolioError::PayloadMismatch { expected: 48, .. }));
        assert!(err.to_string().contains("payload mismatch"));
    }

    #[test]
    fn bad_magic_and_non_finite() {
        let mut bytes = encode_volume(&Volume::zeros([1, 1, 2], "m"));
        bytes[0] = b'X';
        assert!(matches!(decode_volume(&bytes, "m"), Err(VolioError::BadMagic { .. })));
        let mut bytes = encode_volume(&Volume::zeros([1, 1, 2], "m"));
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_volume(&bytes, "m"), Err(VolioError::NonFinite(1))));
    }

    #[test]
    fn normalize_endpoints_and_clamp() {
        let vals: Vec<f32> = (0..=1000).map(|i| i as f32).collect();
        let range = IntensityRange::from_values(&vals, 0.1, 99.9).unwrap();
        assert_eq!(range.apply(range.q_lo as f32), 0.0);
        assert_eq!(range.apply(range.q_hi as f32), 1.0);
        assert_eq!(range.apply(-5.0), 0.0);
        assert_eq!(range.apply(5000.0), 1.0);
    }

    #[test]
    fn normalize_hand_percentiles() {
        // 101 points: q_lo = 0.1, q_hi = 99.9 under linear interpolation
        let vals: Vec<f32> = (0..=100).map(|i| i as f32).collect();
        let out = minmax_normalize(&vals, 0.1, 99.9).unwrap();
        // (50 − 0.1) / 99.8 = 49.9 / 99.8, exactly one half
        let expected = (50.0 - 0.1) / 99.8;
        assert!((f64::from(out[50]) - expected).abs() < 1e-6);
        assert!((expected - 0.5_f64).abs() < 1e-12);
    }

    #[test]
    fn degenerate_range() {
        let err = minmax_normalize(&[3.0; 10], 0.1, 99.9).unwrap_err();
        assert!(err.to_string().contains("degenerate intensity range"));
    }

    #[test]
    fn phenotypes_parse_and_drop() {
        let text = "subject_id,a,b,c\ns1,1,5,2\ns2,2,5,\ns3,3,5,4\n";
        let t = parse_phenotypes(text.as_bytes()).unwrap();
        assert_eq!(t.variable_names, vec!["a", "c"]);
        assert_eq!(t.dropped, vec!["b"]);
        assert_eq!(t.get(1, 1), None);
        assert_eq!(t.get(2, 1), Some(4.0));
        assert_eq!(t.missing_count(), 1);

        let plain = parse_phenotypes("subject_id,x,y\na,1,2\nb,3,4\nc,5,7\n".as_bytes()).unwrap();
        assert_eq!((plain.n_subjects(), plain.n_variables()), (3, 2));
        assert_eq!(plain.missing_count(), 0);
    }

    #[test]
    fn phenotype_errors() {
        let dup = parse_phenotypes("subject_id,a\ns1,1\ns1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(dup, VolioError::DuplicateSubject(ref s) if s == "s1"));
        let bad = parse_phenotypes("subject_id,a,b\ns1,1,2\ns2,x,3\n".as_bytes()).unwrap_err();
        assert!(matches!(bad, VolioError::Csv { row: 3, column: 2, .. }), "{bad}");
    }

    #[test]
    fn synth_rejects_bad_configs() {
        let cfg = SynthConfig {
            n_subjects: 2,
            n_groups: 3,
            ..SynthConfig::default()
        };
        assert!(synth_dataset(&cfg).is_err());
        let cfg = SynthConfig {
            dims: [30, 32, 24],
            ..SynthConfig::default()
        };
        assert!(synth_dataset(&cfg).is_err());
    }
}
