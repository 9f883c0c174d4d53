//! Concept activations: the entailment margin-of-inclusion kernel, the cosine
//! baseline, the compressed-row activation matrix and sparsity-matched
//! binarization.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{points_from_container, ConceptBank};
use crate::error::{Error, Result};
use crate::geometry::{self, lift, Curvature, HyperbolicPoint};
use crate::io::{self, DType, EmbeddingContainer, InputSpace, Manifest};
use crate::registry::Registry;

pub const DEFAULT_BATCH: usize = 512;
/// Largest dense matrix (in elements) built without an explicit override.
pub const DEFAULT_DENSE_BUDGET: usize = 1 << 28;

/// Image embeddings with optional class labels.
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub points: Vec<HyperbolicPoint>,
    pub sample_ids: Vec<String>,
    pub labels: Option<Vec<usize>>,
    pub class_names: Option<Vec<String>>,
    pub curvature: Curvature,
}

impl ImageSet {
    pub fn new(
        points: Vec<HyperbolicPoint>,
        sample_ids: Vec<String>,
        labels: Option<Vec<usize>>,
        class_names: Option<Vec<String>>,
        curvature: Curvature,
    ) -> Result<Self> {
        if sample_ids.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: sample_ids.len(),
            });
        }
        crate::bank::unique_names(&sample_ids)?;
        if let Some(labels) = &labels {
            if labels.len() != points.len() {
                return Err(Error::DimensionMismatch {
                    expected: points.len(),
                    got: labels.len(),
                });
            }
            if let Some(names) = &class_names {
                if let Some(bad) = labels.iter().find(|&&l| l >= names.len()) {
                    return Err(Error::param(
                        "labels",
                        format!("label {bad} out of range for {} classes", names.len()),
                    ));
                }
            }
        }
        Ok(ImageSet {
            points,
            sample_ids,
            labels,
            class_names,
            curvature,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        match (&self.class_names, &self.labels) {
            (Some(n), _) => n.len(),
            (None, Some(l)) => l.iter().max().map_or(0, |m| m + 1),
            _ => 0,
        }
    }

    pub fn index_of(&self, sample_id: &str) -> Option<usize> {
        self.sample_ids.iter().position(|s| s == sample_id)
    }

    pub fn load(embedding_file: &Path, manifest_file: &Path, space: Option<InputSpace>) -> Result<Self> {
        let container = EmbeddingContainer::read(embedding_file)?;
        let manifest = Manifest::read(manifest_file)?;
        if manifest.names.len() != container.count() {
            return Err(Error::Corrupt {
                path: manifest_file.to_path_buf(),
                reason: format!(
                    "manifest lists {} sample ids but the container holds {} rows",
                    manifest.names.len(),
                    container.count()
                ),
            });
        }
        let (points, c) =
            points_from_container(&container, space.unwrap_or(container.space), embedding_file)?;
        ImageSet::new(points, manifest.names, manifest.labels, manifest.class_names, c)
    }

    pub fn save(&self, embedding_file: &Path, manifest_file: &Path) -> Result<()> {
        let dim = self.points.first().map_or(0, |p| p.dim());
        EmbeddingContainer {
            dtype: DType::F64,
            space: InputSpace::ManifoldSpatial,
            curvature: self.curvature.get(),
            dim,
            values: self.points.iter().flat_map(|p| p.spatial().iter().copied()).collect(),
        }
        .write(embedding_file)?;
        Manifest {
            names: self.sample_ids.clone(),
            source: String::new(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            ..Default::default()
        }
        .write(manifest_file)
    }

    /// Copy with isotropic Gaussian noise added to every spatial component.
    pub fn perturbed(&self, sigma: f64, seed: u64) -> Result<ImageSet> {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::param("sigma", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = self
            .points
            .iter()
            .map(|p| {
                let noisy = p.spatial().iter().map(|x| x + normal.sample(&mut rng)).collect();
                lift(noisy, self.curvature)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageSet {
            points,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationMode {
    Entailment,
    Cosine,
}

/// Sorted concept ids considered active for one sample.
pub type ActiveSet = Vec<usize>;

/// Activations in compressed-row layout. Entailment matrices store only
/// strictly positive entries; cosine matrices store every entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    pub eta_img: f64,
    pub mode: ActivationMode,
    pub bank_hash: String,
}

impl ActivationMatrix {
    pub fn from_rows(
        cols: usize,
        rows: Vec<Vec<(usize, f64)>>,
        eta_img: f64,
        mode: ActivationMode,
        bank_hash: String,
    ) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for row in &rows {
            let mut prev: Option<usize> = None;
            for &(j, v) in row {
                if j >= cols || prev.is_some_and(|p| p >= j) {
                    return Err(Error::param("row", "column indices must be sorted and in range"));
                }
                prev = Some(j);
                col_idx.push(j as u32);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(ActivationMatrix {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            values,
            eta_img,
            mode,
            bank_hash,
        })
    }

    /// Dense input, dropping exact zeros when `mode` is entailment.
    pub fn from_dense(
        dense: &[Vec<f64>],
        cols: usize,
        eta_img: f64,
        mode: ActivationMode,
    ) -> Result<Self> {
        let rows = dense
            .iter()
            .map(|r| {
                r.iter()
                    .copied()
                    .enumerate()
                    .filter(|&(_, v)| mode == ActivationMode::Cosine || v != 0.0)
                    .collect()
            })
            .collect();
        Self::from_rows(cols, rows, eta_img, mode, String::new())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (idx, vals) = self.row(i);
        idx.iter().zip(vals).map(|(&j, &v)| (j as usize, v))
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (j, v) in self.row_entries(i) {
            out[j] = v;
        }
        out
    }

    pub fn to_dense(&self, budget: usize) -> Result<Vec<Vec<f64>>> {
        let requested = self.rows.saturating_mul(self.cols);
        if requested > budget {
            return Err(Error::MemoryBudget { requested, budget });
        }
        Ok((0..self.rows).map(|i| self.dense_row(i)).collect())
    }

    /// Row subset in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> ActivationMatrix {
        let rows = idx.iter().map(|&i| self.row_entries(i).collect()).collect();
        ActivationMatrix::from_rows(self.cols, rows, self.eta_img, self.mode, self.bank_hash.clone())
            .expect("rows come from a valid matrix")
    }

    /// Support of each row (entries that are nonzero).
    pub fn active_sets(&self) -> Vec<ActiveSet> {
        (0..self.rows)
            .map(|i| self.row_entries(i).filter(|&(_, v)| v != 0.0).map(|(j, _)| j).collect())
            .collect()
    }

    pub fn active_counts(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| self.row(i).1.iter().filter(|&&v| v != 0.0).count())
            .collect()
    }

    pub fn stats(&self) -> SparsityStats {
        let counts = self.active_counts();
        let total = (self.rows * self.cols).max(1) as f64;
        let active: usize = counts.iter().sum();
        SparsityStats {
            rows: self.rows,
            cols: self.cols,
            mean_active: if self.rows == 0 { 0.0 } else { active as f64 / self.rows as f64 },
            max_active: counts.iter().copied().max().unwrap_or(0),
            zero_fraction: 1.0 - active as f64 / total,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&HcamHeader {
            eta_img: self.eta_img,
            mode: self.mode,
            bank_hash: self.bank_hash.clone(),
            rows: self.rows,
            cols: self.cols,
            nnz: self.nnz(),
        })?;
        let mut out = Vec::with_capacity(12 + header.len() + 24 + self.nnz() * 12 + self.rows * 8);
        out.extend_from_slice(HCAM_MAGIC);
        out.extend_from_slice(&HCAM_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        out.extend_from_slice(&(self.nnz() as u64).to_le_bytes());
        for &p in &self.row_ptr {
            out.extend_from_slice(&(p as u64).to_le_bytes());
        }
        for &j in &self.col_idx {
            out.extend_from_slice(&j.to_le_bytes());
        }
        for &v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut cur = io::Cursor::new(bytes);
        let magic = cur.take(4).ok_or_else(|| corrupt("truncated magic"))?;
        if magic != HCAM_MAGIC {
            return Err(corrupt("bad magic, expected HCAM"));
        }
        let version = cur.u32().ok_or_else(|| corrupt("truncated version"))?;
        if version != HCAM_VERSION {
            return Err(corrupt("unsupported version"));
        }
        let hlen = cur.u32().ok_or_else(|| corrupt("truncated header length"))? as usize;
        let header: HcamHeader = serde_json::from_slice(
            cur.take(hlen).ok_or_else(|| corrupt("truncated header"))?,
        )
        .map_err(|e| corrupt(&e.to_string()))?;
        let rows = cur.u64().ok_or_else(|| corrupt("truncated shape"))? as usize;
        let cols = cur.u64().ok_or_else(|| corrupt("truncated shape"))? as usize;
        let nnz = cur.u64().ok_or_else(|| corrupt("truncated shape"))? as usize;
        if rows != header.rows || cols != header.cols || nnz != header.nnz {
            return Err(corrupt("binary shape disagrees with JSON header"));
        }
        let expected = (rows + 1) * 8 + nnz * 12;
        if cur.remaining() != expected {
            return Err(corrupt("payload length disagrees with shape"));
        }
        let row_ptr: Vec<usize> = (0..=rows).map(|_| cur.u64().unwrap() as usize).collect();
        let col_idx: Vec<u32> = (0..nnz).map(|_| cur.u32().unwrap()).collect();
        let values: Vec<f64> = (0..nnz)
            .map(|_| cur.f64().unwrap())
            .collect();
        if row_ptr[0] != 0
            || row_ptr[rows] != nnz
            || row_ptr.windows(2).any(|w| w[0] > w[1])
            || col_idx.iter().any(|&j| j as usize >= cols)
        {
            return Err(corrupt("inconsistent row pointers or column indices"));
        }
        Ok(ActivationMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
            eta_img: header.eta_img,
            mode: header.mode,
            bank_hash: header.bank_hash,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

const HCAM_MAGIC: &[u8; 4] = b"HCAM";
const HCAM_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct HcamHeader {
    eta_img: f64,
    mode: ActivationMode,
    bank_hash: String,
    rows: usize,
    cols: usize,
    nnz: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityStats {
    pub rows: usize,
    pub cols: usize,
    pub mean_active: f64,
    pub max_active: usize,
    pub zero_fraction: f64,
}

/// Produces one row of activations for an image against a bank.
pub trait ActivationKernel: Send + Sync {
    fn name(&self) -> &'static str;
    fn mode(&self) -> ActivationMode;
    /// Strictness recorded in the matrix header (0 for kernels without one).
    fn eta_img(&self) -> f64 {
        0.0
    }
    /// Stored entries of the row, sorted by concept id.
    fn row(&self, z: &HyperbolicPoint, bank: &ConceptBank) -> Vec<(usize, f64)>;
    /// Whether building a full matrix materializes every entry.
    fn dense(&self) -> bool {
        false
    }
}

/// Margin of inclusion `max(0, eta_img - phi / omega)`.
#[derive(Debug, Clone, Copy)]
pub struct EntailmentKernel {
    pub eta_img: f64,
}

impl ActivationKernel for EntailmentKernel {
    fn name(&self) -> &'static str {
        "entailment"
    }
    fn mode(&self) -> ActivationMode {
        ActivationMode::Entailment
    }
    fn eta_img(&self) -> f64 {
        self.eta_img
    }
    fn row(&self, z: &HyperbolicPoint, bank: &ConceptBank) -> Vec<(usize, f64)> {
        activate(z, bank, self.eta_img)
    }
}

/// Cosine of spatial components, the Euclidean baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct CosineKernel;

impl ActivationKernel for CosineKernel {
    fn name(&self) -> &'static str {
        "cosine"
    }
    fn mode(&self) -> ActivationMode {
        ActivationMode::Cosine
    }
    fn row(&self, z: &HyperbolicPoint, bank: &ConceptBank) -> Vec<(usize, f64)> {
        cosine_row(z, bank)
    }
    fn dense(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KernelParams {
    pub eta_img: f64,
}

pub type KernelRegistry = Registry<dyn ActivationKernel, KernelParams>;

/// Registry holding `entailment` and `cosine`.
pub fn kernel_registry() -> KernelRegistry {
    let mut reg = KernelRegistry::new("activation kernel");
    reg.register("entailment", |p: &KernelParams| {
        if !(p.eta_img > 0.0) {
            return Err(Error::param("eta_img", format!("must be > 0, got {}", p.eta_img)));
        }
        Ok(Box::new(EntailmentKernel { eta_img: p.eta_img }) as Box<dyn ActivationKernel>)
    });
    reg.register("cosine", |_: &KernelParams| {
        Ok(Box::new(CosineKernel) as Box<dyn ActivationKernel>)
    });
    reg
}

/// Entailment ratio `phi(z, c) / omega(c)` for one concept.
#[inline]
pub fn entailment_ratio(z: &HyperbolicPoint, bank: &ConceptBank, id: usize) -> Result<f64> {
    let omega = bank.aperture(id)?;
    Ok(bank.exterior_angle(z, id)? / omega)
}

/// Activation row for one image; only strictly positive entries are returned.
/// Concepts at the origin have no cone and never activate.
pub fn activate(z: &HyperbolicPoint, bank: &ConceptBank, eta_img: f64) -> Vec<(usize, f64)> {
    (0..bank.len())
        .filter_map(|id| {
            let ratio = entailment_ratio(z, bank, id).ok()?;
            let a = (eta_img - ratio).max(0.0);
            (a > 0.0).then_some((id, a))
        })
        .collect()
}

fn cosine_row(z: &HyperbolicPoint, bank: &ConceptBank) -> Vec<(usize, f64)> {
    let zn = z.norm();
    bank.concepts()
        .iter()
        .map(|c| {
            let den = zn * c.norm();
            let v = if den == 0.0 {
                log::warn!("zero-norm vector in cosine activation (concept {})", c.id);
                0.0
            } else {
                geometry::dot(z.spatial(), c.point.spatial()) / den
            };
            (c.id, v)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub batch: usize,
    pub dense_budget: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            batch: DEFAULT_BATCH,
            dense_budget: DEFAULT_DENSE_BUDGET,
        }
    }
}

/// Build the full activation matrix with any kernel. Rows are computed in
/// batches of `opts.batch`, possibly in parallel; output does not depend on
/// the batch size.
pub fn build_matrix(
    images: &ImageSet,
    bank: &ConceptBank,
    kernel: &dyn ActivationKernel,
    opts: BuildOptions,
) -> Result<ActivationMatrix> {
    if opts.batch == 0 {
        return Err(Error::param("batch", "must be >= 1"));
    }
    if !images.is_empty() && !bank.is_empty() && images.points[0].dim() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            got: images.points[0].dim(),
        });
    }
    if kernel.dense() {
        let requested = images.len().saturating_mul(bank.len());
        if requested > opts.dense_budget {
            return Err(Error::MemoryBudget {
                requested,
                budget: opts.dense_budget,
            });
        }
    }
    let rows: Vec<Vec<(usize, f64)>> = images
        .points
        .par_chunks(opts.batch)
        .flat_map_iter(|chunk| chunk.iter().map(|z| kernel.row(z, bank)).collect::<Vec<_>>())
        .collect();
    ActivationMatrix::from_rows(bank.len(), rows, kernel.eta_img(), kernel.mode(), bank.content_hash())
}

pub fn activation_matrix(
    images: &ImageSet,
    bank: &ConceptBank,
    eta_img: f64,
    batch: usize,
) -> Result<ActivationMatrix> {
    if !(eta_img > 0.0) {
        return Err(Error::param("eta_img", format!("must be > 0, got {eta_img}")));
    }
    build_matrix(
        images,
        bank,
        &EntailmentKernel { eta_img },
        BuildOptions {
            batch,
            ..BuildOptions::default()
        },
    )
}

pub fn cosine_activation_matrix(images: &ImageSet, bank: &ConceptBank) -> Result<ActivationMatrix> {
    build_matrix(images, bank, &CosineKernel, BuildOptions::default())
}

/// Per row, keep the top-K baseline entries where K is the number of active
/// concepts in the same row of `reference`. Ties at the cut go to the lower
/// concept id. Only nonzero baseline entries are eligible.
pub fn binarize_sparsity_matched(
    baseline: &ActivationMatrix,
    reference: &ActivationMatrix,
) -> Result<Vec<ActiveSet>> {
    if baseline.rows != reference.rows || baseline.cols != reference.cols {
        return Err(Error::DimensionMismatch {
            expected: reference.rows * reference.cols,
            got: baseline.rows * baseline.cols,
        });
    }
    let counts = reference.active_counts();
    Ok((0..baseline.rows)
        .map(|i| {
            let mut entries: Vec<(usize, f64)> =
                baseline.row_entries(i).filter(|&(_, v)| v != 0.0).collect();
            entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut set: ActiveSet = entries.into_iter().take(counts[i]).map(|(j, _)| j).collect();
            set.sort_unstable();
            set
        })
        .collect())
}
