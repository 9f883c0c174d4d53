//! Synthetic concept trees with images placed inside leaf cones.
//!
//! Every child concept is placed at an exterior angle below `0.8 * omega` of
//! its parent and every image below `0.8 * omega` of its leaf. Containment is
//! re-checked with the geometry kernels before anything is returned.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::ImageSet;
use crate::bank::{ConceptBank, HierarchyPairs};
use crate::error::{Error, Result};
use crate::geometry::{self, exterior_angle, lift, Curvature, HyperbolicPoint, NumericPolicy};
use crate::io;

/// Fraction of the parent aperture that placements must stay below.
pub const INTERIOR_MARGIN: f64 = 0.8;
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Number of concept levels; level 1 is a single root.
    pub depth: usize,
    pub branching: usize,
    pub dim: usize,
    pub curvature: f64,
    #[serde(rename = "K")]
    pub cone_k: f64,
    /// Spatial norm of the concepts on each level, root first.
    pub norms: Vec<f64>,
    /// Spatial norm of image embeddings.
    pub image_norm: f64,
    pub images_per_leaf: usize,
    pub test_images_per_leaf: usize,
    /// Relative radial jitter of image norms (standard deviation).
    pub noise_scale: f64,
    /// Children are placed at `phi / omega(parent)` drawn from this range.
    pub child_ratio: (f64, f64),
    /// Images are placed at `phi / omega(leaf)` drawn from this range.
    pub image_ratio: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            depth: 3,
            branching: 3,
            dim: 16,
            curvature: Curvature::DEFAULT,
            cone_k: crate::bank::DEFAULT_CONE_K,
            norms: vec![0.3, 0.6, 1.2],
            image_norm: 2.5,
            images_per_leaf: 50,
            test_images_per_leaf: 20,
            noise_scale: 0.0,
            child_ratio: (0.4, 0.8),
            image_ratio: (0.0, 0.8),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::param("depth", "must be >= 1"));
        }
        if self.branching < 1 {
            return Err(Error::param("branching", "must be >= 1"));
        }
        if self.dim < 2 {
            return Err(Error::param("dim", "must be >= 2"));
        }
        if self.norms.len() != self.depth {
            return Err(Error::param(
                "norms",
                format!("need one norm per level ({}), got {}", self.depth, self.norms.len()),
            ));
        }
        if self.norms[0] <= 0.0 || self.norms.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("norms", "must be positive and strictly increasing with depth"));
        }
        if self.image_norm <= *self.norms.last().unwrap() {
            return Err(Error::param("image_norm", "must exceed the deepest concept norm"));
        }
        for (name, (lo, hi)) in [("child_ratio", self.child_ratio), ("image_ratio", self.image_ratio)] {
            if !(0.0 <= lo && lo <= hi && hi <= INTERIOR_MARGIN) {
                return Err(Error::param(name, format!("need 0 <= lo <= hi <= {INTERIOR_MARGIN}")));
            }
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::param("noise_scale", "must be >= 0"));
        }
        Curvature::new(self.curvature)?;
        Ok(())
    }
}

/// Generated tree, images and ground truth.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub bank: ConceptBank,
    /// Direct parent-child edges.
    pub pairs: HierarchyPairs,
    pub parent: Vec<Option<usize>>,
    pub level: Vec<usize>,
    pub leaves: Vec<usize>,
    pub train: ImageSet,
    pub test: ImageSet,
    /// Ancestor chain (root first, leaf last) of each training image.
    pub truth_train: Vec<Vec<usize>>,
    pub truth_test: Vec<Vec<usize>>,
    /// Images that had to be redrawn because a check failed.
    pub rejected_images: usize,
}

impl SynthData {
    /// All strict descendants of a concept, sorted.
    pub fn descendants(&self, id: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.parent.len())
            .filter(|&c| {
                let mut cur = self.parent[c];
                while let Some(p) = cur {
                    if p == id {
                        return true;
                    }
                    cur = self.parent[p];
                }
                false
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Every (ancestor, descendant) pair, not only direct edges.
    pub fn transitive_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.parent.len())
            .flat_map(|a| self.descendants(a).into_iter().map(move |d| (a, d)))
            .collect()
    }

    pub fn root(&self) -> usize {
        0
    }

    /// Ground-truth-absent concepts for an image: everything off its chain.
    pub fn absent(&self, chain: &[usize]) -> Vec<usize> {
        (0..self.bank.len()).filter(|c| !chain.contains(c)).collect()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let names = self.bank.names();
        let chains = |set: &ImageSet, truth: &[Vec<usize>]| {
            set.sample_ids
                .iter()
                .zip(truth)
                .map(|(s, ch)| (s.clone(), ch.iter().map(|&c| names[c].clone()).collect()))
                .collect()
        };
        GroundTruth {
            train: chains(&self.train, &self.truth_train),
            test: chains(&self.test, &self.truth_test),
            descendants: (0..self.bank.len())
                .map(|c| {
                    (
                        names[c].clone(),
                        self.descendants(c).into_iter().map(|d| names[d].clone()).collect(),
                    )
                })
                .collect(),
        }
    }

    /// Write every standard file into `dir` and return the paths.
    pub fn write_all(&self, dir: &Path) -> Result<SynthFiles> {
        let files = SynthFiles::in_dir(dir);
        self.bank.save(&files.bank, &files.bank_manifest)?;
        io::write_hierarchy_tsv(&files.hierarchy, &self.pairs.to_names(&self.bank))?;
        self.train.save(&files.train, &files.train_manifest)?;
        self.test.save(&files.test, &files.test_manifest)?;
        io::write_json(&files.ground_truth, &self.ground_truth())?;
        io::write_json(&files.spec, &self.spec)?;
        Ok(files)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub train: BTreeMap<String, Vec<String>>,
    pub test: BTreeMap<String, Vec<String>>,
    pub descendants: BTreeMap<String, Vec<String>>,
}

/// Fixed file names used by the generator.
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub bank: PathBuf,
    pub bank_manifest: PathBuf,
    pub hierarchy: PathBuf,
    pub train: PathBuf,
    pub train_manifest: PathBuf,
    pub test: PathBuf,
    pub test_manifest: PathBuf,
    pub ground_truth: PathBuf,
    pub spec: PathBuf,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path) -> Self {
        SynthFiles {
            bank: dir.join("bank.hcbe"),
            bank_manifest: dir.join("bank.json"),
            hierarchy: dir.join("hierarchy.tsv"),
            train: dir.join("train.hcbe"),
            train_manifest: dir.join("train.json"),
            test: dir.join("test.hcbe"),
            test_manifest: dir.join("test.json"),
            ground_truth: dir.join("ground_truth.json"),
            spec: dir.join("synth_spec.json"),
        }
    }
}

/// Point at spatial norm `norm` whose exterior angle to `anchor` equals
/// `target_phi`, in the plane spanned by the anchor direction and `toward`.
///
/// Solved by bisection on the angle between the point's direction and the
/// anchor axis; `norm` must exceed the anchor's norm.
pub fn place_at_exterior_angle(
    anchor: &HyperbolicPoint,
    toward: &[f64],
    target_phi: f64,
    norm: f64,
    c: Curvature,
    policy: &NumericPolicy,
) -> Result<HyperbolicPoint> {
    if norm <= anchor.norm() {
        return Err(Error::param("norm", "placement must be deeper than the anchor"));
    }
    if !(0.0..=std::f64::consts::PI).contains(&target_phi) {
        return Err(Error::param("target_phi", "must lie in [0, pi]"));
    }
    let axis: Vec<f64> = anchor.spatial().iter().map(|x| x / anchor.norm()).collect();
    let proj = geometry::dot(toward, &axis);
    let mut ortho: Vec<f64> = toward.iter().zip(&axis).map(|(t, a)| t - proj * a).collect();
    let on = geometry::l2_norm(&ortho);
    if on < 1e-12 {
        return Err(Error::param("toward", "must not be parallel to the anchor axis"));
    }
    ortho.iter_mut().for_each(|x| *x /= on);

    let at = |theta: f64| -> Result<HyperbolicPoint> {
        let (s, co) = theta.sin_cos();
        lift(
            axis.iter().zip(&ortho).map(|(a, o)| norm * (co * a + s * o)).collect(),
            c,
        )
    };
    let phi_at = |theta: f64| -> Result<f64> { exterior_angle(&at(theta)?, anchor, c, policy) };

    if target_phi == 0.0 {
        return at(0.0);
    }
    let (mut lo, mut hi) = (0.0f64, std::f64::consts::PI);
    if phi_at(hi)? < target_phi {
        return Err(Error::Infeasible(format!(
            "exterior angle {target_phi} unreachable at norm {norm}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi_at(mid)? < target_phi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Pick whichever bracket end lands closer to the target.
    let (pl, ph) = (phi_at(lo)?, phi_at(hi)?);
    at(if (pl - target_phi).abs() <= (ph - target_phi).abs() { lo } else { hi })
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = geometry::l2_norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Generate a tree, its images and ground truth from a spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let c = Curvature::new(spec.curvature)?;
    let policy = NumericPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let omega = |norm: f64| geometry::half_aperture_from_norm(norm, spec.cone_k, c, &policy);

    let mut names = vec!["r".to_string()];
    let mut points = vec![lift(
        random_direction(&mut rng, spec.dim).into_iter().map(|x| x * spec.norms[0]).collect(),
        c,
    )?];
    let mut parent = vec![None];
    let mut level = vec![0usize];
    let mut frontier = vec![0usize];
    for lvl in 1..spec.depth {
        let mut next = Vec::new();
        for &p in &frontier {
            let limit = INTERIOR_MARGIN * omega(points[p].norm())?;
            for b in 0..spec.branching {
                let child = place_child(&mut rng, &points[p], spec, spec.norms[lvl], limit, spec.child_ratio, c, &policy)?;
                let id = points.len();
                names.push(format!("{}.{b}", names[p]));
                points.push(child);
                parent.push(Some(p));
                level.push(lvl);
                next.push(id);
            }
        }
        frontier = next;
    }
    let leaves = frontier;

    // Self-check every edge before building anything on top of it.
    for (id, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            let phi = exterior_angle(&points[id], &points[p], c, &policy)?;
            if phi >= INTERIOR_MARGIN * omega(points[p].norm())? {
                return Err(Error::Infeasible(format!("concept {} escaped its parent's cone", names[id])));
            }
        }
    }

    let bank = ConceptBank::new(
        names.iter().cloned().zip(points.iter().cloned()).collect(),
        spec.norms[0].min(crate::bank::DEFAULT_TAU),
        spec.cone_k,
        c,
        "synth",
    )?;
    let edges: Vec<(usize, usize)> = parent
        .iter()
        .enumerate()
        .filter_map(|(id, p)| p.map(|p| (p, id)))
        .collect();
    let pairs = HierarchyPairs::new(edges, "synth", &bank)?;
    let chain_of = |leaf: usize| {
        let mut chain = vec![leaf];
        let mut cur = parent[leaf];
        while let Some(p) = cur {
            chain.push(p);
            cur = parent[p];
        }
        chain.reverse();
        chain
    };
    let class_names: Vec<String> = leaves.iter().map(|&l| names[l].clone()).collect();

    let mut rejected = 0usize;
    let mut make_split = |prefix: &str, per_leaf: usize, rng: &mut ChaCha8Rng| -> Result<(ImageSet, Vec<Vec<usize>>)> {
        let mut pts = Vec::new();
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut truth = Vec::new();
        for (class, &leaf) in leaves.iter().enumerate() {
            let chain = chain_of(leaf);
            let limit = INTERIOR_MARGIN * omega(points[leaf].norm())?;
            for k in 0..per_leaf {
                let mut attempts = 0;
                let z = loop {
                    attempts += 1;
                    if attempts > MAX_ATTEMPTS {
                        return Err(Error::Infeasible(format!(
                            "could not place an image inside leaf {} after {MAX_ATTEMPTS} attempts",
                            names[leaf]
                        )));
                    }
                    let jitter: f64 = rng.sample(StandardNormal);
                    let norm = spec.image_norm * (1.0 + spec.noise_scale * jitter);
                    if norm <= points[leaf].norm() {
                        rejected += 1;
                        continue;
                    }
                    let z = place_child(rng, &points[leaf], spec, norm, limit, spec.image_ratio, c, &policy)?;
                    if contained(&z, &chain, &bank)? {
                        break z;
                    }
                    rejected += 1;
                };
                pts.push(z);
                ids.push(format!("{prefix}{}_{k}", names[leaf]));
                labels.push(class);
                truth.push(chain.clone());
            }
        }
        Ok((ImageSet::new(pts, ids, Some(labels), Some(class_names.clone()), c)?, truth))
    };
    let (train, truth_train) = make_split("train_", spec.images_per_leaf, &mut rng)?;
    let (test, truth_test) = make_split("test_", spec.test_images_per_leaf, &mut rng)?;

    Ok(SynthData {
        spec: spec.clone(),
        bank,
        pairs,
        parent,
        level,
        leaves,
        train,
        test,
        truth_train,
        truth_test,
        rejected_images: rejected,
    })
}

#[allow(clippy::too_many_arguments)]
fn place_child(
    rng: &mut ChaCha8Rng,
    anchor: &HyperbolicPoint,
    spec: &SynthSpec,
    norm: f64,
    limit: f64,
    ratio: (f64, f64),
    c: Curvature,
    policy: &NumericPolicy,
) -> Result<HyperbolicPoint> {
    let fraction = uniform_in(rng, ratio) / INTERIOR_MARGIN;
    let toward = loop {
        let d = random_direction(rng, spec.dim);
        let axis_cos = geometry::dot(&d, anchor.spatial()) / anchor.norm();
        if axis_cos.abs() < 0.999 {
            break d;
        }
    };
    place_at_exterior_angle(anchor, &toward, fraction * limit, norm, c, policy)
}

/// Image lies strictly inside every cone on its ancestor chain.
fn contained(z: &HyperbolicPoint, chain: &[usize], bank: &ConceptBank) -> Result<bool> {
    for &id in chain {
        let ratio = bank.exterior_angle(z, id)? / bank.aperture(id)?;
        if ratio >= 1.0 {
            return Ok(false);
        }
    }
    Ok(true)
}
