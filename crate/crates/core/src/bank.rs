//! Concept bank: loading, norm filtering, deduplication and hierarchy lookup.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::calibration::ScalingLaw;
use crate::error::{Error, Result};
use crate::geometry::{
    self, exp_map, exterior_angle, half_aperture_from_norm, lift, Curvature, HyperbolicPoint,
    NumericPolicy, TangentVector,
};
use crate::io::{self, DType, EmbeddingContainer, InputSpace, Manifest};

pub const DEFAULT_TAU: f64 = 0.27;
pub const DEFAULT_CONE_K: f64 = 0.04;
pub const DEFAULT_CLASS_SIM: f64 = 0.85;
pub const DEFAULT_CONCEPT_SIM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub id: usize,
    pub name: String,
    pub point: HyperbolicPoint,
}

impl Concept {
    #[inline]
    pub fn norm(&self) -> f64 {
        self.point.norm()
    }
}

/// An immutable, densely indexed set of concept embeddings.
#[derive(Debug, Clone)]
pub struct ConceptBank {
    concepts: Vec<Concept>,
    apertures: Vec<Option<f64>>,
    by_name: HashMap<String, usize>,
    tau: f64,
    cone_k: f64,
    curvature: Curvature,
    policy: NumericPolicy,
    source: String,
}

impl ConceptBank {
    pub fn new(
        entries: Vec<(String, HyperbolicPoint)>,
        tau: f64,
        cone_k: f64,
        curvature: Curvature,
        source: impl Into<String>,
    ) -> Result<Self> {
        Self::with_policy(entries, tau, cone_k, curvature, NumericPolicy::default(), source)
    }

    pub fn with_policy(
        entries: Vec<(String, HyperbolicPoint)>,
        tau: f64,
        cone_k: f64,
        curvature: Curvature,
        policy: NumericPolicy,
        source: impl Into<String>,
    ) -> Result<Self> {
        policy.validate()?;
        if !(tau >= 0.0) {
            return Err(Error::param("tau", format!("must be >= 0, got {tau}")));
        }
        if !(cone_k > 0.0) {
            return Err(Error::param("K", format!("must be > 0, got {cone_k}")));
        }
        let dim = entries.first().map(|(_, p)| p.dim()).unwrap_or(0);
        let mut by_name = HashMap::with_capacity(entries.len());
        let mut concepts = Vec::with_capacity(entries.len());
        for (id, (name, point)) in entries.into_iter().enumerate() {
            if name.is_empty() {
                return Err(Error::param("name", format!("concept {id} has an empty name")));
            }
            if point.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: point.dim(),
                });
            }
            if by_name.insert(name.clone(), id).is_some() {
                return Err(Error::DuplicateName(name));
            }
            concepts.push(Concept { id, name, point });
        }
        let apertures = concepts
            .iter()
            .map(|c| half_aperture_from_norm(c.norm(), cone_k, curvature, &policy).ok())
            .collect();
        Ok(ConceptBank {
            concepts,
            apertures,
            by_name,
            tau,
            cone_k,
            curvature,
            policy,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.concepts.first().map(|c| c.point.dim()).unwrap_or(0)
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn get(&self, id: usize) -> Result<&Concept> {
        self.concepts.get(id).ok_or(Error::UnknownConcept(id))
    }

    pub fn id_of(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownConceptName(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.concepts.iter().map(|c| c.name.clone()).collect()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn cone_k(&self) -> f64 {
        self.cone_k
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn policy(&self) -> &NumericPolicy {
        &self.policy
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Half-aperture of concept `id`; errors for a concept at the origin.
    pub fn aperture(&self, id: usize) -> Result<f64> {
        match self.apertures.get(id) {
            Some(Some(w)) => Ok(*w),
            Some(None) => Err(Error::ZeroNorm(id)),
            None => Err(Error::UnknownConcept(id)),
        }
    }

    /// Exterior angle of `z` with respect to concept `id`.
    pub fn exterior_angle(&self, z: &HyperbolicPoint, id: usize) -> Result<f64> {
        let concept = self.get(id)?;
        if concept.norm() <= 0.0 {
            return Err(Error::ZeroNorm(id));
        }
        exterior_angle(z, &concept.point, self.curvature, &self.policy)
    }

    /// Same bank with new cone constant / filter threshold / numeric policy.
    pub fn reparameterized(
        &self,
        tau: f64,
        cone_k: f64,
        policy: NumericPolicy,
    ) -> Result<ConceptBank> {
        Self::with_policy(self.entries(), tau, cone_k, self.curvature, policy, self.source.clone())
    }

    fn entries(&self) -> Vec<(String, HyperbolicPoint)> {
        self.concepts
            .iter()
            .map(|c| (c.name.clone(), c.point.clone()))
            .collect()
    }

    fn subset(&self, keep: &[usize]) -> Result<ConceptBank> {
        let entries = keep
            .iter()
            .map(|&i| (self.concepts[i].name.clone(), self.concepts[i].point.clone()))
            .collect();
        Self::with_policy(entries, self.tau, self.cone_k, self.curvature, self.policy, self.source.clone())
    }

    /// SHA-256 over curvature, names and spatial coordinates.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.curvature.get().to_le_bytes());
        bytes.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        for c in &self.concepts {
            bytes.extend_from_slice(&(c.name.len() as u64).to_le_bytes());
            bytes.extend_from_slice(c.name.as_bytes());
            for v in c.point.spatial() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        io::sha256_hex(&bytes)
    }

    pub fn to_container(&self) -> EmbeddingContainer {
        EmbeddingContainer {
            dtype: DType::F64,
            space: InputSpace::ManifoldSpatial,
            curvature: self.curvature.get(),
            dim: self.dim(),
            values: self
                .concepts
                .iter()
                .flat_map(|c| c.point.spatial().iter().copied())
                .collect(),
        }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            names: self.names(),
            source: self.source.clone(),
            tau: Some(self.tau),
            cone_k: Some(self.cone_k),
            ..Default::default()
        }
    }

    /// Write as an f64 manifold-spatial container plus manifest.
    pub fn save(&self, embedding_file: &Path, manifest_file: &Path) -> Result<()> {
        self.to_container().write(embedding_file)?;
        self.manifest().write(manifest_file)
    }
}

/// Turn container rows into hyperboloid points, widening to f64 and mapping
/// tangent vectors through the exponential map.
pub fn points_from_container(
    container: &EmbeddingContainer,
    space: InputSpace,
    path: &Path,
) -> Result<(Vec<HyperbolicPoint>, Curvature)> {
    let c = Curvature::new(container.curvature).map_err(|_| Error::Corrupt {
        path: path.to_path_buf(),
        reason: format!("invalid curvature {}", container.curvature),
    })?;
    if let Some((row, col)) = container.first_non_finite() {
        return Err(Error::NonFinite { row, col });
    }
    let points = container
        .rows()
        .take(container.count())
        .map(|row| match space {
            InputSpace::ManifoldSpatial => lift(row.to_vec(), c),
            InputSpace::Tangent => exp_map(&TangentVector(row.to_vec()), c),
        })
        .collect::<Result<Vec<_>>>()?;
    let expected = -1.0 / c.get();
    for p in &points {
        let inner = geometry::minkowski_inner(p, p)?;
        if ((inner - expected) / expected).abs() > 1e-9 {
            return Err(Error::OffManifold { inner, expected });
        }
    }
    Ok((points, c))
}

/// Load a bank from an `HCBE` container and JSON manifest. `input_space`
/// overrides the container's own space flag when given.
pub fn load_bank(
    embedding_file: &Path,
    manifest_file: &Path,
    input_space: Option<InputSpace>,
) -> Result<ConceptBank> {
    let container = EmbeddingContainer::read(embedding_file)?;
    let manifest = Manifest::read(manifest_file)?;
    if manifest.names.len() != container.count() {
        return Err(Error::Corrupt {
            path: manifest_file.to_path_buf(),
            reason: format!(
                "manifest lists {} names but the container holds {} rows",
                manifest.names.len(),
                container.count()
            ),
        });
    }
    let space = input_space.unwrap_or(container.space);
    let (points, c) = points_from_container(&container, space, embedding_file)?;
    ConceptBank::new(
        manifest.names.into_iter().zip(points).collect(),
        manifest.tau.unwrap_or(DEFAULT_TAU),
        manifest.cone_k.unwrap_or(DEFAULT_CONE_K),
        c,
        manifest.source,
    )
}

/// A filtered bank together with the old-to-new id mapping.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub bank: ConceptBank,
    /// `id_map[old] = Some(new)` for kept concepts.
    pub id_map: Vec<Option<usize>>,
    pub removed: Vec<Removal>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Removal {
    pub id: usize,
    pub name: String,
    pub reason: String,
}

fn outcome(bank: &ConceptBank, keep: Vec<usize>, removed: Vec<Removal>) -> Result<FilterOutcome> {
    let mut id_map = vec![None; bank.len()];
    for (new, &old) in keep.iter().enumerate() {
        id_map[old] = Some(new);
    }
    Ok(FilterOutcome {
        bank: bank.subset(&keep)?,
        id_map,
        removed,
    })
}

/// Keep exactly the concepts whose spatial norm is at least `tau`.
pub fn norm_filter(bank: &ConceptBank, tau: f64) -> Result<FilterOutcome> {
    if !(tau >= 0.0) {
        return Err(Error::param("tau", format!("must be >= 0, got {tau}")));
    }
    let (keep, drop): (Vec<usize>, Vec<usize>) =
        (0..bank.len()).partition(|&i| bank.concepts[i].norm() >= tau);
    if keep.is_empty() && !bank.is_empty() {
        warn!("norm filter with tau = {tau} removed every concept");
    }
    let removed = drop
        .into_iter()
        .map(|i| Removal {
            id: i,
            name: bank.concepts[i].name.clone(),
            reason: format!("norm {} < tau {tau}", bank.concepts[i].norm()),
        })
        .collect();
    let mut out = outcome(bank, keep, removed)?;
    out.bank.tau = tau;
    Ok(out)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = geometry::l2_norm(a);
    let nb = geometry::l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        geometry::dot(a, b) / (na * nb)
    }
}

/// Remove concepts too similar to a class embedding, then resolve concept
/// pairs above `concept_sim_threshold` by deleting the member with the lower
/// average similarity to the remaining bank. Similarity is the cosine of the
/// spatial components.
pub fn dedup(
    bank: &ConceptBank,
    class_embeddings: Option<&[HyperbolicPoint]>,
    class_sim_threshold: f64,
    concept_sim_threshold: f64,
) -> Result<FilterOutcome> {
    for (name, t) in [
        ("class_sim_threshold", class_sim_threshold),
        ("concept_sim_threshold", concept_sim_threshold),
    ] {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::param(name, format!("must lie in (0, 1], got {t}")));
        }
    }
    let mut removed = Vec::new();
    let mut alive: Vec<usize> = Vec::with_capacity(bank.len());
    for (i, c) in bank.concepts.iter().enumerate() {
        let hit = class_embeddings.and_then(|classes| {
            classes
                .iter()
                .enumerate()
                .map(|(k, cls)| (k, cosine(c.point.spatial(), cls.spatial())))
                .find(|(_, s)| *s > class_sim_threshold)
        });
        match hit {
            Some((k, s)) => removed.push(Removal {
                id: i,
                name: c.name.clone(),
                reason: format!("similarity {s:.4} to class {k} > {class_sim_threshold}"),
            }),
            None => alive.push(i),
        }
    }

    let n = alive.len();
    let mut sim = vec![0.0; n * n];
    for a in 0..n {
        for b in (a + 1)..n {
            let s = cosine(
                bank.concepts[alive[a]].point.spatial(),
                bank.concepts[alive[b]].point.spatial(),
            );
            sim[a * n + b] = s;
            sim[b * n + a] = s;
        }
    }
    let avg: Vec<f64> = (0..n)
        .map(|a| {
            if n < 2 {
                0.0
            } else {
                (0..n).filter(|&b| b != a).map(|b| sim[a * n + b]).sum::<f64>() / (n - 1) as f64
            }
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .filter(|&(a, b)| sim[a * n + b] > concept_sim_threshold)
        .collect();
    // Most similar pairs first; exact ties by index for determinism.
    pairs.sort_by(|&(a1, b1), &(a2, b2)| {
        sim[a2 * n + b2]
            .total_cmp(&sim[a1 * n + b1])
            .then((a1, b1).cmp(&(a2, b2)))
    });
    let mut dead = vec![false; n];
    for (a, b) in pairs {
        if dead[a] || dead[b] {
            continue;
        }
        // Lower average similarity loses; on a tie the later concept goes.
        let victim = if avg[a] < avg[b] { a } else { b };
        let other = if victim == a { b } else { a };
        dead[victim] = true;
        let id = alive[victim];
        removed.push(Removal {
            id,
            name: bank.concepts[id].name.clone(),
            reason: format!(
                "similarity {:.4} to `{}` > {concept_sim_threshold}",
                sim[a * n + b],
                bank.concepts[alive[other]].name
            ),
        });
    }
    let keep: Vec<usize> = alive
        .iter()
        .enumerate()
        .filter(|(k, _)| !dead[*k])
        .map(|(_, &i)| i)
        .collect();
    removed.sort_by_key(|r| r.id);
    outcome(bank, keep, removed)
}

/// Parent/child id pairs over a specific bank.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyPairs {
    pub pairs: Vec<(usize, usize)>,
    pub source: String,
}

impl HierarchyPairs {
    pub fn new(pairs: Vec<(usize, usize)>, source: impl Into<String>, bank: &ConceptBank) -> Result<Self> {
        for &(p, c) in &pairs {
            if p == c {
                return Err(Error::param("pairs", format!("concept {p} listed as its own parent")));
            }
            bank.get(p)?;
            bank.get(c)?;
        }
        Ok(HierarchyPairs {
            pairs,
            source: source.into(),
        })
    }

    pub fn from_names(named: &[(String, String)], source: impl Into<String>, bank: &ConceptBank) -> Result<Self> {
        let pairs = named
            .iter()
            .map(|(p, c)| Ok((bank.id_of(p)?, bank.id_of(c)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs, source, bank)
    }

    pub fn load(path: &Path, bank: &ConceptBank) -> Result<Self> {
        let named = io::read_hierarchy_tsv(path)?;
        let source = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_names(&named, source, bank)
    }

    pub fn to_names(&self, bank: &ConceptBank) -> Vec<(String, String)> {
        self.pairs
            .iter()
            .map(|&(p, c)| (bank.concepts[p].name.clone(), bank.concepts[c].name.clone()))
            .collect()
    }

    /// Remap through a filter's id map, dropping pairs that lost a member.
    pub fn remap(&self, id_map: &[Option<usize>]) -> HierarchyPairs {
        HierarchyPairs {
            pairs: self
                .pairs
                .iter()
                .filter_map(|&(p, c)| Some((id_map.get(p).copied()??, id_map.get(c).copied()??)))
                .collect(),
            source: self.source.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Relative tolerance under which two norms count as the same depth.
pub const NORM_TIE_RTOL: f64 = 1e-12;

/// Concepts geometrically entailed by `parent_id`: strictly deeper (larger
/// norm) and with exterior angle below `eta_text(|parent|) * omega(parent)`.
pub fn find_children(bank: &ConceptBank, parent_id: usize, law: &ScalingLaw) -> Result<Vec<usize>> {
    let eta_text = law.eta_text(bank.get(parent_id)?.norm());
    find_children_within(bank, parent_id, eta_text)
}

/// [`find_children`] with an explicit strictness multiplier.
pub fn find_children_within(bank: &ConceptBank, parent_id: usize, eta_text: f64) -> Result<Vec<usize>> {
    let parent = bank.get(parent_id)?;
    let omega = bank.aperture(parent_id)?;
    let limit = eta_text * omega;
    let depth = parent.norm() * (1.0 + NORM_TIE_RTOL);
    let mut out = Vec::new();
    for cand in &bank.concepts {
        if cand.id == parent_id || cand.norm() <= depth {
            continue;
        }
        let phi = exterior_angle(&cand.point, &parent.point, bank.curvature, &bank.policy)?;
        if phi < limit {
            out.push(cand.id);
        }
    }
    Ok(out)
}

/// How strict concept-to-concept entailment is for a given parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ChildRule {
    /// `eta_text` from the norm-dependent scaling law.
    Law(ScalingLaw),
    /// One `eta_text` for every parent.
    Constant { eta_text: f64 },
}

impl ChildRule {
    pub fn eta_text(&self, parent_norm: f64) -> f64 {
        match self {
            ChildRule::Law(law) => law.eta_text(parent_norm),
            ChildRule::Constant { eta_text } => *eta_text,
        }
    }

    pub fn children(&self, bank: &ConceptBank, parent_id: usize) -> Result<Vec<usize>> {
        find_children_within(bank, parent_id, self.eta_text(bank.get(parent_id)?.norm()))
    }
}

impl From<ScalingLaw> for ChildRule {
    fn from(law: ScalingLaw) -> Self {
        ChildRule::Law(law)
    }
}

/// Children sets for every concept; concepts at the origin get none.
pub fn children_table(bank: &ConceptBank, rule: &ChildRule) -> Vec<Vec<usize>> {
    (0..bank.len())
        .map(|id| rule.children(bank, id).unwrap_or_default())
        .collect()
}

pub fn unique_names(names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::DuplicateName(n.clone()));
        }
    }
    Ok(())
}
