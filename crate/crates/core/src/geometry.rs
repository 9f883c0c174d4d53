//! Lorentz-model kernels: lifting, exponential/logarithmic maps at the origin,
//! the Minkowski product, cone half-apertures and exterior angles.
//!
//! Points live on the upper sheet of the hyperboloid `<x, x>_L = -1/c`. Only the
//! spatial component is carried around; the time component is always derived
//! from it as `sqrt(1/c + |x~|^2)`.
//!
//! Every kernel here is a pure scalar function. Batched callers loop over these
//! same functions, so results do not depend on how work is partitioned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Curvature magnitude `c` of the manifold (sectional curvature is `-c`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub const DEFAULT: f64 = 0.1;

    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 {
            Ok(Curvature(c))
        } else {
            Err(Error::param("curvature", format!("must be finite and > 0, got {c}")))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature(Self::DEFAULT)
    }
}

impl TryFrom<f64> for Curvature {
    type Error = Error;
    fn try_from(c: f64) -> Result<Self> {
        Curvature::new(c)
    }
}

impl From<Curvature> for f64 {
    fn from(c: Curvature) -> f64 {
        c.0
    }
}

/// Clamping and guard constants for the inverse-trig kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericPolicy {
    /// Margin kept away from +-1 before `asin` in the half-aperture.
    pub clamp_eps: f64,
    /// Margin kept away from +-1 on the exterior-angle cosine, applied as the
    /// equivalent bound on the angle. Zero leaves the angle unclamped so that
    /// points on a cone axis get an exterior angle of zero.
    pub acos_eps: f64,
    /// Guard for vanishing denominators.
    pub denom_eps: f64,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        NumericPolicy {
            clamp_eps: 1e-6,
            acos_eps: 0.0,
            denom_eps: 1e-12,
        }
    }
}

impl NumericPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 1.0) {
            return Err(Error::param("clamp_eps", "must lie in (0, 1)"));
        }
        if !(self.acos_eps >= 0.0 && self.acos_eps < 1.0) {
            return Err(Error::param("acos_eps", "must lie in [0, 1)"));
        }
        if !(self.denom_eps > 0.0) {
            return Err(Error::param("denom_eps", "must be > 0"));
        }
        Ok(())
    }
}

/// A point on the hyperboloid. The time component is derived at construction
/// and cannot be set independently.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicPoint {
    spatial: Vec<f64>,
    time: f64,
    norm: f64,
}

impl HyperbolicPoint {
    #[inline]
    pub fn spatial(&self) -> &[f64] {
        &self.spatial
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.time
    }

    /// Euclidean norm of the spatial component.
    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.spatial.len()
    }

    pub fn into_spatial(self) -> Vec<f64> {
        self.spatial
    }

    /// The origin `(sqrt(1/c), 0, ..., 0)`.
    pub fn origin(dim: usize, c: Curvature) -> Self {
        HyperbolicPoint {
            spatial: vec![0.0; dim],
            time: (1.0 / c.get()).sqrt(),
            norm: 0.0,
        }
    }
}

/// Tangent vector at the origin, identified with `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(pub Vec<f64>);

impl TangentVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(col) => Err(Error::NonFinite { row: 0, col }),
        None => Ok(()),
    }
}

/// Minkowski bilinear form with signature `(-, +, ..., +)`.
pub fn minkowski_inner(x: &HyperbolicPoint, y: &HyperbolicPoint) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(-x.time * y.time + dot(&x.spatial, &y.spatial))
}

/// Place a spatial vector on the hyperboloid.
pub fn lift(spatial: Vec<f64>, c: Curvature) -> Result<HyperbolicPoint> {
    check_finite(&spatial)?;
    let sq = dot(&spatial, &spatial);
    Ok(HyperbolicPoint {
        time: (1.0 / c.get() + sq).sqrt(),
        norm: sq.sqrt(),
        spatial,
    })
}

/// Exponential map at the origin.
pub fn exp_map(v: &TangentVector, c: Curvature) -> Result<HyperbolicPoint> {
    check_finite(&v.0)?;
    let t = c.sqrt() * v.norm();
    let scale = sinh_over_t(t);
    lift(v.0.iter().map(|x| x * scale).collect(), c)
}

/// Logarithmic map at the origin. Fails if `x` does not satisfy the hyperboloid
/// constraint for curvature `c` to 1e-6 relative tolerance.
pub fn log_map(x: &HyperbolicPoint, c: Curvature) -> Result<TangentVector> {
    let expected = -1.0 / c.get();
    let inner = minkowski_inner(x, x)?;
    if ((inner - expected) / expected).abs() > 1e-6 {
        return Err(Error::OffManifold { inner, expected });
    }
    // asinh(sqrt(c)|x~|) / sqrt(c) is the geodesic distance from the origin;
    // it avoids the acosh(sqrt(c) x0) cancellation near the origin.
    let t = c.sqrt() * x.norm;
    let scale = asinh_over_t(t);
    Ok(TangentVector(x.spatial.iter().map(|s| s * scale).collect()))
}

#[inline]
fn sinh_over_t(t: f64) -> f64 {
    if t < 1e-6 {
        1.0 + t * t / 6.0
    } else {
        t.sinh() / t
    }
}

#[inline]
fn asinh_over_t(t: f64) -> f64 {
    if t < 1e-6 {
        1.0 - t * t / 6.0
    } else {
        t.asinh() / t
    }
}

/// The unclamped half-aperture argument `u = 2K / (sqrt(c) |c~|)`.
#[inline]
pub fn aperture_argument(norm: f64, cone_k: f64, c: Curvature) -> f64 {
    2.0 * cone_k / (c.sqrt() * norm)
}

/// Half-aperture for a concept of the given spatial norm.
pub fn half_aperture_from_norm(
    norm: f64,
    cone_k: f64,
    c: Curvature,
    policy: &NumericPolicy,
) -> Result<f64> {
    if !(norm > 0.0) {
        return Err(Error::Degenerate(
            "half-aperture undefined for a zero-norm concept".into(),
        ));
    }
    let eps = policy.clamp_eps;
    let u = aperture_argument(norm, cone_k, c).clamp(-1.0 + eps, 1.0 - eps);
    Ok(u.asin())
}

/// Half-aperture `asin(clip(2K / (sqrt(c) |c~|)))` of a concept's entailment cone.
pub fn half_aperture(
    concept: &HyperbolicPoint,
    cone_k: f64,
    c: Curvature,
    policy: &NumericPolicy,
) -> Result<f64> {
    half_aperture_from_norm(concept.norm, cone_k, c, policy)
}

/// Exterior angle of `z` relative to the axis of `concept`'s cone, in `[0, pi]`.
///
/// When `z` and `concept` coincide the expression is 0/0; that case returns 0
/// since a concept entails itself.
pub fn exterior_angle(
    z: &HyperbolicPoint,
    concept: &HyperbolicPoint,
    c: Curvature,
    policy: &NumericPolicy,
) -> Result<f64> {
    if concept.norm <= 0.0 {
        return Err(Error::Degenerate(
            "exterior angle undefined for a concept at the origin".into(),
        ));
    }
    let cz = c.get() * minkowski_inner(z, concept)?;
    let radicand = cz * cz - 1.0;
    if radicand < policy.denom_eps {
        return Ok(0.0);
    }
    // cos(phi) = num / den with den = |c~| sqrt(cz^2 - 1). The matching sine
    // numerator is sqrt(c) |c~| |z~ perpendicular to c~|, which avoids the
    // loss of precision of acos near zero.
    let num = z.time + concept.time * cz;
    let s = dot(&z.spatial, &concept.spatial) / (concept.norm * concept.norm);
    let perp = z
        .spatial
        .iter()
        .zip(&concept.spatial)
        .map(|(a, b)| {
            let r = a - s * b;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    let phi = (c.sqrt() * concept.norm * perp).atan2(num);
    let eps = policy.acos_eps;
    if eps > 0.0 {
        return Ok(phi.clamp((1.0 - eps).acos(), (-1.0 + eps).acos()));
    }
    Ok(phi)
}
