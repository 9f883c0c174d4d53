//! Sparse multinomial logistic head `g(a) = W a + b` with an Elastic-Net
//! penalty `lambda * (alpha * |W|_1 + (1 - alpha) / 2 * |W|_2^2)`, lambda
//! sweeps and accuracy-at-budget evaluation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationMatrix;
use crate::error::{Error, Result};
use crate::io::{self, Cursor};

pub const DEFAULT_ALPHA: f64 = 0.99;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Magnitudes at or below this count as zero when counting effective concepts.
pub const EFFECTIVE_EPS: f64 = 1e-10;
/// Lambda used for the fully shrunk anchor point of a sweep.
pub const ANCHOR_LAMBDA: f64 = 1e6;

/// Rows per gradient block. Fixed so the reduction order never depends on
/// the thread count.
const GRAD_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub lambda: f64,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            lambda: 1e-4,
            alpha: DEFAULT_ALPHA,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl FitParams {
    pub fn with_lambda(lambda: f64) -> Self {
        FitParams {
            lambda,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::param("lambda", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param("alpha", "must lie in [0, 1]"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", "must be > 0"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseHead {
    classes: usize,
    concepts: usize,
    /// Class-major `classes x concepts`.
    w: Vec<f64>,
    b: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub tol: f64,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Penalized training objective, when produced by a fit.
    pub objective: Option<f64>,
    pub class_names: Vec<String>,
    pub bank_hash: String,
}

pub struct Prediction {
    pub logits: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl SparseHead {
    /// Build a head from explicit weights (class-major rows).
    pub fn from_weights(w: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let classes = b.len();
        if w.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                got: w.len(),
            });
        }
        let concepts = w.first().map_or(0, Vec::len);
        if let Some(bad) = w.iter().find(|r| r.len() != concepts) {
            return Err(Error::DimensionMismatch {
                expected: concepts,
                got: bad.len(),
            });
        }
        let flat: Vec<f64> = w.into_iter().flatten().collect();
        if flat.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::param("weights", "must be finite"));
        }
        Ok(SparseHead {
            classes,
            concepts,
            w: flat,
            b,
            lambda: 0.0,
            alpha: DEFAULT_ALPHA,
            tol: DEFAULT_TOL,
            converged: true,
            iterations: 0,
            kkt_residual: 0.0,
            objective: None,
            class_names: (0..classes).map(|k| k.to_string()).collect(),
            bank_hash: String::new(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts
    }

    #[inline]
    pub fn weight(&self, class: usize, concept: usize) -> f64 {
        self.w[class * self.concepts + concept]
    }

    pub fn weights(&self) -> Vec<Vec<f64>> {
        self.w.chunks(self.concepts.max(1)).take(self.classes).map(<[f64]>::to_vec).collect()
    }

    pub fn class_weights(&self, class: usize) -> &[f64] {
        &self.w[class * self.concepts..(class + 1) * self.concepts]
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    /// Concepts with any class weight above [`EFFECTIVE_EPS`] in magnitude.
    pub fn effective_concepts(&self) -> Vec<usize> {
        (0..self.concepts)
            .filter(|&j| (0..self.classes).any(|k| self.weight(k, j).abs() > EFFECTIVE_EPS))
            .collect()
    }

    pub fn num_effective(&self) -> usize {
        self.effective_concepts().len()
    }

    /// Logits for one sparse activation row.
    pub fn logits_sparse(&self, entries: &[(usize, f64)]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let wk = self.class_weights(k);
                let mut z = self.b[k];
                for &(j, a) in entries {
                    z += wk[j] * a;
                }
                z
            })
            .collect()
    }

    pub fn logits_dense(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.concepts {
            return Err(Error::DimensionMismatch {
                expected: self.concepts,
                got: row.len(),
            });
        }
        let entries: Vec<(usize, f64)> = row.iter().copied().enumerate().filter(|&(_, a)| a != 0.0).collect();
        Ok(self.logits_sparse(&entries))
    }

    pub fn predict(&self, acts: &ActivationMatrix) -> Result<Prediction> {
        if acts.cols() != self.concepts {
            return Err(Error::DimensionMismatch {
                expected: self.concepts,
                got: acts.cols(),
            });
        }
        let logits: Vec<Vec<f64>> = (0..acts.rows())
            .into_par_iter()
            .map(|i| self.logits_sparse(&acts.row_entries(i).collect::<Vec<_>>()))
            .collect();
        let labels = logits.iter().map(|z| argmax(z)).collect();
        Ok(Prediction { logits, labels })
    }

    /// Max KKT residual of the penalized objective at this head on `(acts, labels)`.
    pub fn kkt_residual(&self, acts: &ActivationMatrix, labels: &[usize]) -> Result<f64> {
        let problem = Problem::new(acts, labels, self.classes, self.lambda, self.alpha)?;
        let x = self.params();
        let (_, g) = problem.loss_grad(&x);
        Ok(problem.kkt(&x, &g))
    }

    /// Penalized training objective at this head.
    pub fn objective_on(&self, acts: &ActivationMatrix, labels: &[usize]) -> Result<f64> {
        let problem = Problem::new(acts, labels, self.classes, self.lambda, self.alpha)?;
        let x = self.params();
        let (f, _) = problem.loss_grad(&x);
        Ok(f + problem.l1(&x))
    }

    fn params(&self) -> Vec<f64> {
        let mut x = self.w.clone();
        x.extend_from_slice(&self.b);
        x
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&ModelHeader {
            lambda: self.lambda,
            alpha: self.alpha,
            tol: self.tol,
            classes: self.classes,
            concepts: self.concepts,
            converged: self.converged,
            iterations: self.iterations,
            kkt_residual: self.kkt_residual,
            objective: self.objective,
            class_names: self.class_names.clone(),
            bank_hash: self.bank_hash.clone(),
        })?;
        let mut out = Vec::with_capacity(12 + header.len() + 8 * (self.w.len() + self.b.len()));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.w.iter().chain(&self.b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut cur = Cursor::new(bytes);
        if cur.take(4) != Some(MODEL_MAGIC.as_slice()) {
            return Err(corrupt("bad magic, expected HCMH"));
        }
        if cur.u32() != Some(MODEL_VERSION) {
            return Err(corrupt("unsupported version"));
        }
        let hlen = cur.u32().ok_or_else(|| corrupt("truncated header length"))? as usize;
        let h: ModelHeader = serde_json::from_slice(cur.take(hlen).ok_or_else(|| corrupt("truncated header"))?)
            .map_err(|e| corrupt(&e.to_string()))?;
        let n = h.classes * h.concepts + h.classes;
        if cur.remaining() != n * 8 {
            return Err(corrupt("weight block length disagrees with header"));
        }
        let mut vals: Vec<f64> = (0..n).map(|_| cur.f64().unwrap()).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(corrupt("non-finite weight"));
        }
        let b = vals.split_off(h.classes * h.concepts);
        Ok(SparseHead {
            classes: h.classes,
            concepts: h.concepts,
            w: vals,
            b,
            lambda: h.lambda,
            alpha: h.alpha,
            tol: h.tol,
            converged: h.converged,
            iterations: h.iterations,
            kkt_residual: h.kkt_residual,
            objective: h.objective,
            class_names: h.class_names,
            bank_hash: h.bank_hash,
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

const MODEL_MAGIC: &[u8; 4] = b"HCMH";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    lambda: f64,
    alpha: f64,
    tol: f64,
    classes: usize,
    concepts: usize,
    converged: bool,
    iterations: usize,
    kkt_residual: f64,
    objective: Option<f64>,
    class_names: Vec<String>,
    bank_hash: String,
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Training data plus penalty, with parameters flattened as `[W (class-major), b]`.
struct Problem<'a> {
    acts: &'a ActivationMatrix,
    labels: &'a [usize],
    classes: usize,
    m: usize,
    lambda: f64,
    alpha: f64,
}

impl<'a> Problem<'a> {
    fn new(
        acts: &'a ActivationMatrix,
        labels: &'a [usize],
        classes: usize,
        lambda: f64,
        alpha: f64,
    ) -> Result<Self> {
        if labels.len() != acts.rows() {
            return Err(Error::DimensionMismatch {
                expected: acts.rows(),
                got: labels.len(),
            });
        }
        if acts.rows() == 0 {
            return Err(Error::Degenerate("no training rows".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::param("labels", format!("label {bad} >= num_classes {classes}")));
        }
        Ok(Problem {
            acts,
            labels,
            classes,
            m: acts.cols(),
            lambda,
            alpha,
        })
    }

    fn nw(&self) -> usize {
        self.classes * self.m
    }

    /// Smooth part (mean cross-entropy plus the ridge term) and its gradient.
    fn loss_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (k, m, nw) = (self.classes, self.m, self.nw());
        let n = self.acts.rows();
        let blocks: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(GRAD_BLOCK))
            .into_par_iter()
            .map(|blk| {
                let mut g = vec![0.0; nw + k];
                let mut loss = 0.0;
                let mut z = vec![0.0; k];
                for i in blk * GRAD_BLOCK..((blk + 1) * GRAD_BLOCK).min(n) {
                    let (idx, vals) = self.acts.row(i);
                    for c in 0..k {
                        let wc = &x[c * m..(c + 1) * m];
                        let mut s = x[nw + c];
                        for (&j, &a) in idx.iter().zip(vals) {
                            s += wc[j as usize] * a;
                        }
                        z[c] = s;
                    }
                    let y = self.labels[i];
                    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let zy = z[y] - zmax;
                    let mut se = 0.0;
                    for v in z.iter_mut() {
                        *v = (*v - zmax).exp();
                        se += *v;
                    }
                    // z now holds unnormalized probabilities.
                    loss += se.ln() - zy;
                    for c in 0..k {
                        let r = z[c] / se - if c == y { 1.0 } else { 0.0 };
                        if r == 0.0 {
                            continue;
                        }
                        let gc = &mut g[c * m..(c + 1) * m];
                        for (&j, &a) in idx.iter().zip(vals) {
                            gc[j as usize] += r * a;
                        }
                        g[nw + c] += r;
                    }
                }
                (loss, g)
            })
            .collect();
        let mut loss = 0.0;
        let mut g = vec![0.0; nw + k];
        for (l, gb) in &blocks {
            loss += l;
            for (a, b) in g.iter_mut().zip(gb) {
                *a += b;
            }
        }
        let inv = 1.0 / n as f64;
        loss *= inv;
        for v in g.iter_mut() {
            *v *= inv;
        }
        let ridge = self.lambda * (1.0 - self.alpha);
        if ridge > 0.0 {
            let mut sq = 0.0;
            for (gv, &w) in g[..nw].iter_mut().zip(&x[..nw]) {
                *gv += ridge * w;
                sq += w * w;
            }
            loss += 0.5 * ridge * sq;
        }
        (loss, g)
    }

    fn l1(&self, x: &[f64]) -> f64 {
        self.lambda * self.alpha * x[..self.nw()].iter().map(|w| w.abs()).sum::<f64>()
    }

    fn prox(&self, v: &mut [f64], step: f64) {
        let t = self.lambda * self.alpha * step;
        if t == 0.0 {
            return;
        }
        for w in v[..self.nw()].iter_mut() {
            *w = w.signum() * (w.abs() - t).max(0.0);
        }
    }

    /// Max violation of the subgradient optimality conditions.
    fn kkt(&self, x: &[f64], g: &[f64]) -> f64 {
        let l1 = self.lambda * self.alpha;
        let nw = self.nw();
        let mut r: f64 = 0.0;
        for i in 0..nw {
            let v = if x[i] != 0.0 {
                (g[i] + l1 * x[i].signum()).abs()
            } else {
                (g[i].abs() - l1).max(0.0)
            };
            r = r.max(v);
        }
        for gb in &g[nw..] {
            r = r.max(gb.abs());
        }
        r
    }
}

fn sq_dist_and_dot(z: &[f64], y: &[f64], g: &[f64]) -> (f64, f64) {
    let mut d2 = 0.0;
    let mut dot = 0.0;
    for i in 0..z.len() {
        let d = z[i] - y[i];
        d2 += d * d;
        dot += g[i] * d;
    }
    (d2, dot)
}

pub struct FitTrace {
    /// Penalized objective after each accepted iterate, starting with the
    /// initial point.
    pub objective: Vec<f64>,
}

/// Fit with default reporting; see [`fit_traced`].
pub fn fit(acts: &ActivationMatrix, labels: &[usize], num_classes: usize, params: &FitParams) -> Result<SparseHead> {
    fit_traced(acts, labels, num_classes, params).map(|(h, _)| h)
}

/// Accelerated proximal gradient with backtracking and function-value
/// restart. Every accepted iterate lowers the objective, so the best
/// iterate is always the last one.
pub fn fit_traced(
    acts: &ActivationMatrix,
    labels: &[usize],
    num_classes: usize,
    params: &FitParams,
) -> Result<(SparseHead, FitTrace)> {
    params.validate()?;
    let mut seen = vec![false; num_classes];
    for &y in labels {
        if y < num_classes {
            seen[y] = true;
        }
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::Degenerate("labels cover fewer than 2 classes".into()));
    }
    let problem = Problem::new(acts, labels, num_classes, params.lambda, params.alpha)?;
    let (k, nw) = (num_classes, problem.nw());

    let mut x = vec![0.0; nw + k];
    let mut counts = vec![0usize; k];
    for &y in labels {
        counts[y] += 1;
    }
    // Log priors, with absent classes pushed well below the rest.
    let n = labels.len() as f64;
    for c in 0..k {
        x[nw + c] = if counts[c] > 0 { (counts[c] as f64 / n).ln() } else { -30.0 };
    }

    let (mut fx, mut gx) = problem.loss_grad(&x);
    let mut obj_x = fx + problem.l1(&x);
    let mut trace = vec![obj_x];
    let mut kkt = problem.kkt(&x, &gx);
    let mut converged = kkt <= params.tol;

    let mut lip = 1.0;
    let mut t: f64 = 1.0;
    let mut y = x.clone();
    let mut y_is_x = true;
    let mut iterations = 0;
    let mut z = vec![0.0; nw + k];

    while !converged && iterations < params.max_iter {
        iterations += 1;
        let (fy, gy) = if y_is_x { (fx, gx.clone()) } else { problem.loss_grad(&y) };
        let (fz, gz) = loop {
            for i in 0..z.len() {
                z[i] = y[i] - gy[i] / lip;
            }
            problem.prox(&mut z, 1.0 / lip);
            let (fz, gz) = problem.loss_grad(&z);
            let (d2, dot) = sq_dist_and_dot(&z, &y, &gy);
            let bound = fy + dot + 0.5 * lip * d2;
            if fz <= bound + 1e-12 * bound.abs().max(1.0) || d2 == 0.0 {
                break (fz, gz);
            }
            lip *= 2.0;
        };
        let obj_z = fz + problem.l1(&z);
        if obj_z > obj_x {
            if y_is_x {
                // A plain proximal step failed to descend: numerically stalled.
                break;
            }
            // Momentum overshot; restart from the current iterate.
            y.copy_from_slice(&x);
            y_is_x = true;
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for i in 0..y.len() {
            y[i] = z[i] + beta * (z[i] - x[i]);
        }
        y_is_x = beta == 0.0;
        std::mem::swap(&mut x, &mut z);
        fx = fz;
        gx = gz;
        obj_x = obj_z;
        t = t_next;
        trace.push(obj_x);
        kkt = problem.kkt(&x, &gx);
        converged = kkt <= params.tol;
        lip *= 0.9;
    }
    if !converged {
        log::warn!(
            "fit did not converge: lambda={} iterations={} kkt={:.3e}",
            params.lambda,
            iterations,
            kkt
        );
    }
    let b = x.split_off(nw);
    let head = SparseHead {
        classes: k,
        concepts: problem.m,
        w: x,
        b,
        lambda: params.lambda,
        alpha: params.alpha,
        tol: params.tol,
        converged,
        iterations,
        kkt_residual: kkt,
        objective: Some(obj_x),
        class_names: (0..k).map(|c| c.to_string()).collect(),
        bank_hash: acts.bank_hash.clone(),
    };
    Ok((head, FitTrace { objective: trace }))
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || n == 0 {
        return Err(Error::param("grid", "need 0 < lo <= hi and n >= 1"));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub grid: Vec<f64>,
    pub refine_rounds: usize,
    /// Refine between neighbours whose effective-concept counts differ by more than this.
    pub gap: usize,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Append a fully shrunk point at [`ANCHOR_LAMBDA`].
    pub anchor: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            grid: log_grid(1e-7, 1e-1, 13).expect("static grid"),
            refine_rounds: 2,
            gap: 5,
            alpha: DEFAULT_ALPHA,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            anchor: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lambda: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub accuracy: f64,
    pub converged: bool,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub lambda: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnecCurve {
    /// Sorted by `(K, lambda)`.
    pub points: Vec<CurvePoint>,
    pub failures: Vec<SweepFailure>,
}

impl AnecCurve {
    pub fn new(mut points: Vec<CurvePoint>) -> Self {
        points.sort_by(|a, b| a.k.cmp(&b.k).then(a.lambda.total_cmp(&b.lambda)));
        AnecCurve {
            points,
            failures: Vec::new(),
        }
    }

    /// Pairs `(lambda_lo, lambda_hi)` where K rises although lambda grew.
    pub fn shrinkage_violations(&self) -> Vec<(f64, f64)> {
        let mut by_lambda: Vec<&CurvePoint> = self.points.iter().collect();
        by_lambda.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        by_lambda
            .windows(2)
            .filter(|w| w[1].k > w[0].k)
            .map(|w| (w[0].lambda, w[1].lambda))
            .collect()
    }

    pub fn to_csv_rows(&self) -> Vec<Vec<String>> {
        self.points
            .iter()
            .map(|p| vec![format!("{:e}", p.lambda), p.k.to_string(), format!("{:.6}", p.accuracy)])
            .collect()
    }
}

fn sweep_point(
    train: (&ActivationMatrix, &[usize]),
    test: (&ActivationMatrix, &[usize]),
    num_classes: usize,
    opts: &SweepOptions,
    lambda: f64,
) -> Result<CurvePoint> {
    let params = FitParams {
        lambda,
        alpha: opts.alpha,
        tol: opts.tol,
        max_iter: opts.max_iter,
    };
    let head = fit(train.0, train.1, num_classes, &params)?;
    let pred = head.predict(test.0)?;
    Ok(CurvePoint {
        lambda,
        k: head.num_effective(),
        accuracy: accuracy_of(&pred.labels, test.1)?,
        converged: head.converged,
        kkt_residual: head.kkt_residual,
    })
}

fn accuracy_of(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: pred.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Degenerate("empty evaluation set".into()));
    }
    Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64)
}

/// Fit every lambda on the grid, then refine with log-space midpoints where
/// neighbouring effective-concept counts differ by more than `opts.gap`.
/// Per-lambda failures are recorded, not raised.
pub fn lambda_sweep(
    acts_train: &ActivationMatrix,
    labels_train: &[usize],
    acts_test: &ActivationMatrix,
    labels_test: &[usize],
    num_classes: usize,
    opts: &SweepOptions,
) -> Result<AnecCurve> {
    if opts.grid.is_empty() {
        return Err(Error::param("grid", "empty lambda grid"));
    }
    let train = (acts_train, labels_train);
    let test = (acts_test, labels_test);
    let run = |lambdas: &[f64]| -> Vec<(f64, Result<CurvePoint>)> {
        lambdas
            .par_iter()
            .map(|&l| (l, sweep_point(train, test, num_classes, opts, l)))
            .collect()
    };
    let mut points: Vec<CurvePoint> = Vec::new();
    let mut failures = Vec::new();
    let mut absorb = |results: Vec<(f64, Result<CurvePoint>)>, points: &mut Vec<CurvePoint>| {
        for (l, r) in results {
            match r {
                Ok(p) => points.push(p),
                Err(e) => failures.push(SweepFailure {
                    lambda: l,
                    error: e.to_string(),
                }),
            }
        }
    };
    let mut grid = opts.grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    absorb(run(&grid), &mut points);
    for _ in 0..opts.refine_rounds {
        points.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        let mids: Vec<f64> = points
            .windows(2)
            .filter(|w| w[0].k.abs_diff(w[1].k) > opts.gap)
            .map(|w| (w[0].lambda * w[1].lambda).sqrt())
            .collect();
        if mids.is_empty() {
            break;
        }
        absorb(run(&mids), &mut points);
    }
    if opts.anchor {
        absorb(run(&[ANCHOR_LAMBDA]), &mut points);
    }
    let mut curve = AnecCurve::new(points);
    curve.failures = failures;
    for (lo, hi) in curve.shrinkage_violations() {
        log::warn!("effective-concept count increased from lambda {lo:e} to {hi:e}");
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnecValue {
    pub budget: usize,
    pub accuracy: f64,
    pub extrapolated: bool,
}

/// Accuracy at each concept budget by piecewise-linear interpolation in K.
/// Several points at one K collapse to their best accuracy; budgets outside
/// the measured range take the boundary value and are flagged.
pub fn anec(curve: &AnecCurve, budgets: &[usize]) -> Result<Vec<AnecValue>> {
    if curve.points.is_empty() {
        return Err(Error::Degenerate("empty ANEC curve".into()));
    }
    let mut frontier: Vec<(usize, f64)> = Vec::new();
    for p in &curve.points {
        match frontier.last_mut() {
            Some(last) if last.0 == p.k => last.1 = last.1.max(p.accuracy),
            _ => frontier.push((p.k, p.accuracy)),
        }
    }
    frontier.sort_by_key(|p| p.0);
    let (lo, hi) = (frontier[0], *frontier.last().unwrap());
    Ok(budgets
        .iter()
        .map(|&budget| {
            if budget <= lo.0 {
                return AnecValue {
                    budget,
                    accuracy: lo.1,
                    extrapolated: budget < lo.0,
                };
            }
            if budget >= hi.0 {
                return AnecValue {
                    budget,
                    accuracy: hi.1,
                    extrapolated: budget > hi.0,
                };
            }
            let i = frontier.partition_point(|p| p.0 < budget);
            let (k1, a1) = frontier[i];
            let accuracy = if k1 == budget {
                a1
            } else {
                let (k0, a0) = frontier[i - 1];
                a0 + (a1 - a0) * (budget - k0) as f64 / (k1 - k0) as f64
            };
            AnecValue {
                budget,
                accuracy,
                extrapolated: false,
            }
        })
        .collect())
}
