//! Meshless Helmholtz-Hodge reconstruction. A scattered vector field in
//! unified x-alpha-beta space is fitted as `-grad(Phi) + curl(A)` with
//! Gaussian kernels, and `Phi` is taken as the landscape estimate.

use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::landscape::{GridAxes, LandscapeGrid};
use crate::metrics::UNIFY_RATIO;
use crate::signal::{AveragedTrial, Channel, Source};

pub type Point = [f64; 3];

/// Centers closer than this to a base are dropped (unified units).
pub const MIN_CENTER_DISTANCE: f64 = 1e-4;

/// Rows of the design matrix assembled per block of the normal equations.
const BLOCK_ROWS: usize = 1536;

/// Field samples in unified coordinates: bases are `(0.01 x, alpha, beta)`
/// and vectors are `-grad(PE)` with the x-component scaled by `1 / 0.01`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VectorFieldSamples {
    pub bases: Vec<Point>,
    pub vectors: Vec<Point>,
    pub source: Option<Source>,
}

impl VectorFieldSamples {
    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    /// Keeps each sample independently with probability `keep`.
    pub fn subsample(&self, keep: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Self {
            source: self.source,
            ..Self::default()
        };
        for (b, v) in self.bases.iter().zip(&self.vectors) {
            if rng.gen::<f64>() < keep {
                out.bases.push(*b);
                out.vectors.push(*v);
            }
        }
        out
    }
}

/// Unified coordinates of a physical state (x in mm, angles in rad).
pub fn unify(x: f64, alpha: f64, beta: f64) -> Point {
    [UNIFY_RATIO * x, alpha, beta]
}

/// Builds field samples from averaged trials over `x_range` (mm). Sensed
/// forces are gravity-augmented so every vector targets `-grad(PE)`; the
/// model source uses its reference gradient directly.
pub fn assemble_samples(trials: &[AveragedTrial], source: Source, x_range: (f64, f64)) -> Result<VectorFieldSamples> {
    if trials.is_empty() {
        return Err(Error::EmptyInput("averaged trials"));
    }
    let mut out = VectorFieldSamples {
        source: Some(source),
        ..Default::default()
    };
    for t in trials {
        let (alpha, beta) = (t.nominal.alpha_deg.to_radians(), t.nominal.beta_deg.to_radians());
        for (i, &x) in t.x.iter().enumerate() {
            if t.missing[i] || x < x_range.0 || x > x_range.1 {
                continue;
            }
            let field = match source.sensed_channels() {
                Some(ch) => {
                    let gravity = [0.0, t.mean(Channel::GravityAlpha)[i], t.mean(Channel::GravityBeta)[i]];
                    let load = ch.map(|c| t.mean(c)[i]);
                    [load[0] + gravity[0], load[1] + gravity[1], load[2] + gravity[2]]
                }
                None => [Channel::ModelDx, Channel::ModelDAlpha, Channel::ModelDBeta].map(|c| -t.mean(c)[i]),
            };
            if field.iter().all(|v| v.is_finite()) {
                out.bases.push(unify(x, alpha, beta));
                out.vectors.push([field[0] / UNIFY_RATIO, field[1], field[2]]);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("field samples in range"));
    }
    Ok(out)
}

fn dist2(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn distinct_count(points: &[Point]) -> usize {
    let mut keys: Vec<[u64; 3]> = points.iter().map(|p| p.map(|v| (v + 0.0).to_bits())).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Settings for Lloyd's algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iterations: usize,
    /// Stop once no centroid moves further than this.
    pub tolerance: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-8,
        }
    }
}

/// k-means++ seeding followed by Lloyd iterations. Centers closer than
/// [`MIN_CENTER_DISTANCE`] to any base are dropped from the result.
pub fn kmeans_centers(bases: &[Point], k: usize, seed: u64) -> Result<Vec<Point>> {
    kmeans_with(bases, k, seed, KMeansOptions::default())
}

pub fn kmeans_with(bases: &[Point], k: usize, seed: u64, opts: KMeansOptions) -> Result<Vec<Point>> {
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    if bases.is_empty() {
        return Err(Error::EmptyInput("bases for clustering"));
    }
    let distinct = distinct_count(bases);
    let k = if k > distinct {
        log::warn!("k = {k} exceeds {distinct} distinct bases; using k = {distinct}");
        distinct
    } else {
        k
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(k);
    centers.push(bases[rng.gen_range(0..bases.len())]);
    let mut nearest: Vec<f64> = bases.iter().map(|b| dist2(b, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = nearest.len() - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.gen_range(0..bases.len())
        };
        let c = bases[pick];
        centers.push(c);
        for (n, b) in nearest.iter_mut().zip(bases) {
            *n = n.min(dist2(b, &c));
        }
    }

    let mut assign = vec![0usize; bases.len()];
    for _ in 0..opts.max_iterations {
        let mut best_d = vec![0.0; bases.len()];
        for (i, b) in bases.iter().enumerate() {
            let (mut bi, mut bd) = (0, f64::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let d = dist2(b, c);
                if d < bd {
                    (bi, bd) = (j, d);
                }
            }
            assign[i] = bi;
            best_d[i] = bd;
        }
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (b, &a) in bases.iter().zip(&assign) {
            for d in 0..3 {
                sums[a][d] += b[d];
            }
            counts[a] += 1;
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            let next = if counts[j] > 0 {
                sums[j].map(|s| s / counts[j] as f64)
            } else {
                // An empty cluster takes over the worst-served base.
                let far = (0..bases.len()).max_by(|&a, &b| best_d[a].total_cmp(&best_d[b])).unwrap_or(0);
                best_d[far] = 0.0;
                bases[far]
            };
            shift = shift.max(dist2(&next, &centers[j]).sqrt());
            centers[j] = next;
        }
        if shift < opts.tolerance {
            break;
        }
    }
    let min2 = MIN_CENTER_DISTANCE * MIN_CENTER_DISTANCE;
    centers.retain(|c| bases.iter().all(|b| dist2(b, c) >= min2));
    Ok(centers)
}

/// Kernel width rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaPolicy {
    /// `factor / (2 d^2)` with `d` the median nearest-center spacing.
    Spacing { factor: f64 },
    Fixed(f64),
}

/// Median distance from each center to its nearest neighbour.
pub fn median_spacing(centers: &[Point]) -> f64 {
    if centers.len() < 2 {
        return 1.0;
    }
    let mut d: Vec<f64> = centers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            centers
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| dist2(c, o))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

impl SigmaPolicy {
    pub fn resolve(&self, centers: &[Point]) -> Result<f64> {
        let sigma = match *self {
            SigmaPolicy::Fixed(s) => s,
            SigmaPolicy::Spacing { factor } => {
                let d = median_spacing(centers);
                factor / (2.0 * d * d)
            }
        };
        if sigma > 0.0 && sigma.is_finite() {
            Ok(sigma)
        } else {
            Err(invalid("sigma", format!("kernel width {sigma} must be positive and finite")))
        }
    }
}

/// Reconstruction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HhdConfig {
    pub k: usize,
    pub sigma: SigmaPolicy,
    /// Ridge weight relative to the largest squared design-column norm.
    pub ridge: f64,
    /// Extra ridge factor on the solenoidal coefficients.
    pub curl_weight: f64,
    pub seed: u64,
}

impl Default for HhdConfig {
    fn default() -> Self {
        Self {
            k: 500,
            sigma: SigmaPolicy::Spacing { factor: 0.1 },
            ridge: 1e-6,
            curl_weight: 1e4,
            seed: 1,
        }
    }
}

/// Fitted kernel expansion. `Phi = sum a_i phi_i + gauge` and the solenoidal
/// part is `sum grad(phi_i) x b_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionModel {
    pub centers: Vec<Point>,
    pub sigma: f64,
    pub lambda: f64,
    pub a: Vec<f64>,
    pub b: Vec<Point>,
    pub gauge: f64,
    pub ratio: f64,
    pub source: Option<Source>,
    pub seed: u64,
    /// Relative least-squares residual on the training samples.
    pub residual: f64,
}

/// Value and gradient of the Gaussian kernel centered at `c`.
fn kernel(sigma: f64, p: &Point, c: &Point) -> (f64, Point) {
    let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
    let phi = (-sigma * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2])).exp();
    let s = -2.0 * sigma * phi;
    (phi, [s * d[0], s * d[1], s * d[2]])
}

// Writes the three design rows of one sample into `rows`, starting at `r`.
fn design_rows(rows: &mut Mat<f64>, r: usize, p: &Point, centers: &[Point], sigma: f64) {
    let k = centers.len();
    for (i, c) in centers.iter().enumerate() {
        let (_, g) = kernel(sigma, p, c);
        for d in 0..3 {
            rows[(r + d, i)] = -g[d];
        }
        // grad(phi) x b as a matrix acting on b.
        let col = k + 3 * i;
        rows[(r, col + 1)] = -g[2];
        rows[(r, col + 2)] = g[1];
        rows[(r + 1, col)] = g[2];
        rows[(r + 1, col + 2)] = -g[0];
        rows[(r + 2, col)] = -g[1];
        rows[(r + 2, col + 1)] = g[0];
    }
}

/// Ridge-regularized least squares for the kernel coefficients, solved
/// through the normal equations with a Cholesky factorization.
pub fn hhd_fit(samples: &VectorFieldSamples, centers: &[Point], sigma: f64, ridge: f64) -> Result<ReconstructionModel> {
    hhd_fit_weighted(samples, centers, sigma, ridge, 1.0)
}

/// As [`hhd_fit`], with the ridge on the solenoidal coefficients multiplied
/// by `curl_weight`.
pub fn hhd_fit_weighted(
    samples: &VectorFieldSamples,
    centers: &[Point],
    sigma: f64,
    ridge: f64,
    curl_weight: f64,
) -> Result<ReconstructionModel> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("field samples"));
    }
    if centers.is_empty() {
        return Err(Error::EmptyInput("kernel centers"));
    }
    if !(sigma > 0.0) || !(ridge > 0.0) {
        return Err(invalid("hhd", "sigma and ridge must be positive"));
    }
    let k = centers.len();
    let cols = 4 * k;
    let n = samples.len();
    if 3 * n < cols {
        log::warn!("{n} samples give {} equations for {cols} unknowns; the ridge term carries the fit", 3 * n);
    }
    let mut gram = Mat::<f64>::zeros(cols, cols);
    let mut rhs = Mat::<f64>::zeros(cols, 1);
    let mut ff = 0.0;
    let per_block = BLOCK_ROWS / 3;
    for start in (0..n).step_by(per_block) {
        let end = (start + per_block).min(n);
        let m = 3 * (end - start);
        let mut block = Mat::<f64>::zeros(m, cols);
        let mut f = Mat::<f64>::zeros(m, 1);
        for (j, s) in (start..end).enumerate() {
            design_rows(&mut block, 3 * j, &samples.bases[s], centers, sigma);
            for d in 0..3 {
                f[(3 * j + d, 0)] = samples.vectors[s][d];
                ff += samples.vectors[s][d].powi(2);
            }
        }
        faer::linalg::matmul::matmul(gram.as_mut(), Accum::Add, block.transpose(), block.as_ref(), 1.0, Par::Seq);
        faer::linalg::matmul::matmul(rhs.as_mut(), Accum::Add, block.transpose(), f.as_ref(), 1.0, Par::Seq);
    }
    let max_col = (0..cols).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let lambda = ridge * if max_col > 0.0 { max_col } else { 1.0 };
    for i in 0..cols {
        gram[(i, i)] += if i < k { lambda } else { lambda * curl_weight };
    }
    let llt = gram.llt(Side::Lower).map_err(|_| Error::RankDeficient { condition: 0.0 })?;
    let diag: Vec<f64> = (0..cols).map(|i| llt.L()[(i, i)]).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let condition = (lo / hi).powi(2);
    if !(condition > 1e-15) {
        return Err(Error::RankDeficient { condition });
    }
    let x = llt.solve(&rhs);
    // |Ax - f|^2 = f.f - 2 x.A'f + x.A'A x, with the ridge taken back out.
    let mut xgx = 0.0;
    let mut xr = 0.0;
    let gx = &gram * &x;
    for i in 0..cols {
        let l = if i < k { lambda } else { lambda * curl_weight };
        xgx += x[(i, 0)] * (gx[(i, 0)] - l * x[(i, 0)]);
        xr += x[(i, 0)] * rhs[(i, 0)];
    }
    let residual = if ff > 0.0 { ((ff - 2.0 * xr + xgx).max(0.0) / ff).sqrt() } else { 0.0 };
    let coeffs: Vec<f64> = (0..cols).map(|i| x[(i, 0)]).collect();
    if coeffs.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient { condition });
    }
    Ok(ReconstructionModel {
        centers: centers.to_vec(),
        sigma,
        lambda,
        a: coeffs[..k].to_vec(),
        b: (0..k).map(|i| [coeffs[k + 3 * i], coeffs[k + 3 * i + 1], coeffs[k + 3 * i + 2]]).collect(),
        gauge: 0.0,
        ratio: UNIFY_RATIO,
        source: samples.source,
        seed: 0,
        residual,
    })
}

/// Clusters the bases into centers and fits the decomposition.
pub fn reconstruct(samples: &VectorFieldSamples, config: &HhdConfig) -> Result<ReconstructionModel> {
    let centers = kmeans_centers(&samples.bases, config.k, config.seed)?;
    let sigma = config.sigma.resolve(&centers)?;
    let mut model = hhd_fit_weighted(samples, &centers, sigma, config.ridge, config.curl_weight)?;
    model.seed = config.seed;
    Ok(model)
}

impl ReconstructionModel {
    /// `Phi` and its gradient at a unified point.
    pub fn eval(&self, p: &Point) -> (f64, Point) {
        let mut phi = self.gauge;
        let mut grad = [0.0; 3];
        for (c, &a) in self.centers.iter().zip(&self.a) {
            let (v, g) = kernel(self.sigma, p, c);
            phi += a * v;
            for d in 0..3 {
                grad[d] += a * g[d];
            }
        }
        (phi, grad)
    }

    /// Solenoidal part `sum grad(phi_i) x b_i` at a unified point.
    pub fn curl_part(&self, p: &Point) -> Point {
        let mut out = [0.0; 3];
        for (c, b) in self.centers.iter().zip(&self.b) {
            let (_, g) = kernel(self.sigma, p, c);
            out[0] += g[1] * b[2] - g[2] * b[1];
            out[1] += g[2] * b[0] - g[0] * b[2];
            out[2] += g[0] * b[1] - g[1] * b[0];
        }
        out
    }

    /// Full fitted field `-grad(Phi) + curl(A)`.
    pub fn field(&self, p: &Point) -> Point {
        let (_, g) = self.eval(p);
        let r = self.curl_part(p);
        [r[0] - g[0], r[1] - g[1], r[2] - g[2]]
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Evaluates `Phi` and its gradient on a grid, with the gradient in physical
/// units (N for x, N mm per rad for the angles). With a reference, the
/// gauge is first set so both grids share their mean over finite nodes.
pub fn reconstruct_landscape(
    model: &mut ReconstructionModel,
    axes: &GridAxes,
    reference: Option<&LandscapeGrid>,
) -> Result<LandscapeGrid> {
    axes.validate()?;
    let nodes: Vec<(f64, Point)> = (0..axes.len())
        .map(|i| {
            let (x, a, b) = axes.node(i);
            let (phi, g) = model.eval(&unify(x, a, b));
            (phi - model.gauge, [g[0] * model.ratio, g[1], g[2]])
        })
        .collect();
    if let Some(r) = reference {
        if !r.axes.matches(axes) {
            return Err(Error::AxisMismatch("reference grid is sampled on different axes".into()));
        }
        let finite: Vec<usize> = (0..nodes.len()).filter(|&i| r.values[i].is_finite()).collect();
        if finite.is_empty() {
            return Err(Error::EmptyInput("finite reference nodes"));
        }
        let m = finite.len() as f64;
        model.gauge = finite.iter().map(|&i| r.values[i] - nodes[i].0).sum::<f64>() / m;
    }
    Ok(LandscapeGrid {
        axes: axes.clone(),
        values: nodes.iter().map(|(v, _)| v + model.gauge).collect(),
        gradient: Some(nodes.iter().map(|(_, g)| *g).collect()),
    })
}
