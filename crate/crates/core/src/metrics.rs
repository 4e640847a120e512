//! Attach/detach segmentation, range- and norm-normalized relative errors,
//! and the summary table over sources and head frequencies.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::LandscapeGrid;
use crate::signal::{AveragedTrial, Channel, Source};

/// Beam angle both beams must exceed for the body to count as attached (deg).
pub const ATTACH_THRESHOLD_DEG: f64 = 3.0;

/// Ratio applied to x to bring it onto the angular axes' scale.
pub const UNIFY_RATIO: f64 = 0.01;

/// Interval where the body engages both beams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraversalWindow {
    pub x_a: f64,
    pub x_d: f64,
    /// Sample indices of `x_a` and `x_d`.
    pub i_a: usize,
    pub i_d: usize,
}

impl TraversalWindow {
    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.i_a..=self.i_d
    }
}

/// Finds the attach frame, the first with both angles above the threshold,
/// and the detach frame, where the earlier-peaking beam reaches its maximum.
/// Angles are in degrees. Ties go to the earlier frame.
pub fn attach_detach(x: &[f64], theta: [&[f64]; 2]) -> Result<TraversalWindow> {
    let n = x.len();
    if theta.iter().any(|t| t.len() != n) {
        return Err(Error::AxisMismatch("beam angle and x series differ in length".into()));
    }
    let above = |t: f64| t > ATTACH_THRESHOLD_DEG;
    let i_a = (0..n)
        .find(|&i| above(theta[0][i]) && above(theta[1][i]))
        .ok_or(Error::NoAttach)?;
    let argmax = |t: &[f64]| {
        let mut best = 0;
        for (i, &v) in t.iter().enumerate() {
            if v > t[best] {
                best = i;
            }
        }
        best
    };
    let i_d = argmax(theta[0]).min(argmax(theta[1]));
    if i_d <= i_a || !(x[i_d] > x[i_a]) {
        return Err(Error::DegenerateWindow { x_a: x[i_a], x_d: x[i_d] });
    }
    Ok(TraversalWindow {
        x_a: x[i_a],
        x_d: x[i_d],
        i_a,
        i_d,
    })
}

/// Window of an averaged trial, from its mean beam angles.
pub fn trial_window(avg: &AveragedTrial) -> Result<TraversalWindow> {
    // Missing points are NaN and never pass the threshold or win the max.
    attach_detach(&avg.x, [avg.mean(Channel::ThetaL), avg.mean(Channel::ThetaR)])
}

/// `mean|y - r| / (max r - min r)` in percent. Pairs with a non-finite value
/// are skipped.
pub fn relative_error_series(y: &[f64], r: &[f64]) -> Result<f64> {
    if y.len() != r.len() {
        return Err(Error::AxisMismatch(format!("series lengths {} and {}", y.len(), r.len())));
    }
    let pairs: Vec<(f64, f64)> = y
        .iter()
        .zip(r)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(&a, &b)| (a, b))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyInput("series to compare"));
    }
    let (lo, hi) = pairs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, b)| (lo.min(b), hi.max(b)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::UndefinedNormalization);
    }
    let mean = pairs.iter().map(|(a, b)| (a - b).abs()).sum::<f64>() / pairs.len() as f64;
    Ok(100.0 * mean / range)
}

/// Landscape and gradient errors between two grids, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub pe: f64,
    pub grad: f64,
}

/// Compares `y` against the reference `r` on shared axes. PE values are
/// mean-aligned first, since a constant offset carries no meaning. Gradients
/// are compared in unified units, `dPE/dx` divided by the unification ratio,
/// and normalized by the largest reference gradient norm. Only nodes finite
/// in both grids take part.
pub fn relative_error_field(y: &LandscapeGrid, r: &LandscapeGrid) -> Result<FieldError> {
    if !y.axes.matches(&r.axes) {
        return Err(Error::AxisMismatch("landscape grids are sampled on different axes".into()));
    }
    let nodes: Vec<usize> = (0..r.values.len())
        .filter(|&i| y.values[i].is_finite() && r.values[i].is_finite())
        .collect();
    if nodes.is_empty() {
        return Err(Error::EmptyInput("finite grid nodes"));
    }
    let n = nodes.len() as f64;
    let offset = nodes.iter().map(|&i| y.values[i] - r.values[i]).sum::<f64>() / n;
    let aligned: Vec<f64> = nodes.iter().map(|&i| y.values[i] - offset).collect();
    let reference: Vec<f64> = nodes.iter().map(|&i| r.values[i]).collect();
    let pe = relative_error_series(&aligned, &reference)?;

    let (gy, gr) = match (&y.gradient, &r.gradient) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::EmptyInput("grid gradients")),
    };
    let unify = |g: [f64; 3]| [g[0] / UNIFY_RATIO, g[1], g[2]];
    let norm = |g: [f64; 3]| (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    let mut diff = 0.0;
    let mut count = 0usize;
    let mut max_ref = 0.0f64;
    for &i in &nodes {
        let (a, b) = (unify(gy[i]), unify(gr[i]));
        if a.iter().chain(&b).all(|v| v.is_finite()) {
            diff += norm([a[0] - b[0], a[1] - b[1], a[2] - b[2]]);
            max_ref = max_ref.max(norm(b));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("finite grid gradients"));
    }
    if !(max_ref > 0.0) {
        return Err(Error::UndefinedNormalization);
    }
    Ok(FieldError {
        pe,
        grad: 100.0 * diff / count as f64 / max_ref,
    })
}

/// Force and torque errors of one averaged trial against the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesErrors {
    pub x: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Errors of `(F_x, T_alpha, T_beta)` from `source` against the model's beam
/// load, over the trial's attach-detach window.
pub fn trial_errors(avg: &AveragedTrial, source: Source, window: &TraversalWindow) -> Result<SeriesErrors> {
    let idx: Vec<usize> = window.indices().filter(|&i| !avg.missing[i]).collect();
    let series = |s: Source, k: usize| -> Vec<f64> { idx.iter().map(|&i| avg.contact_load(s, i)[k]).collect() };
    let eps = |k: usize| relative_error_series(&series(source, k), &series(Source::Model, k));
    Ok(SeriesErrors {
        x: eps(0)?,
        alpha: eps(1)?,
        beta: eps(2)?,
    })
}

/// Average over the window of `std / |mean|`, skipping points with a
/// vanishing mean.
pub fn coefficient_of_variation(avg: &AveragedTrial, channel: Channel, window: &TraversalWindow) -> f64 {
    let (m, s) = (avg.mean(channel), avg.std(channel));
    let ratios: Vec<f64> = window
        .indices()
        .filter(|&i| !avg.missing[i] && m[i].abs() > 1e-9)
        .map(|i| s[i] / m[i].abs())
        .collect();
    if ratios.is_empty() {
        0.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    }
}

/// Everything measured on one averaged trial for one source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialEvaluation {
    pub source: Source,
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub f: f64,
    pub window: TraversalWindow,
    pub errors: SeriesErrors,
    /// Coefficients of variation of `F_x`, `T_alpha`, `T_beta` over repeats.
    pub cov: [f64; 3],
}

pub fn evaluate_trial(avg: &AveragedTrial, source: Source) -> Result<TrialEvaluation> {
    let window = trial_window(avg)?;
    let cov = match source.sensed_channels() {
        Some(ch) => ch.map(|c| coefficient_of_variation(avg, c, &window)),
        None => [0.0; 3],
    };
    Ok(TrialEvaluation {
        source,
        alpha_deg: avg.nominal.alpha_deg,
        beta_deg: avg.nominal.beta_deg,
        f: avg.nominal.f,
        window,
        errors: trial_errors(avg, source, &window)?,
        cov,
    })
}

/// Landscape comparison of one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldEvaluation {
    pub source: Source,
    pub f: f64,
    pub error: FieldError,
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(Self {
            mean,
            std: var.sqrt(),
            n,
        })
    }
}

/// One row of the summary: a source at one head frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub source: Source,
    pub f: f64,
    pub eps_x: Option<Stat>,
    pub eps_alpha: Option<Stat>,
    pub eps_beta: Option<Stat>,
    pub eps_pe: Option<Stat>,
    pub eps_grad: Option<Stat>,
    /// Mean x-averaged coefficient of variation of `F_x`, `T_alpha`, `T_beta`.
    pub cov: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

/// Groups evaluations into rows ordered by source and then frequency.
pub fn report_table(trials: &[TrialEvaluation], fields: &[FieldEvaluation]) -> Result<ReportTable> {
    if trials.is_empty() && fields.is_empty() {
        return Err(Error::EmptyInput("evaluations to report"));
    }
    let mut keys: Vec<(Source, f64)> = trials
        .iter()
        .map(|t| (t.source, t.f))
        .chain(fields.iter().map(|f| (f.source, f.f)))
        .collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys.dedup();
    let rows = keys
        .into_iter()
        .map(|(source, f)| {
            let ts: Vec<&TrialEvaluation> = trials.iter().filter(|t| t.source == source && t.f == f).collect();
            let fs: Vec<&FieldEvaluation> = fields.iter().filter(|e| e.source == source && e.f == f).collect();
            let stat = |g: &dyn Fn(&TrialEvaluation) -> f64| Stat::of(&ts.iter().map(|t| g(t)).collect::<Vec<_>>());
            let cov = [0, 1, 2].map(|k| {
                if ts.is_empty() {
                    0.0
                } else {
                    ts.iter().map(|t| t.cov[k]).sum::<f64>() / ts.len() as f64
                }
            });
            ReportRow {
                source,
                f,
                eps_x: stat(&|t| t.errors.x),
                eps_alpha: stat(&|t| t.errors.alpha),
                eps_beta: stat(&|t| t.errors.beta),
                eps_pe: Stat::of(&fs.iter().map(|e| e.error.pe).collect::<Vec<_>>()),
                eps_grad: Stat::of(&fs.iter().map(|e| e.error.grad).collect::<Vec<_>>()),
                cov,
            }
        })
        .collect();
    Ok(ReportTable { rows })
}

impl ReportTable {
    pub const CSV_HEADER: &'static str = "source,f_hz,eps_x_mean,eps_x_std,eps_alpha_mean,eps_alpha_std,eps_beta_mean,eps_beta_std,eps_pe_mean,eps_pe_std,eps_grad_mean,eps_grad_std,n_trials,cov_fx,cov_t_alpha,cov_t_beta";

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{}", Self::CSV_HEADER)?;
        let cell = |s: &Option<Stat>| match s {
            Some(s) => format!("{},{}", s.mean, s.std),
            None => "nan,nan".to_string(),
        };
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.source.as_str(),
                r.f,
                cell(&r.eps_x),
                cell(&r.eps_alpha),
                cell(&r.eps_beta),
                cell(&r.eps_pe),
                cell(&r.eps_grad),
                r.eps_x.map_or(0, |s| s.n),
                r.cov[0],
                r.cov[1],
                r.cov[2]
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text rendering with `mean ± std` cells.
    pub fn render(&self) -> String {
        let cell = |s: &Option<Stat>| match s {
            Some(s) => format!("{:.2}% ± {:.2}%", s.mean, s.std),
            None => "-".to_string(),
        };
        let mut out = format!(
            "{:<7} {:>5} {:>18} {:>18} {:>18} {:>18} {:>18}\n",
            "source", "f", "eps_x", "eps_alpha", "eps_beta", "eps_PE", "eps_grad"
        );
        for r in &self.rows {
            out += &format!(
                "{:<7} {:>5} {:>18} {:>18} {:>18} {:>18} {:>18}\n",
                r.source.as_str(),
                r.f,
                cell(&r.eps_x),
                cell(&r.eps_alpha),
                cell(&r.eps_beta),
                cell(&r.eps_pe),
                cell(&r.eps_grad)
            );
        }
        out
    }
}
