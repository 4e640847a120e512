//! Zero-phase low-pass filtering of trial channels and averaging of repeated
//! trials on a common x grid.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::simulate::{TrialConfig, TrialRecord};

/// Filter order used for all force and torque channels.
pub const FILTER_ORDER: usize = 6;

/// Sampling rate of trial records (Hz).
pub const SAMPLE_RATE: f64 = 50.0;

/// One second-order section, `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Complex response at normalized angular frequency `w` (rad/sample),
    /// returned as `(re, im)`.
    pub fn response(&self, w: f64) -> (f64, f64) {
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (
            self.b[0] + self.b[1] * z1.0 + self.b[2] * z2.0,
            self.b[1] * z1.1 + self.b[2] * z2.1,
        );
        let den = (1.0 + self.a[0] * z1.0 + self.a[1] * z2.0, self.a[0] * z1.1 + self.a[1] * z2.1);
        let d = den.0 * den.0 + den.1 * den.1;
        ((num.0 * den.0 + num.1 * den.1) / d, (num.1 * den.0 - num.0 * den.1) / d)
    }
}

/// Digital Butterworth low-pass as a cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    pub sections: Vec<Biquad>,
    pub order: usize,
}

impl Butterworth {
    /// Bilinear-transform design with the cutoff prewarped, so the -3 dB
    /// point lands exactly on `cutoff`.
    pub fn lowpass(order: usize, cutoff: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(invalid("filter.order", "must be at least 1"));
        }
        if !(cutoff > 0.0 && cutoff < fs / 2.0) {
            return Err(invalid("filter.cutoff", format!("{cutoff} Hz is outside (0, {}) Hz", fs / 2.0)));
        }
        let k = (std::f64::consts::PI * cutoff / fs).tan();
        let k2 = k * k;
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for i in 0..order / 2 {
            // Analog pole pair with real part -sin(theta).
            let theta = std::f64::consts::PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let c = 2.0 * theta.sin();
            let d0 = 1.0 + c * k + k2;
            sections.push(Biquad {
                b: [k2 / d0, 2.0 * k2 / d0, k2 / d0],
                a: [2.0 * (k2 - 1.0) / d0, (1.0 - c * k + k2) / d0],
            });
        }
        if order % 2 == 1 {
            let d0 = 1.0 + k;
            sections.push(Biquad {
                b: [k / d0, k / d0, 0.0],
                a: [(k - 1.0) / d0, 0.0],
            });
        }
        Ok(Self { sections, order })
    }

    /// Magnitude response at `freq` (Hz).
    pub fn magnitude(&self, freq: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq / fs;
        self.sections
            .iter()
            .map(|s| {
                let (re, im) = s.response(w);
                re.hypot(im)
            })
            .product()
    }

    // Per-section states that make a constant input pass through unchanged.
    fn steady_state(&self) -> Vec<[f64; 2]> {
        let mut gain = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let y = s.dc_gain();
                let z2 = s.b[2] - s.a[1] * y;
                let z1 = s.b[1] - s.a[0] * y + z2;
                let zi = [z1 * gain, z2 * gain];
                gain *= y;
                zi
            })
            .collect()
    }

    /// Causal filtering in transposed direct form II, starting from the
    /// steady state of a constant input equal to `x[0]`.
    pub fn run(&self, x: &[f64]) -> Vec<f64> {
        let Some(&x0) = x.first() else {
            return Vec::new();
        };
        let mut state: Vec<[f64; 2]> = self.steady_state().into_iter().map(|z| [z[0] * x0, z[1] * x0]).collect();
        x.iter()
            .map(|&v| {
                let mut u = v;
                for (s, z) in self.sections.iter().zip(state.iter_mut()) {
                    let y = s.b[0] * u + z[0];
                    z[0] = s.b[1] * u - s.a[0] * y + z[1];
                    z[1] = s.b[2] * u - s.a[1] * y;
                    u = y;
                }
                u
            })
            .collect()
    }
}

/// Cutoff used for a trial with head frequency `f`: 1.5 Hz for a still or
/// slow head, otherwise three times the oscillation frequency.
pub fn cutoff_for(f: f64) -> f64 {
    (3.0 * f).max(1.5)
}

/// Forward-backward Butterworth filtering. Both ends are padded with an odd
/// reflection of `3 * order` samples.
pub fn zero_phase_filter(series: &[f64], order: usize, cutoff: f64, fs: f64) -> Result<Vec<f64>> {
    let pad = 3 * order;
    if series.len() <= pad {
        return Err(Error::SeriesTooShort { len: series.len(), order });
    }
    let filter = Butterworth::lowpass(order, cutoff, fs)?;
    let n = series.len();
    let (first, last) = (series[0], series[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - series[i]));
    ext.extend_from_slice(series);
    ext.extend((1..=pad).map(|i| 2.0 * last - series[n - 1 - i]));
    let mut y = filter.run(&ext);
    y.reverse();
    let mut y = filter.run(&y);
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

/// Per-sample channels carried from a trial into averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    ThetaL,
    ThetaR,
    Fx,
    TAlpha,
    TBeta,
    NormalFx,
    NormalTAlpha,
    NormalTBeta,
    ModelDx,
    ModelDAlpha,
    ModelDBeta,
    ModelPe,
    GravityAlpha,
    GravityBeta,
}

impl Channel {
    pub const ALL: [Channel; 14] = [
        Channel::ThetaL,
        Channel::ThetaR,
        Channel::Fx,
        Channel::TAlpha,
        Channel::TBeta,
        Channel::NormalFx,
        Channel::NormalTAlpha,
        Channel::NormalTBeta,
        Channel::ModelDx,
        Channel::ModelDAlpha,
        Channel::ModelDBeta,
        Channel::ModelPe,
        Channel::GravityAlpha,
        Channel::GravityBeta,
    ];

    /// Column name, shared with the trial CSV.
    pub fn name(self) -> &'static str {
        match self {
            Channel::ThetaL => "theta_L_deg",
            Channel::ThetaR => "theta_R_deg",
            Channel::Fx => "F_x_N",
            Channel::TAlpha => "T_alpha_Nmm",
            Channel::TBeta => "T_beta_Nmm",
            Channel::NormalFx => "N_x_N",
            Channel::NormalTAlpha => "TN_alpha_Nmm",
            Channel::NormalTBeta => "TN_beta_Nmm",
            Channel::ModelDx => "model_dPE_dx_N",
            Channel::ModelDAlpha => "model_dPE_dalpha_Nmm",
            Channel::ModelDBeta => "model_dPE_dbeta_Nmm",
            Channel::ModelPe => "model_PE_Nmm",
            Channel::GravityAlpha => "grav_F_alpha_Nmm",
            Channel::GravityBeta => "grav_F_beta_Nmm",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Sensed channels go through the low-pass filter. Beam angles, model
    /// references and the analytic gravity terms are left as they are.
    pub fn is_sensed(self) -> bool {
        matches!(
            self,
            Channel::Fx | Channel::TAlpha | Channel::TBeta | Channel::NormalFx | Channel::NormalTAlpha | Channel::NormalTBeta
        )
    }
}

/// Which force estimate feeds a comparison or a reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Full sensed contact force.
    Raw,
    /// Sensed force projected on the reported contact normal.
    Normal,
    /// Model reference, `-dPE/dq` minus the gravity term.
    Model,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Raw, Source::Normal, Source::Model];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Raw => "raw",
            Source::Normal => "normal",
            Source::Model => "model",
        }
    }

    /// Sensed `(F_x, T_alpha, T_beta)` channels, or `None` for the model.
    pub fn sensed_channels(self) -> Option<[Channel; 3]> {
        match self {
            Source::Raw => Some([Channel::Fx, Channel::TAlpha, Channel::TBeta]),
            Source::Normal => Some([Channel::NormalFx, Channel::NormalTAlpha, Channel::NormalTBeta]),
            Source::Model => None,
        }
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Source::Raw),
            "normal" => Ok(Source::Normal),
            "model" => Ok(Source::Model),
            _ => Err(invalid("source", format!("`{s}` is not one of raw, normal, model"))),
        }
    }
}

impl AveragedTrial {
    /// Contact force and torques `(F_x, T_alpha, T_beta)` at grid point `i`
    /// from the given source. For the model this is the beam share of the
    /// negative gradient, `-dPE/dq - F_G,q`.
    pub fn contact_load(&self, source: Source, i: usize) -> [f64; 3] {
        match source.sensed_channels() {
            Some(ch) => ch.map(|c| self.mean(c)[i]),
            None => {
                let g = [0.0, self.mean(Channel::GravityAlpha)[i], self.mean(Channel::GravityBeta)[i]];
                let d = [Channel::ModelDx, Channel::ModelDAlpha, Channel::ModelDBeta].map(|c| self.mean(c)[i]);
                [-d[0] - g[0], -d[1] - g[1], -d[2] - g[2]]
            }
        }
    }
}

/// Nominal configuration shared by repeated trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nominal {
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub f: f64,
}

impl Nominal {
    pub fn of(config: &TrialConfig) -> Self {
        Self {
            alpha_deg: config.alpha_deg,
            beta_deg: config.beta_deg,
            f: config.f,
        }
    }

    /// File stem encoding the configuration, e.g. `a10_b-25_f0.5`.
    pub fn stem(&self) -> String {
        format!("a{}_b{}_f{}", self.alpha_deg, self.beta_deg, self.f)
    }
}

/// A trial reduced to its x positions and channel values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSeries {
    pub nominal: Nominal,
    pub x: Vec<f64>,
    /// Indexed by [`Channel::index`].
    pub channels: Vec<Vec<f64>>,
}

impl TrialSeries {
    pub fn from_record(rec: &TrialRecord) -> Self {
        let mut channels = vec![Vec::with_capacity(rec.samples.len()); Channel::ALL.len()];
        for s in &rec.samples {
            let values = [
                s.theta[0].to_degrees(),
                s.theta[1].to_degrees(),
                s.raw.fx,
                s.raw.t_alpha,
                s.raw.t_beta,
                s.normal.fx,
                s.normal.t_alpha,
                s.normal.t_beta,
                s.model_gradient[0],
                s.model_gradient[1],
                s.model_gradient[2],
                s.model_pe,
                s.gravity[1],
                s.gravity[2],
            ];
            for (c, v) in channels.iter_mut().zip(values) {
                c.push(v);
            }
        }
        Self {
            nominal: Nominal::of(&rec.config),
            x: rec.samples.iter().map(|s| s.pose.x).collect(),
            channels,
        }
    }

    /// Reads a trial CSV. The nominal configuration comes from the JSON
    /// sidecar next to it.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let sidecar = path.with_extension("json");
        let text = std::fs::read_to_string(&sidecar).map_err(|_| Error::MissingArtifact(sidecar.clone()))?;
        let side: serde_json::Value = serde_json::from_str(&text)?;
        let config: TrialConfig = serde_json::from_value(side["config"].clone())?;
        let table = read_table(path)?;
        let x = table.column("x_mm")?;
        let channels = Channel::ALL
            .iter()
            .map(|c| table.column(c.name()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nominal: Nominal::of(&config),
            x,
            channels,
        })
    }

    pub fn channel(&self, c: Channel) -> &[f64] {
        &self.channels[c.index()]
    }

    /// Low-passes every sensed channel at the cutoff for this trial's head
    /// frequency.
    pub fn filtered(&self) -> Result<Self> {
        let cutoff = cutoff_for(self.nominal.f);
        let mut out = self.clone();
        for c in Channel::ALL.into_iter().filter(|c| c.is_sensed()) {
            out.channels[c.index()] = zero_phase_filter(self.channel(c), FILTER_ORDER, cutoff, SAMPLE_RATE)?;
        }
        Ok(out)
    }
}

/// The averaging grid: -100..=200 mm in 1 mm steps.
pub fn averaging_grid() -> Vec<f64> {
    (0..=300).map(|i| -100.0 + i as f64).collect()
}

/// Linear interpolation of `(xs, ys)` at `x`; `None` outside the samples.
/// `xs` must be non-decreasing.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let n = xs.len();
    if n == 0 || x < xs[0] || x > xs[n - 1] {
        return None;
    }
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return Some(ys[0]);
    }
    if i == n {
        return Some(ys[n - 1]);
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    let w = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
    Some(ys[i - 1] + w * (ys[i] - ys[i - 1]))
}

/// Mean and standard deviation of a channel over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Repetitions of one configuration, resampled onto the x grid and averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedTrial {
    pub nominal: Nominal,
    pub x: Vec<f64>,
    /// Indexed by [`Channel::index`].
    pub channels: Vec<ChannelStats>,
    /// Grid points some repetition does not cover. Their values are NaN.
    pub missing: Vec<bool>,
    pub repetitions: usize,
}

impl AveragedTrial {
    pub fn mean(&self, c: Channel) -> &[f64] {
        &self.channels[c.index()].mean
    }

    pub fn std(&self, c: Channel) -> &[f64] {
        &self.channels[c.index()].std
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["x_mm".to_string(), "alpha_deg".into(), "beta_deg".into(), "f_hz".into(), "repetitions".into()];
        for c in Channel::ALL {
            header.push(c.name().to_string());
            header.push(format!("{}_std", c.name()));
        }
        header.push("missing".into());
        writeln!(w, "{}", header.join(","))?;
        let n = &self.nominal;
        for (i, x) in self.x.iter().enumerate() {
            write!(w, "{x},{},{},{},{}", n.alpha_deg, n.beta_deg, n.f, self.repetitions)?;
            for s in &self.channels {
                write!(w, ",{},{}", s.mean[i], s.std[i])?;
            }
            writeln!(w, ",{}", u8::from(self.missing[i]))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = read_table(path)?;
        let first = |name: &str| -> Result<f64> {
            table
                .column(name)?
                .first()
                .copied()
                .ok_or_else(|| table.malformed("no data rows".into()))
        };
        let nominal = Nominal {
            alpha_deg: first("alpha_deg")?,
            beta_deg: first("beta_deg")?,
            f: first("f_hz")?,
        };
        let repetitions = first("repetitions")? as usize;
        let channels = Channel::ALL
            .iter()
            .map(|c| {
                Ok(ChannelStats {
                    mean: table.column(c.name())?,
                    std: table.column(&format!("{}_std", c.name()))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nominal,
            x: table.column("x_mm")?,
            channels,
            missing: table.column("missing")?.into_iter().map(|v| v != 0.0).collect(),
            repetitions,
        })
    }
}

/// Resamples each trial onto `grid` and takes the pointwise mean and sample
/// standard deviation. A grid point outside any trial's x range is flagged
/// missing rather than extrapolated.
pub fn resample_average(trials: &[TrialSeries], grid: &[f64]) -> Result<AveragedTrial> {
    let first = trials.first().ok_or(Error::EmptyInput("trials to average"))?;
    let nominal = first.nominal;
    if let Some(t) = trials.iter().find(|t| t.nominal != nominal) {
        return Err(invalid(
            "trials",
            format!("mixed configurations {} and {}", nominal.stem(), t.nominal.stem()),
        ));
    }
    let n = trials.len() as f64;
    let mut missing = vec![false; grid.len()];
    let mut channels = Vec::with_capacity(Channel::ALL.len());
    for c in Channel::ALL {
        let mut mean = vec![f64::NAN; grid.len()];
        let mut std = vec![f64::NAN; grid.len()];
        for (i, &x) in grid.iter().enumerate() {
            let values: Option<Vec<f64>> = trials.iter().map(|t| interpolate(&t.x, t.channel(c), x)).collect();
            let Some(values) = values else {
                missing[i] = true;
                continue;
            };
            // Shifted by the first value so identical repetitions average
            // to exactly that value.
            let m = values[0] + values.iter().map(|v| v - values[0]).sum::<f64>() / n;
            let var = if values.len() > 1 {
                values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            mean[i] = m;
            std[i] = var.sqrt();
        }
        channels.push(ChannelStats { mean, std });
    }
    Ok(AveragedTrial {
        nominal,
        x: grid.to_vec(),
        channels,
        missing,
        repetitions: trials.len(),
    })
}

/// Filters and averages repetitions grouped by nominal configuration, in
/// order of first appearance.
pub fn average_groups(trials: &[TrialSeries]) -> Result<Vec<AveragedTrial>> {
    let mut groups: Vec<(Nominal, Vec<TrialSeries>)> = Vec::new();
    for t in trials {
        let f = t.filtered()?;
        match groups.iter_mut().find(|(n, _)| *n == t.nominal) {
            Some((_, g)) => g.push(f),
            None => groups.push((t.nominal, vec![f])),
        }
    }
    let grid = averaging_grid();
    groups.iter().map(|(_, g)| resample_average(g, &grid)).collect()
}

/// A CSV file held as named numeric columns.
pub(crate) struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    path: PathBuf,
}

impl Table {
    pub fn index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| self.malformed(format!("no column {name}")))
    }

    pub fn malformed(&self, message: String) -> Error {
        Error::Malformed {
            path: self.path.clone(),
            message,
        }
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row.get(i)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| self.malformed(format!("line {}: bad value in column {name}", r + 2)))
            })
            .collect()
    }
}

pub(crate) fn read_table(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h?.split(',').map(|s| s.trim().to_string()).collect(),
        None => {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                message: "empty file".into(),
            })
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    Ok(Table {
        header,
        rows,
        path: path.to_path_buf(),
    })
}
