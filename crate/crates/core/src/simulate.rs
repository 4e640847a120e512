//! Quasi-static traverse simulator.
//!
//! The body moves forward at constant speed with a prescribed orientation.
//! Every sample re-solves both beam deflections, converts each contact into a
//! normal force from the massless-plate torque balance, adds Coulomb friction
//! against the relative sliding velocity, and reports what the force and
//! touch sensors would see.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{ContactKind, Dof, Pose, Vec3};
use crate::landscape::{
    gradient_along, gravity_forces, potential_energy, solve_beams, Beam, BeamContact, Scene, GRADIENT_STEP,
};

/// Axes onto which the total torque is projected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TorqueAxes {
    /// Body roll X'', body pitch Y'' and body yaw Z''.
    #[default]
    Body,
    /// Generalized forces conjugate to the Euler angles: X'', the
    /// intermediate pitch axis Y' and the lab vertical.
    Generalized,
}

/// Sensor imperfections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Standard deviation of additive force noise per axis (N).
    pub force_sigma: f64,
    /// Snap contact positions and normals to the owning touch cell.
    pub quantize: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            force_sigma: 0.004,
            quantize: true,
        }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Optional sinusoidal orientation perturbation (body compliance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wobble {
    pub amplitude_deg: f64,
    pub frequency_hz: f64,
}

/// Start of the traverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub gamma_deg: f64,
}

impl Default for StartPose {
    fn default() -> Self {
        Self {
            x: -200.0,
            y: -6.0,
            z: 138.0,
            gamma_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub alpha_deg: f64,
    pub beta_deg: f64,
    /// Head oscillation frequency (Hz).
    pub f: f64,
    /// Peak-to-peak head oscillation (deg).
    pub head_amplitude_deg: f64,
    /// Coulomb friction coefficient between shell and plates.
    pub mu: f64,
    pub noise: NoiseConfig,
    pub seed: u64,
    /// Forward speed (mm/s).
    pub speed: f64,
    /// Travel distance (mm).
    pub travel: f64,
    pub start: StartPose,
    /// Sample rate (Hz).
    pub sample_rate: f64,
    pub torque_axes: TorqueAxes,
    pub wobble: Option<Wobble>,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            alpha_deg: 0.0,
            beta_deg: -20.0,
            f: 0.0,
            head_amplitude_deg: 20.0,
            mu: 0.3,
            noise: NoiseConfig::default(),
            seed: 0,
            speed: 20.0,
            travel: 500.0,
            start: StartPose::default(),
            sample_rate: 50.0,
            torque_axes: TorqueAxes::Body,
            wobble: None,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0) {
            return Err(invalid("trial.speed", "must be > 0"));
        }
        if !(self.f >= 0.0) {
            return Err(invalid("trial.f", "must be >= 0"));
        }
        if !(0.0..1.5).contains(&self.mu) {
            return Err(invalid("trial.mu", "must lie in [0, 1.5)"));
        }
        if !(self.travel > 0.0) || !(self.sample_rate > 0.0) {
            return Err(invalid("trial.travel", "travel and sample rate must be > 0"));
        }
        if self.noise.enabled && !(self.noise.force_sigma >= 0.0) {
            return Err(invalid("trial.noise.force_sigma", "must be >= 0"));
        }
        if !self.alpha_deg.is_finite() || !self.beta_deg.is_finite() {
            return Err(invalid("trial.alpha_deg", "orientation must be finite"));
        }
        Ok(())
    }

    /// Number of samples including the initial one.
    pub fn sample_count(&self) -> usize {
        let duration = self.travel / self.speed;
        (duration * self.sample_rate).round() as usize + 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    fn path_key(&self) -> PathKey {
        PathKey {
            bits: [
                self.alpha_deg.to_bits(),
                self.beta_deg.to_bits(),
                self.speed.to_bits(),
                self.travel.to_bits(),
                self.sample_rate.to_bits(),
                self.start.x.to_bits(),
                self.start.y.to_bits(),
                self.start.z.to_bits(),
                self.start.gamma_deg.to_bits(),
            ],
        }
    }

    /// Pose at sample `i` (without head motion).
    pub fn pose_at(&self, i: usize) -> Pose {
        let t = i as f64 * self.dt();
        let (da, db) = match self.wobble {
            Some(w) => {
                let s = (2.0 * std::f64::consts::PI * w.frequency_hz * t).sin();
                let c = (2.0 * std::f64::consts::PI * w.frequency_hz * t).cos();
                (w.amplitude_deg * s, 0.5 * w.amplitude_deg * c)
            }
            None => (0.0, 0.0),
        };
        Pose::from_degrees(
            self.start.x + self.speed * t,
            self.start.y,
            self.start.z,
            self.alpha_deg + da,
            self.beta_deg + db,
            self.start.gamma_deg,
        )
    }
}

/// Identifies trials that share the same body path (and so the same model reference).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct PathKey {
    bits: [u64; 9],
}

/// Head pitch angle and rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadState {
    /// Head angle (rad).
    pub delta: f64,
    /// Head angular rate (rad/s).
    pub rate: f64,
}

/// `delta(t) = A/2 (1 - cos(2 pi f t + phase))`; a static head when `f = 0`.
pub fn head_angle(t: f64, f: f64, phase: f64, amplitude_deg: f64) -> HeadState {
    if f == 0.0 {
        return HeadState { delta: 0.0, rate: 0.0 };
    }
    let half = 0.5 * amplitude_deg.to_radians();
    let w = 2.0 * std::f64::consts::PI * f;
    let arg = w * t + phase;
    HeadState {
        delta: half * (1.0 - arg.cos()),
        rate: half * w * arg.sin(),
    }
}

/// Velocities needed to resolve sliding at a contact.
#[derive(Debug, Clone, Copy)]
pub struct ContactKinematics {
    /// Lab velocity of the body's geometric center (mm/s).
    pub body_velocity: Vec3,
    /// Body angular velocity in the lab frame (rad/s).
    pub body_omega: Vec3,
    /// Geometric center, which is also the head pivot (mm).
    pub center: Vec3,
    /// Body pitch axis Y'' in the lab frame (head rotation axis).
    pub head_axis: Vec3,
    pub head_rate: f64,
    /// Plate angular rate (rad/s).
    pub theta_rate: f64,
}

/// Force on the robot at one contact and its split.
#[derive(Debug, Clone, Copy)]
pub struct Wrench {
    pub normal_magnitude: f64,
    /// Normal component (N).
    pub normal: Vec3,
    /// Friction component (N).
    pub friction: Vec3,
    /// Total `normal + friction` (N).
    pub force: Vec3,
    /// Tangential relative velocity of the robot surface against the plate (mm/s).
    pub slip: Vec3,
}

/// Contact force from the plate torque balance plus Coulomb friction.
pub fn contact_wrench(beam: &Beam, contact: &BeamContact, kin: &ContactKinematics, mu: f64) -> Result<Wrench> {
    let magnitude = contact.normal_force(beam)?;
    let n = contact.normal;
    let normal = -n * magnitude;
    let p = contact.point;
    let r = p - kin.center;
    let v_body = kin.body_velocity + kin.body_omega.cross(&r) + kin.head_axis.cross(&r) * kin.head_rate;
    let v_beam = Vec3::new(p.z, 0.0, -p.x) * kin.theta_rate;
    let v_rel = v_body - v_beam;
    let slip = v_rel - n * v_rel.dot(&n);
    let speed = slip.norm();
    let friction = if speed < 1e-6 || mu == 0.0 {
        Vec3::zeros()
    } else {
        -slip * (mu * magnitude / speed)
    };
    Ok(Wrench {
        normal_magnitude: magnitude,
        normal,
        friction,
        force: normal + friction,
        slip,
    })
}

/// What the sensors report for one beam contact.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContactSample {
    /// Raw force on the robot, lab frame (N).
    pub force: Vec3,
    /// Reported contact position, lab frame (mm).
    pub position: Vec3,
    /// Reported unit normal, lab frame.
    pub normal: Vec3,
    pub kind: ContactKind,
    pub cell: usize,
    /// Exact contact normal used by the physics.
    pub physics_normal: Vec3,
    /// `(F . n) n` with the reported normal (N).
    pub normal_force: Vec3,
    /// Force arm from the geometric center (mm).
    pub arm: Vec3,
    /// `arm x force` (N mm).
    pub torque: Vec3,
    /// `arm x normal_force` (N mm).
    pub normal_torque: Vec3,
}

/// Per-sample state of one beam.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum BeamSample {
    Free,
    Contact(ContactSample),
    /// Contact whose moment arm was too short to resolve a force.
    Flagged,
}

impl BeamSample {
    pub fn contact(&self) -> Option<&ContactSample> {
        match self {
            BeamSample::Contact(c) => Some(c),
            _ => None,
        }
    }
}

/// Summed force and torque projections `(F_x, T_alpha, T_beta, T_gamma)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Projected {
    pub fx: f64,
    pub t_alpha: f64,
    pub t_beta: f64,
    pub t_gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub pose: Pose,
    /// Head angle (rad).
    pub head: f64,
    pub theta: [f64; 2],
    pub beams: [BeamSample; 2],
    pub raw: Projected,
    pub normal: Projected,
    /// Model reference `(dPE/dx, dPE/dalpha, dPE/dbeta)` at this state.
    pub model_gradient: [f64; 3],
    pub model_pe: f64,
    /// Analytic gravity generalized forces `(0, F_G,alpha, F_G,beta)`.
    pub gravity: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: TrialConfig,
    /// Random head phase actually used (rad).
    pub head_phase: f64,
    pub samples: Vec<Sample>,
}

/// Model landscape values along a body path.
#[derive(Debug, Clone)]
pub struct ModelTrace {
    pub pe: Vec<f64>,
    pub gradient: Vec<[f64; 3]>,
}

/// Evaluates the landscape and its `(x, alpha, beta)` gradient along the path of `config`.
pub fn model_reference(scene: &Scene, config: &TrialConfig) -> Result<ModelTrace> {
    let n = config.sample_count();
    let rows: Vec<Result<(f64, [f64; 3])>> = (0..n)
        .map(|i| {
            let pose = config.pose_at(i);
            let pe = potential_energy(scene, &pose)?.total;
            let g = gradient_along(scene, &pose, &[Dof::X, Dof::Alpha, Dof::Beta], GRADIENT_STEP)?;
            Ok((pe, [g.get(Dof::X), g.get(Dof::Alpha), g.get(Dof::Beta)]))
        })
        .collect();
    let mut trace = ModelTrace {
        pe: Vec::with_capacity(n),
        gradient: Vec::with_capacity(n),
    };
    for row in rows {
        let (pe, g) = row?;
        trace.pe.push(pe);
        trace.gradient.push(g);
    }
    Ok(trace)
}

fn torque_axes(pose: &Pose, axes: TorqueAxes) -> [Vec3; 3] {
    match axes {
        TorqueAxes::Body => [pose.roll_axis(), pose.body_pitch_axis(), pose.yaw_axis()],
        TorqueAxes::Generalized => [pose.roll_axis(), pose.intermediate_pitch_axis(), Vec3::z()],
    }
}

fn project(force: Vec3, torque: Vec3, axes: &[Vec3; 3]) -> Projected {
    Projected {
        fx: force.x,
        t_alpha: torque.dot(&axes[0]),
        t_beta: torque.dot(&axes[1]),
        t_gamma: torque.dot(&axes[2]),
    }
}

// Angular velocity of the body for Z-Y'-X'' angle rates.
fn body_omega(pose: &Pose, rates: [f64; 3]) -> Vec3 {
    pose.roll_axis() * rates[0] + pose.intermediate_pitch_axis() * rates[1] + Vec3::z() * rates[2]
}

/// Simulates one traverse. `reference` may supply a precomputed model trace
/// for the same path; otherwise it is computed here.
pub fn run_trial(config: &TrialConfig, scene: &Scene, reference: Option<&ModelTrace>) -> Result<TrialRecord> {
    config.validate()?;
    let n = config.sample_count();
    let owned;
    let trace = match reference {
        Some(r) if r.pe.len() == n => r,
        Some(r) => {
            return Err(invalid(
                "trial.reference",
                format!("model trace has {} samples, trial needs {n}", r.pe.len()),
            ))
        }
        None => {
            owned = model_reference(scene, config)?;
            &owned
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let head_phase = if config.f > 0.0 {
        rng.gen_range(0.0..2.0 * std::f64::consts::PI)
    } else {
        0.0
    };
    let noise = if config.noise.enabled && config.noise.force_sigma > 0.0 {
        Some(Normal::new(0.0, config.noise.force_sigma).map_err(|e| invalid("trial.noise.force_sigma", e.to_string()))?)
    } else {
        None
    };
    let dt = config.dt();
    let mut samples = Vec::with_capacity(n);
    let mut prev_theta = [0.0; 2];
    let mut prev_pose = config.pose_at(0);
    for i in 0..n {
        let t = i as f64 * dt;
        let pose = config.pose_at(i);
        let head = head_angle(t, config.f, head_phase, config.head_amplitude_deg);
        let contacts = solve_beams(scene, &pose)?;
        let theta = contacts.map(|c| c.map_or(0.0, |c| c.theta));
        let rates = if i == 0 {
            [0.0; 3]
        } else {
            [
                (pose.alpha - prev_pose.alpha) / dt,
                (pose.beta - prev_pose.beta) / dt,
                (pose.gamma - prev_pose.gamma) / dt,
            ]
        };
        let center = pose.position();
        let axes = torque_axes(&pose, config.torque_axes);
        let rot = pose.rotation();
        let mut beams = [BeamSample::Free; 2];
        let (mut f_raw, mut t_raw, mut f_nrm, mut t_nrm) = (Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), Vec3::zeros());
        for (b, contact) in contacts.iter().enumerate() {
            let Some(contact) = contact else { continue };
            let kin = ContactKinematics {
                body_velocity: Vec3::new(config.speed, 0.0, 0.0),
                body_omega: body_omega(&pose, rates),
                center,
                head_axis: pose.body_pitch_axis(),
                head_rate: head.rate,
                theta_rate: if i == 0 { 0.0 } else { (theta[b] - prev_theta[b]) / dt },
            };
            let wrench = match contact_wrench(&scene.beams[b], contact, &kin, config.mu) {
                Ok(w) => w,
                Err(Error::IllConditionedContact { .. }) => {
                    beams[b] = BeamSample::Flagged;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut force = wrench.force;
            if let Some(dist) = &noise {
                force += Vec3::new(dist.sample(&mut rng), dist.sample(&mut rng), dist.sample(&mut rng));
            }
            let (position, normal) = if config.noise.enabled && config.noise.quantize {
                let cell = &scene.mesh.cells[contact.hit.cell];
                (rot * cell.center + center, rot * cell.normal)
            } else {
                (contact.point, contact.normal)
            };
            let normal_force = normal * force.dot(&normal);
            let arm = position - center;
            let sample = ContactSample {
                force,
                position,
                normal,
                kind: contact.hit.kind,
                cell: contact.hit.cell,
                physics_normal: contact.normal,
                normal_force,
                arm,
                torque: arm.cross(&force),
                normal_torque: arm.cross(&normal_force),
            };
            f_raw += sample.force;
            t_raw += sample.torque;
            f_nrm += sample.normal_force;
            t_nrm += sample.normal_torque;
            beams[b] = BeamSample::Contact(sample);
        }
        let g = gravity_forces(&scene.body, pose.alpha, pose.beta);
        samples.push(Sample {
            t,
            pose,
            head: head.delta,
            theta,
            beams,
            raw: project(f_raw, t_raw, &axes),
            normal: project(f_nrm, t_nrm, &axes),
            model_gradient: trace.gradient[i],
            model_pe: trace.pe[i],
            gravity: g,
        });
        prev_theta = theta;
        prev_pose = pose;
    }
    Ok(TrialRecord {
        config: config.clone(),
        head_phase,
        samples,
    })
}

/// SplitMix64 step, used to derive per-trial seeds from a master seed.
pub fn splitmix64(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Systematic trial plan: every combination of frequency, roll, pitch and repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepPlan {
    pub alphas_deg: Vec<f64>,
    pub betas_deg: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub repetitions: usize,
    pub master_seed: u64,
    /// Settings shared by every trial (orientation, f and seed are overwritten).
    pub template: TrialConfig,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            alphas_deg: (0..=8).map(|i| 5.0 * i as f64).collect(),
            betas_deg: (0..7).map(|i| -10.0 - 5.0 * i as f64).collect(),
            frequencies: vec![0.0, 0.5, 1.0, 2.0],
            repetitions: 5,
            master_seed: 0,
            template: TrialConfig::default(),
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.alphas_deg.is_empty() || self.betas_deg.is_empty() || self.frequencies.is_empty() {
            return Err(Error::EmptyInput("sweep plan axes"));
        }
        if self.repetitions == 0 {
            return Err(invalid("sweep.repetitions", "must be >= 1"));
        }
        self.template.validate()
    }

    /// Trial configs in plan order (f, alpha, beta, repetition).
    pub fn trials(&self) -> Vec<TrialConfig> {
        let mut out = Vec::new();
        for &f in &self.frequencies {
            for &a in &self.alphas_deg {
                for &b in &self.betas_deg {
                    for _ in 0..self.repetitions {
                        let index = out.len() as u64;
                        out.push(TrialConfig {
                            alpha_deg: a,
                            beta_deg: b,
                            f,
                            seed: splitmix64(self.master_seed, index),
                            ..self.template.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

/// A trial that could not be completed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbortedTrial {
    pub index: usize,
    pub config: TrialConfig,
    pub reason: String,
}

/// Outcome of one planned trial.
pub type TrialOutcome = std::result::Result<TrialRecord, AbortedTrial>;

/// Runs trial `i` of `trials` for every `i`, sharing model references between
/// trials on the same path. Results come back in plan order.
pub fn run_trials(scene: &Scene, trials: &[TrialConfig]) -> Vec<TrialOutcome> {
    let mut keys: Vec<PathKey> = Vec::new();
    let mut first: HashMap<PathKey, usize> = HashMap::new();
    for (i, t) in trials.iter().enumerate() {
        let k = if t.wobble.is_some() { None } else { Some(t.path_key()) };
        if let Some(k) = k {
            if !first.contains_key(&k) {
                first.insert(k, i);
                keys.push(k);
            }
        }
    }
    let traces: HashMap<PathKey, std::result::Result<ModelTrace, String>> = keys
        .par_iter()
        .map(|k| (*k, model_reference(scene, &trials[first[k]]).map_err(|e| e.to_string())))
        .collect();
    trials
        .par_iter()
        .enumerate()
        .map(|(index, config)| {
            let abort = |reason: String| AbortedTrial {
                index,
                config: config.clone(),
                reason,
            };
            let trace = if config.wobble.is_some() {
                None
            } else {
                match &traces[&config.path_key()] {
                    Ok(t) => Some(t),
                    Err(e) => return Err(abort(e.clone())),
                }
            };
            run_trial(config, scene, trace).map_err(|e| abort(e.to_string()))
        })
        .collect()
}

/// Runs the whole plan; aborted trials are reported and the sweep carries on.
pub fn sweep(plan: &SweepPlan, scene: &Scene) -> Result<Vec<TrialOutcome>> {
    plan.validate()?;
    Ok(run_trials(scene, &plan.trials()))
}

fn kind_label(b: &BeamSample) -> &'static str {
    match b {
        BeamSample::Free => "none",
        BeamSample::Flagged => "flagged",
        BeamSample::Contact(c) => c.kind.as_str(),
    }
}

/// Column names of the trial CSV.
pub fn trial_csv_header() -> String {
    let mut cols: Vec<String> = [
        "t_s", "x_mm", "y_mm", "z_mm", "alpha_deg", "beta_deg", "gamma_deg", "head_deg", "theta_L_deg", "theta_R_deg",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for side in ["L", "R"] {
        for c in ["Fx_N", "Fy_N", "Fz_N", "px_mm", "py_mm", "pz_mm", "nx", "ny", "nz", "contact_type"] {
            cols.push(format!("{side}_{c}"));
        }
    }
    for c in [
        "F_x_N",
        "T_alpha_Nmm",
        "T_beta_Nmm",
        "T_gamma_Nmm",
        "N_x_N",
        "TN_alpha_Nmm",
        "TN_beta_Nmm",
        "TN_gamma_Nmm",
        "model_dPE_dx_N",
        "model_dPE_dalpha_Nmm",
        "model_dPE_dbeta_Nmm",
        "model_PE_Nmm",
        "grav_F_alpha_Nmm",
        "grav_F_beta_Nmm",
    ] {
        cols.push(c.to_string());
    }
    cols.join(",")
}

impl TrialRecord {
    /// Writes one CSV row per sample.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{}", trial_csv_header())?;
        for s in &self.samples {
            let p = &s.pose;
            write!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                s.t,
                p.x,
                p.y,
                p.z,
                p.alpha.to_degrees(),
                p.beta.to_degrees(),
                p.gamma.to_degrees(),
                s.head.to_degrees(),
                s.theta[0].to_degrees(),
                s.theta[1].to_degrees()
            )?;
            for b in &s.beams {
                match b.contact() {
                    Some(c) => write!(
                        w,
                        ",{},{},{},{},{},{},{},{},{},{}",
                        c.force.x,
                        c.force.y,
                        c.force.z,
                        c.position.x,
                        c.position.y,
                        c.position.z,
                        c.normal.x,
                        c.normal.y,
                        c.normal.z,
                        kind_label(b)
                    )?,
                    None => write!(w, ",0,0,0,nan,nan,nan,nan,nan,nan,{}", kind_label(b))?,
                }
            }
            let (r, n, g) = (&s.raw, &s.normal, &s.model_gradient);
            writeln!(
                w,
                ",{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.fx,
                r.t_alpha,
                r.t_beta,
                r.t_gamma,
                n.fx,
                n.t_alpha,
                n.t_beta,
                n.t_gamma,
                g[0],
                g[1],
                g[2],
                s.model_pe,
                s.gravity[1],
                s.gravity[2]
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the sidecar JSON with the full trial configuration and seed.
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            config: &'a TrialConfig,
            seed: u64,
            head_phase_rad: f64,
            samples: usize,
        }
        let side = Sidecar {
            config: &self.config,
            seed: self.config.seed,
            head_phase_rad: self.head_phase,
            samples: self.samples.len(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    /// Samples with at least one resolved contact.
    pub fn in_contact(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.beams.iter().any(|b| b.contact().is_some()))
    }
}
