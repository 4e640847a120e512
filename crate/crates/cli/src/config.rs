//! Run configuration: one JSON document, layered over a named preset.

use std::collections::BTreeMap;
use std::path::Path;

use pel::geometry::{BodyParams, ShellParams};
use pel::landscape::{BeamParams, GridAxes, Protocol, RigidSearch, Scene};
use pel::reconstruct::HhdConfig;
use pel::signal::Source;
use pel::simulate::SweepPlan;
use pel::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Five repetitions, k = 2000 centers, the full comparison grid.
    #[default]
    Full,
    /// One repetition, k = 500 centers, a coarser comparison grid.
    Desk,
}

/// `[start, end, step]`.
pub type Range = [f64; 3];

/// Comparison grid; angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x: Range,
    pub alpha_deg: Range,
    pub beta_deg: Range,
}

impl GridSpec {
    pub fn axes(&self) -> Result<GridAxes> {
        let t = |r: Range| (r[0], r[1], r[2]);
        GridAxes::from_ranges(t(self.x), t(self.alpha_deg), t(self.beta_deg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionSettings {
    pub hhd: HhdConfig,
    pub sources: Vec<Source>,
    /// Range of x (mm) whose samples enter the fit.
    pub x_range: [f64; 2],
    /// Fraction of samples kept after random deletion; 1 keeps all.
    pub keep: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub shell: ShellParams,
    pub beams: BeamParams,
    pub body: BodyParams,
    /// Trial plan; its template carries friction, noise and the start pose.
    pub sweep: SweepPlan,
    pub grid: GridSpec,
    pub rigid: RigidSearch,
    pub reconstruction: ReconstructionSettings,
    /// Defaults in effect that are assumptions rather than measured values.
    /// Rebuilt on every load; entries written by hand are discarded.
    #[serde(default)]
    pub assumptions: BTreeMap<String, String>,
}

/// Paths of assumed defaults and why they are assumed.
const ASSUMED: &[(&str, &str)] = &[
    ("/shell/semi_length", "shell dimensions are not published; semi-axes chosen to span the beam gap"),
    ("/shell/semi_width", "shell dimensions are not published; semi-axes chosen to span the beam gap"),
    ("/shell/height", "shell dimensions are not published; semi-axes chosen to span the beam gap"),
    ("/shell/resolution", "mesh resolution is a numerical choice"),
    ("/shell/max_cell_radius", "touch cells sized to the 25 mm position resolution"),
    ("/shell/max_cell_normal_spread_deg", "touch cells sized to the 5 deg normal resolution"),
    ("/body/gravity", "standard gravity"),
    ("/sweep/template/mu", "shell-plate friction coefficient is not reported"),
    ("/sweep/template/noise/force_sigma", "sensor noise level is not reported"),
    ("/sweep/template/noise/quantize", "contact position snaps to the touch-cell center"),
    ("/sweep/template/torque_axes", "torques projected on the body axes"),
    ("/sweep/master_seed", "seed of the trial plan"),
    ("/grid", "comparison grid spacing is not reported"),
    ("/rigid/tolerance", "rigid-beam height search tolerance"),
    ("/rigid/max_lift", "rigid-beam height search range"),
    ("/reconstruction/hhd/sigma", "kernel width is not reported"),
    ("/reconstruction/hhd/ridge", "regularization is not reported"),
    ("/reconstruction/hhd/curl_weight", "extra solenoidal ridge resolving the harmonic ambiguity"),
    ("/reconstruction/hhd/seed", "k-means seed"),
];

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = Self::bare(preset);
        cfg.assumptions = cfg.collect_assumptions();
        cfg
    }

    fn bare(preset: Preset) -> Self {
        let mut cfg = Self {
            preset,
            shell: ShellParams::default(),
            beams: BeamParams::default(),
            body: BodyParams::default(),
            sweep: SweepPlan::default(),
            grid: GridSpec {
                x: [-100.0, 100.0, 5.0],
                alpha_deg: [0.0, 40.0, 2.5],
                beta_deg: [-40.0, -10.0, 2.5],
            },
            rigid: RigidSearch::default(),
            reconstruction: ReconstructionSettings {
                hhd: HhdConfig {
                    k: 2000,
                    ..HhdConfig::default()
                },
                sources: Source::ALL.to_vec(),
                x_range: [-100.0, 100.0],
                keep: 1.0,
            },
            assumptions: BTreeMap::new(),
        };
        if preset == Preset::Desk {
            cfg.sweep.repetitions = 1;
            cfg.reconstruction.hhd.k = 500;
            cfg.grid = GridSpec {
                x: [-100.0, 100.0, 10.0],
                alpha_deg: [0.0, 40.0, 5.0],
                beta_deg: [-40.0, -10.0, 5.0],
            };
        }
        cfg
    }

    /// Parses a config document. A missing `preset` means the full preset;
    /// every other field overrides the preset value.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| config_error("", e.to_string()))?;
        let Value::Object(map) = &user else {
            return Err(config_error("", "top level must be an object"));
        };
        let preset = match map.get("preset") {
            None => Preset::Full,
            Some(p) => Preset::deserialize(p).map_err(|e| config_error("preset", e.to_string()))?,
        };
        let mut merged = serde_json::to_value(Self::preset(preset))?;
        merge(&mut merged, user);
        let mut cfg: Self = serde_path_to_error::deserialize(merged)
            .map_err(|e| config_error(&e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        cfg.assumptions = cfg.collect_assumptions();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => e.into(),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = || -> Result<()> {
            self.shell.validate()?;
            self.beams.beams()?;
            self.body.validate()?;
            self.sweep.validate()?;
            self.grid.axes()?;
            self.reconstruction.hhd.sigma.resolve(&[[0.0; 3], [1.0, 0.0, 0.0]])?;
            Ok(())
        };
        checks().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => match name.strip_prefix("trial.") {
                Some(rest) => config_error(&format!("sweep.template.{rest}"), reason),
                None => config_error(name, reason),
            },
            Error::AxisMismatch(m) => config_error("grid", m),
            other => other,
        })?;
        let r = &self.reconstruction;
        if r.hhd.k == 0 {
            return Err(config_error("reconstruction.hhd.k", "must be >= 1"));
        }
        if !(r.hhd.ridge > 0.0) || !(r.hhd.curl_weight > 0.0) {
            return Err(config_error("reconstruction.hhd.ridge", "ridge and curl weight must be > 0"));
        }
        if !(r.keep > 0.0 && r.keep <= 1.0) {
            return Err(config_error("reconstruction.keep", "must lie in (0, 1]"));
        }
        if !(r.x_range[1] > r.x_range[0]) {
            return Err(config_error("reconstruction.x_range", "end must exceed start"));
        }
        if r.sources.is_empty() {
            return Err(config_error("reconstruction.sources", "at least one source is required"));
        }
        Ok(())
    }

    /// Applies the command-line seed to the trial plan and the clustering.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sweep.master_seed = seed;
        self.reconstruction.hhd.seed = seed;
        self.assumptions = self.collect_assumptions();
        self
    }

    /// Lab-frame traverse coordinates shared by the sweep and the grids.
    pub fn protocol(&self) -> Protocol {
        let s = &self.sweep.template.start;
        Protocol {
            y: s.y,
            z: s.z,
            gamma: s.gamma_deg.to_radians(),
        }
    }

    pub fn scene(&self) -> Result<Scene> {
        Scene::build(&self.shell, &self.beams, self.body, self.sweep.template.start.z)
    }

    /// Assumed defaults still in effect, keyed by JSON pointer.
    fn collect_assumptions(&self) -> BTreeMap<String, String> {
        let base = serde_json::to_value(Self::bare(self.preset)).expect("config serializes");
        let this = serde_json::to_value(Self {
            assumptions: BTreeMap::new(),
            ..self.clone()
        })
        .expect("config serializes");
        ASSUMED
            .iter()
            .filter_map(|(ptr, why)| {
                let v = this.pointer(ptr)?;
                (Some(v) == base.pointer(ptr)).then(|| (ptr.to_string(), format!("{v}: {why}")))
            })
            .collect()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: if path.is_empty() { ".".into() } else { path.into() },
        message: message.into(),
    }
}

// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
