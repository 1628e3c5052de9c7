//! Run configuration.
//!
//! One JSON file; every section is optional and unknown keys are rejected.
//! Precedence, lowest first: built-in defaults, the config file, command-line
//! flags.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hvsg_core::bell::{BipartiteState, Dichotomizer};
use hvsg_core::eigenbasis::{AngularLadder, AngularState};
use hvsg_core::measurement::Method;
use hvsg_core::microdynamics::FluctuationScales;
use hvsg_core::packets::SternGerlachSetup;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Fluct,
    Born,
    Traj,
    Bell,
    Oracle,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Fluct => "fluct",
            Experiment::Born => "born",
            Experiment::Traj => "traj",
            Experiment::Bell => "bell",
            Experiment::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluctConfig {
    pub samples: usize,
    pub gamma: f64,
    /// Stationary increments of the two subsystems in the separability run.
    pub increments: (f64, f64),
    pub mi_bins: usize,
    pub scales: FluctuationScales,
    pub duration: f64,
    pub identity_step: f64,
}

impl Default for FluctConfig {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            gamma: 1.0,
            increments: (0.3, -1.2),
            mi_bins: 16,
            scales: FluctuationScales::default(),
            duration: 10.0,
            identity_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BornConfig {
    pub axes: Vec<[f64; 3]>,
    pub sizes: Vec<usize>,
    pub method: Method,
    /// Also write the outcome ensemble of the first sweep point.
    pub dump_outcomes: bool,
}

impl Default for BornConfig {
    fn default() -> Self {
        Self {
            axes: vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
            sizes: vec![1000, 100_000],
            method: Method::StaticSampling,
            dump_outcomes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajConfig {
    pub samples: usize,
    pub tol: f64,
    pub velocity_scale: f64,
    pub node_eps: f64,
    /// Number of full paths written out.
    pub paths: usize,
}

impl Default for TrajConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            tol: 1e-8,
            velocity_scale: 1.0,
            node_eps: 1e-8,
            paths: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BellConfig {
    pub state: BipartiteState,
    pub samples: usize,
    /// Wing-2 polar angles of the E(theta) sweep; wing 1 stays along z.
    pub thetas: Vec<f64>,
    /// Polar angles of a, a', b, b' in the x-z plane.
    pub chsh_angles: [f64; 4],
    pub dichotomizer: Dichotomizer,
    pub tv_points: usize,
    /// Also write the joint outcomes for (a, b).
    pub dump_joint: bool,
}

impl Default for BellConfig {
    fn default() -> Self {
        Self {
            state: BipartiteState::singlet(),
            samples: 100_000,
            thetas: (0..=12).map(|k| k as f64 * PI / 12.0).collect(),
            chsh_angles: [0.0, FRAC_PI_2, FRAC_PI_4, 3.0 * FRAC_PI_4],
            dichotomizer: Dichotomizer::default(),
            tv_points: 400,
            dump_joint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub js: Vec<f64>,
    pub grid_points: usize,
    pub span: (f64, f64),
    pub steps: usize,
    pub l2_max: f64,
    /// Coarse and fine finite-difference steps.
    pub madelung_steps: (f64, f64),
    pub madelung_time: f64,
    pub madelung_max: f64,
    /// Write the grid-propagated field of the last `j` as CSV and SGWAVE01.
    pub dump_field: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            js: vec![0.5, 1.0, 1.5, 2.0],
            grid_points: 4096,
            span: (-160.0, 160.0),
            steps: 400,
            l2_max: 1e-6,
            madelung_steps: (2e-3, 1e-3),
            madelung_time: 1.0,
            madelung_max: 1e-4,
            dump_field: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for artifacts; standard output when absent.
    pub dir: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub seed: u64,
    pub setup: SternGerlachSetup,
    pub state: AngularState,
    pub fluct: FluctConfig,
    pub born: BornConfig,
    pub traj: TrajConfig,
    pub bell: BellConfig,
    pub oracle: OracleConfig,
    pub output: OutputConfig,
    pub check: bool,
    pub threads: Option<usize>,
}

fn equal_superposition() -> AngularState {
    let ladder = AngularLadder::new(0.5, 1.0).expect("j = 1/2 ladder");
    AngularState::normalized(ladder, vec![Complex64::new(1.0, 0.0); 2]).expect("non-zero coefficients")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 1,
            setup: SternGerlachSetup::default(),
            state: equal_superposition(),
            fluct: FluctConfig::default(),
            born: BornConfig::default(),
            traj: TrajConfig::default(),
            bell: BellConfig::default(),
            oracle: OracleConfig::default(),
            output: OutputConfig::default(),
            check: false,
            threads: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub check: bool,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies the subcommand and flags. A file naming a different
    /// experiment is a config error.
    pub fn resolve(mut self, experiment: Experiment, o: Overrides) -> Result<Self, CliError> {
        match self.experiment {
            Some(e) if e != experiment => {
                return Err(CliError::Config(format!(
                    "config is for `{}` but `{}` was requested",
                    e.name(),
                    experiment.name()
                )))
            }
            _ => self.experiment = Some(experiment),
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = o.out {
            self.output.dir = Some(d);
        }
        if let Some(f) = o.format {
            self.output.format = f;
        }
        self.check |= o.check;
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        Ok(self)
    }

    /// SHA-256 of the canonical JSON of everything that determines the
    /// numbers except the seed. Output location, format, `check` and
    /// `threads` are left out.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            for key in ["seed", "output", "check", "threads"] {
                map.remove(key);
            }
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
