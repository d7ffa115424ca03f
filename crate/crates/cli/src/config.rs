//! TOML run configuration.
//!
//! ```toml
//! [plant]
//! n = 2
//! m = 1
//! a = [0.0, 1.0, 49.0, 0.0]   # row-major, n*n
//! b = [0.0, 25.0]             # row-major, n*m
//!
//! [delay]
//! kind = "shifted_exponential" # or "constant", "empirical"
//! offset_up = 0.01
//! offset_dw = 0.01
//! mean_up = 0.01
//! mean_dw = 0.02
//!
//! [algorithm]
//! samples = 1000
//! seed = 0
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use ncs_core::control::DesignOptions;
use ncs_core::delays::{load_delay_csv, DelayModel};
use ncs_core::linalg::Vector;
use ncs_core::lmi::{BisectionOptions, SolverOptions};
use ncs_core::moments::DEFAULT_RANK_TOL;
use ncs_core::plant::ContinuousPlant;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantSection,
    pub delay: DelaySection,
    #[serde(default)]
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub n: usize,
    pub m: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DelayKindName {
    Constant,
    ShiftedExponential,
    Empirical,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DelaySection {
    pub kind: DelayKindName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_up: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_dw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_up: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_dw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_up: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_dw: Option<f64>,
    /// Two-column `tau_up,tau_dw` file, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmSection {
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    pub rank_tol: f64,
    /// Relative LMI margin.
    pub eps: f64,
    pub lambda_hi: f64,
    pub reduced_factors: bool,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        let b = BisectionOptions::default();
        Self {
            samples: 1000,
            seed: 0,
            tol: b.tol,
            rank_tol: DEFAULT_RANK_TOL,
            eps: SolverOptions::default().eps_rel,
            lambda_hi: b.lambda_hi,
            reduced_factors: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    /// Defaults to the first unit vector.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Defaults to zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_init: Option<Vec<f64>>,
    pub steps: usize,
    pub paths: usize,
    pub dense_substeps: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            x0: None,
            u_init: None,
            steps: 20,
            paths: 100,
            dense_substeps: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("ncs-out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg =
            Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        if let Some(csv) = &cfg.delay.csv {
            if csv.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                let joined = base.join(csv);
                cfg.delay.csv = Some(std::path::absolute(&joined).unwrap_or(joined));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The built-in inverted-pendulum example.
    pub fn pendulum() -> Self {
        Self {
            plant: PlantSection {
                n: 2,
                m: 1,
                a: vec![0.0, 1.0, 49.0, 0.0],
                b: vec![0.0, 25.0],
            },
            delay: DelaySection {
                kind: DelayKindName::ShiftedExponential,
                tau_up: None,
                tau_dw: None,
                offset_up: Some(0.01),
                offset_dw: Some(0.01),
                mean_up: Some(0.01),
                mean_dw: Some(0.02),
                csv: None,
            },
            algorithm: AlgorithmSection::default(),
            simulation: SimulationSection {
                x0: Some(vec![1.0, 0.0]),
                u_init: Some(vec![0.0]),
                ..Default::default()
            },
            output: OutputSection::default(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.plant;
        if p.n == 0 || p.m == 0 {
            return err("plant.n and plant.m must be at least 1");
        }
        if p.a.len() != p.n * p.n {
            return err(format!(
                "plant.a must have n*n = {} entries, got {}",
                p.n * p.n,
                p.a.len()
            ));
        }
        if p.b.len() != p.n * p.m {
            return err(format!(
                "plant.b must have n*m = {} entries, got {}",
                p.n * p.m,
                p.b.len()
            ));
        }

        let d = &self.delay;
        let given = [
            ("tau_up", d.tau_up.is_some()),
            ("tau_dw", d.tau_dw.is_some()),
            ("offset_up", d.offset_up.is_some()),
            ("offset_dw", d.offset_dw.is_some()),
            ("mean_up", d.mean_up.is_some()),
            ("mean_dw", d.mean_dw.is_some()),
            ("csv", d.csv.is_some()),
        ];
        let (required, kind): (&[&str], &str) = match d.kind {
            DelayKindName::Constant => (&["tau_up", "tau_dw"], "constant"),
            DelayKindName::ShiftedExponential => (
                &["offset_up", "offset_dw", "mean_up", "mean_dw"],
                "shifted_exponential",
            ),
            DelayKindName::Empirical => (&["csv"], "empirical"),
        };
        for (key, present) in given {
            let needed = required.contains(&key);
            if needed && !present {
                return err(format!("delay.{key} is required for kind = \"{kind}\""));
            }
            if !needed && present {
                return err(format!("delay.{key} is not valid for kind = \"{kind}\""));
            }
        }

        let a = &self.algorithm;
        if a.samples == 0 {
            return err("algorithm.samples must be at least 1");
        }
        if !(a.tol > 0.0 && a.tol < 1.0) {
            return err("algorithm.tol must lie in (0, 1)");
        }
        if !(a.rank_tol >= 0.0 && a.rank_tol < 1.0) {
            return err("algorithm.rank_tol must lie in [0, 1)");
        }
        if !(a.eps > 0.0 && a.eps < 1.0) {
            return err("algorithm.eps must lie in (0, 1)");
        }
        if !(a.lambda_hi > 1e-4 && a.lambda_hi <= 1.0) {
            return err("algorithm.lambda_hi must lie in (1e-4, 1]");
        }

        let s = &self.simulation;
        if let Some(x0) = &s.x0 {
            if x0.len() != p.n {
                return err(format!(
                    "simulation.x0 must have n = {} entries, got {}",
                    p.n,
                    x0.len()
                ));
            }
        }
        if let Some(u) = &s.u_init {
            if u.len() != p.m {
                return err(format!(
                    "simulation.u_init must have m = {} entries, got {}",
                    p.m,
                    u.len()
                ));
            }
        }
        if s.steps == 0 {
            return err("simulation.steps must be at least 1");
        }
        if s.paths == 0 {
            return err("simulation.paths must be at least 1");
        }
        Ok(())
    }

    pub fn plant(&self) -> ncs_core::Result<ContinuousPlant> {
        ContinuousPlant::from_row_major(self.plant.n, self.plant.m, &self.plant.a, &self.plant.b)
    }

    pub fn delay_model(&self) -> ncs_core::Result<DelayModel> {
        let d = &self.delay;
        match d.kind {
            DelayKindName::Constant => DelayModel::constant(d.tau_up.unwrap(), d.tau_dw.unwrap()),
            DelayKindName::ShiftedExponential => DelayModel::shifted_exponential(
                d.offset_up.unwrap(),
                d.offset_dw.unwrap(),
                d.mean_up.unwrap(),
                d.mean_dw.unwrap(),
            ),
            DelayKindName::Empirical => load_delay_csv(d.csv.as_ref().unwrap()),
        }
    }

    pub fn design_options(&self, verbose: bool) -> DesignOptions {
        let a = &self.algorithm;
        DesignOptions {
            samples: a.samples,
            seed: a.seed,
            rank_tol: a.rank_tol,
            bisection: BisectionOptions {
                tol: a.tol,
                lambda_hi: a.lambda_hi,
                ..Default::default()
            },
            solver: SolverOptions {
                eps_rel: a.eps,
                verbose,
                ..Default::default()
            },
            reduced_factors: a.reduced_factors,
        }
    }

    pub fn x0(&self) -> Vector {
        match &self.simulation.x0 {
            Some(v) => Vector::from_vec(v.clone()),
            None => {
                let mut v = Vector::zeros(self.plant.n);
                v[0] = 1.0;
                v
            }
        }
    }

    pub fn u_init(&self) -> Vector {
        match &self.simulation.u_init {
            Some(v) => Vector::from_vec(v.clone()),
            None => Vector::zeros(self.plant.m),
        }
    }
}
