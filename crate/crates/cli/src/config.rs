//! JSON problem/run configuration and conversion into library types.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use rtadmm_core::augmented::{InitRule, UpdateRule};
use rtadmm_core::mpc::{BoxSet, LinearSystem, MpcProblem, MpcSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Row-major state matrix.
    pub a: Vec<Vec<f64>>,
    /// Row-major input matrix.
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsConfig {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default = "default_rho")]
    pub rho: Vec<f64>,
    #[serde(default = "default_m")]
    pub m: Vec<usize>,
    #[serde(default = "default_updates")]
    pub updates: Vec<String>,
    #[serde(default = "default_inits")]
    pub inits: Vec<String>,
}

fn default_rho() -> Vec<f64> {
    vec![100.0, 10.0, 1.0]
}
fn default_m() -> Vec<usize> {
    vec![1, 5, 10]
}
fn default_updates() -> Vec<String> {
    vec!["shift-lqr".into(), "shift-zero".into(), "copy".into()]
}
fn default_inits() -> Vec<String> {
    vec!["lqr".into(), "zero".into(), "naive".into()]
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            m: default_m(),
            updates: default_updates(),
            inits: default_inits(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub state_bounds: BoundsConfig,
    pub input_bounds: BoundsConfig,
    pub weights: WeightsConfig,
    pub horizon: usize,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step_limit")]
    pub step_limit: usize,
    #[serde(default = "default_k_cap")]
    pub k_cap: usize,
}

fn default_samples() -> usize {
    500
}
fn default_step_limit() -> usize {
    50
}
fn default_k_cap() -> usize {
    500
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(format!("{what}: empty matrix"));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(format!("{what}: ragged or empty rows"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config: {e}"))
    }

    pub fn problem(&self) -> Result<MpcProblem, String> {
        let system = LinearSystem::new(
            matrix(&self.system.a, "system.a")?,
            matrix(&self.system.b, "system.b")?,
        )
        .map_err(|e| e.to_string())?;
        let state_box = BoxSet::new(
            DVector::from_vec(self.state_bounds.lower.clone()),
            DVector::from_vec(self.state_bounds.upper.clone()),
        )
        .map_err(|e| format!("state bounds: {e}"))?;
        let input_box = BoxSet::new(
            DVector::from_vec(self.input_bounds.lower.clone()),
            DVector::from_vec(self.input_bounds.upper.clone()),
        )
        .map_err(|e| format!("input bounds: {e}"))?;
        if self.horizon < 1 {
            return Err("horizon must be at least 1".into());
        }
        let spec = MpcSpec::from_weights(
            &system,
            matrix(&self.weights.q, "weights.q")?,
            matrix(&self.weights.r, "weights.r")?,
            self.horizon,
        )
        .map_err(|e| e.to_string())?;
        MpcProblem::new(system, state_box, input_box, spec).map_err(|e| e.to_string())
    }

    pub fn update_rules(&self) -> Result<Vec<UpdateRule>, String> {
        self.grid
            .updates
            .iter()
            .map(|s| UpdateRule::parse(s).map_err(|e| e.to_string()))
            .collect()
    }

    pub fn init_rules(&self) -> Result<Vec<InitRule>, String> {
        self.grid
            .inits
            .iter()
            .map(|s| InitRule::parse(s).map_err(|e| e.to_string()))
            .collect()
    }
}
