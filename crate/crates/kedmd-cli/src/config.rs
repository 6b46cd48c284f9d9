//! Flat `key = value` run configuration. Unknown keys are rejected; every
//! field has a default matching the closed-loop experiment setup
//! (dt = 0.05, nu = 0.1, U = [-2,2], Omega = [-2,2]^2, Q = I, R = 1e-4,
//! x0 = (0.5, 0.5), horizon 10, 1000 steps).

use std::fmt;

use kedmd::bounds::AxisBox;
use kedmd::mpc::{OcpConfig, StageCost};
use kedmd::nalgebra::DVector;
use kedmd::systems::{BallSampling, ControlAffinePlant, ExperimentConfig};
use kedmd::WendlandKernel;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Full experiment configuration; see `RunConfig::default` for the
/// documented defaults of every key.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// `d`: cluster count, a perfect square with odd root.
    pub cluster_count: usize,
    /// `eps_c`: cluster sampling radius.
    pub eps_c: f64,
    /// `samples_per_cluster`: triplets drawn per cluster (`d_i`).
    pub samples_per_cluster: usize,
    /// `seed`: RNG seed for data generation and sampling diagnostics.
    pub seed: u64,
    /// `dt`, `nu`: van der Pol discretization and damping parameters.
    pub dt: f64,
    pub nu: f64,
    /// `sigma`: Wendland support radius.
    pub sigma: f64,
    /// `smoothness`: Wendland smoothness degree (only 1 ships).
    pub smoothness: usize,
    /// `lambda`: Tikhonov shift of the kernel matrix.
    pub lambda: f64,
    /// `horizon`: MPC prediction horizon `N`.
    pub horizon: usize,
    /// `steps`: closed-loop length.
    pub steps: usize,
    /// `x0`: initial state (comma separated).
    pub x0: Vec<f64>,
    /// `q_diag`, `r_diag`: diagonals of the stage cost matrices.
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    /// `u_min`, `u_max`: control box.
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    /// `x_min`, `x_max`: state constraint box.
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    /// `domain_min`, `domain_max`: sampling domain Omega.
    pub domain_min: Vec<f64>,
    pub domain_max: Vec<f64>,
    /// `tightening`: per-step constraint tightening `eps`.
    pub tightening: f64,
    /// `exact_plant`: run the MPC on the true plant instead of a surrogate.
    pub exact_plant: bool,
    /// `fill_resolution`: probe points per axis for fill distances.
    pub fill_resolution: usize,
    /// `plots`: toggle SVG emission.
    pub plots: bool,
    /// `n_max`: largest horizon in growth-bound and alpha tables.
    pub n_max: usize,
    /// `growth_grid`: per-axis sample count of the growth-bound state grid.
    pub growth_grid: usize,
    /// `modulus_pairs`: sample pairs of the modulus estimate.
    pub modulus_pairs: usize,
    /// `convergence_d`: cluster counts of the convergence study.
    pub convergence_d: Vec<usize>,
    /// `ball_sampling`: placement of samples in the cluster ball
    /// (`uniform` or `boundary`).
    pub ball_sampling: BallSampling,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cluster_count: 441,
            eps_c: 0.0,
            samples_per_cluster: 25,
            seed: 123,
            dt: 0.05,
            nu: 0.1,
            sigma: 1.0,
            smoothness: 1,
            lambda: 0.0,
            horizon: 10,
            steps: 1000,
            x0: vec![0.5, 0.5],
            q_diag: vec![1.0, 1.0],
            r_diag: vec![1e-4],
            u_min: vec![-2.0],
            u_max: vec![2.0],
            x_min: vec![-2.0, -2.0],
            x_max: vec![2.0, 2.0],
            domain_min: vec![-2.0, -2.0],
            domain_max: vec![2.0, 2.0],
            tightening: 0.0,
            exact_plant: false,
            fill_resolution: 401,
            plots: true,
            n_max: 20,
            growth_grid: 5,
            modulus_pairs: 200,
            convergence_d: vec![121, 225, 441],
            ball_sampling: BallSampling::Uniform,
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment, unknown keys fail.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |what: &str| ConfigError(format!("key `{key}`: invalid {what} `{value}`"));
        match key {
            "d" | "cluster_count" => {
                self.cluster_count = value.parse().map_err(|_| bad("integer"))?
            }
            "eps_c" => self.eps_c = value.parse().map_err(|_| bad("number"))?,
            "samples_per_cluster" => {
                self.samples_per_cluster = value.parse().map_err(|_| bad("integer"))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("integer"))?,
            "dt" => self.dt = value.parse().map_err(|_| bad("number"))?,
            "nu" => self.nu = value.parse().map_err(|_| bad("number"))?,
            "sigma" => self.sigma = value.parse().map_err(|_| bad("number"))?,
            "smoothness" => self.smoothness = value.parse().map_err(|_| bad("integer"))?,
            "lambda" => self.lambda = value.parse().map_err(|_| bad("number"))?,
            "horizon" => self.horizon = value.parse().map_err(|_| bad("integer"))?,
            "steps" => self.steps = value.parse().map_err(|_| bad("integer"))?,
            "x0" => self.x0 = parse_list(value).ok_or_else(|| bad("number list"))?,
            "q_diag" => self.q_diag = parse_list(value).ok_or_else(|| bad("number list"))?,
            "r_diag" => self.r_diag = parse_list(value).ok_or_else(|| bad("number list"))?,
            "u_min" => self.u_min = parse_list(value).ok_or_else(|| bad("number list"))?,
            "u_max" => self.u_max = parse_list(value).ok_or_else(|| bad("number list"))?,
            "x_min" => self.x_min = parse_list(value).ok_or_else(|| bad("number list"))?,
            "x_max" => self.x_max = parse_list(value).ok_or_else(|| bad("number list"))?,
            "domain_min" => {
                self.domain_min = parse_list(value).ok_or_else(|| bad("number list"))?
            }
            "domain_max" => {
                self.domain_max = parse_list(value).ok_or_else(|| bad("number list"))?
            }
            "tightening" => self.tightening = value.parse().map_err(|_| bad("number"))?,
            "exact_plant" => self.exact_plant = parse_bool(value).ok_or_else(|| bad("boolean"))?,
            "fill_resolution" => {
                self.fill_resolution = value.parse().map_err(|_| bad("integer"))?
            }
            "plots" => self.plots = parse_bool(value).ok_or_else(|| bad("boolean"))?,
            "n_max" => self.n_max = value.parse().map_err(|_| bad("integer"))?,
            "growth_grid" => self.growth_grid = value.parse().map_err(|_| bad("integer"))?,
            "modulus_pairs" => self.modulus_pairs = value.parse().map_err(|_| bad("integer"))?,
            "convergence_d" => {
                self.convergence_d = value
                    .split(',')
                    .map(|v| v.trim().parse::<usize>().ok())
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad("integer list"))?
            }
            "ball_sampling" => {
                self.ball_sampling = match value {
                    "uniform" => BallSampling::Uniform,
                    "boundary" => BallSampling::Boundary,
                    _ => return Err(bad("sampling mode (uniform|boundary)")),
                }
            }
            _ => return Err(ConfigError(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<WendlandKernel, kedmd::Error> {
        WendlandKernel::new(self.x0.len(), self.smoothness, self.sigma)
    }

    pub fn plant(&self) -> Result<ControlAffinePlant, kedmd::Error> {
        let mut plant = ControlAffinePlant::van_der_pol(self.dt, self.nu);
        plant.domain = AxisBox::new(
            DVector::from_column_slice(&self.domain_min),
            DVector::from_column_slice(&self.domain_max),
        )?;
        plant.control_box = AxisBox::new(
            DVector::from_column_slice(&self.u_min),
            DVector::from_column_slice(&self.u_max),
        )?;
        Ok(plant)
    }

    pub fn stage_cost(&self) -> Result<StageCost, kedmd::Error> {
        StageCost::diagonal(&self.q_diag, &self.r_diag)
    }

    pub fn ocp_config(&self) -> Result<OcpConfig, kedmd::Error> {
        OcpConfig::new(
            self.horizon,
            AxisBox::new(
                DVector::from_column_slice(&self.u_min),
                DVector::from_column_slice(&self.u_max),
            )?,
            AxisBox::new(
                DVector::from_column_slice(&self.x_min),
                DVector::from_column_slice(&self.x_max),
            )?,
            self.tightening,
        )
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, kedmd::Error> {
        Ok(ExperimentConfig {
            cluster_count: self.cluster_count,
            cluster_radius: self.eps_c,
            samples_per_cluster: self.samples_per_cluster,
            seed: self.seed,
            kernel: self.kernel()?,
            lambda: self.lambda,
        })
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0)
    }

    /// Half width of the (cubic) sampling domain; grid construction needs a
    /// square box.
    pub fn domain_half_width(&self) -> Result<f64, ConfigError> {
        let hw = self.domain_max[0];
        let cubic = self
            .domain_min
            .iter()
            .zip(&self.domain_max)
            .all(|(lo, hi)| *lo == -hw && *hi == hw);
        if !cubic {
            return Err(ConfigError(
                "cluster grids require a centered square domain (domain_min = -domain_max)".into(),
            ));
        }
        Ok(hw)
    }
}

/// The reference experiment's cluster radius `sqrt(2) / d`.
pub fn eps_c_over_d(d: usize) -> f64 {
    std::f64::consts::SQRT_2 / d as f64
}

fn parse_list(value: &str) -> Option<Vec<f64>> {
    let items: Option<Vec<f64>> = value
        .split(',')
        .map(|v| v.trim().parse::<f64>().ok())
        .collect();
    items.filter(|v| !v.is_empty())
}

fn parse_bool(value: &str) -> Option<bool> {
    match value {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_experiment_setup() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.dt, 0.05);
        assert_eq!(cfg.nu, 0.1);
        assert_eq!(cfg.cluster_count, 441);
        assert_eq!(cfg.samples_per_cluster, 25);
        assert_eq!(cfg.horizon, 10);
        assert_eq!(cfg.steps, 1000);
        assert_eq!(cfg.x0, vec![0.5, 0.5]);
        assert_eq!(cfg.r_diag, vec![1e-4]);
        assert_eq!(cfg.u_min, vec![-2.0]);
        assert_eq!(cfg.domain_max, vec![2.0, 2.0]);
    }

    #[test]
    fn parses_overrides_and_comments() {
        let cfg = RunConfig::parse(
            "# experiment\n d = 1681 \n eps_c = 0.003207 # paper value\n\nhorizon=20\nx0 = 0.1, -0.2\n",
        )
        .unwrap();
        assert_eq!(cfg.cluster_count, 1681);
        assert_eq!(cfg.horizon, 20);
        assert_eq!(cfg.x0, vec![0.1, -0.2]);
        assert!((cfg.eps_c - 0.003207).abs() < 1e-12);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let err = RunConfig::parse("frobnicate = 3\n").unwrap_err();
        assert!(err.0.contains("frobnicate"));
        assert!(RunConfig::parse("steps = many\n").is_err());
        assert!(RunConfig::parse("steps 1000\n").is_err());
    }

    #[test]
    fn paper_cluster_radius() {
        assert!((eps_c_over_d(441) - 0.0032062).abs() < 1e-6);
    }
}
