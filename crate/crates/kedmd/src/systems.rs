//! Reference plants and experiment data generation: the discrete van der Pol
//! oscillator, Chebyshev cluster grids, and datasets that satisfy the rank
//! and containment requirements of the two-step identification.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::AxisBox;
use crate::error::{Error, Result};
use crate::kernel::{ClusterSet, WendlandKernel};
use crate::model::PredictionModel;
use crate::surrogate::{numerical_rank, ClusterDataset, ClusterSample};

type StateFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Discrete-time control-affine plant `x+ = g0(x) + G(x) u` with its state
/// domain and control constraints.
#[derive(Clone)]
pub struct ControlAffinePlant {
    state_dim: usize,
    control_dim: usize,
    drift: StateFn,
    input_map: MatrixFn,
    /// Analytic Jacobian of `x -> F(x, u)`; falls back to finite differences
    /// when absent. For plants with state-independent `G` this does not
    /// depend on `u`.
    drift_jacobian: Option<MatrixFn>,
    pub domain: AxisBox,
    pub control_box: AxisBox,
}

impl ControlAffinePlant {
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        drift: StateFn,
        input_map: MatrixFn,
        drift_jacobian: Option<MatrixFn>,
        domain: AxisBox,
        control_box: AxisBox,
    ) -> Result<Self> {
        if domain.dim() != state_dim {
            return Err(Error::DimensionMismatch {
                what: "plant domain",
                expected: state_dim,
                got: domain.dim(),
            });
        }
        if control_box.dim() != control_dim {
            return Err(Error::DimensionMismatch {
                what: "plant control box",
                expected: control_dim,
                got: control_box.dim(),
            });
        }
        Ok(Self {
            state_dim,
            control_dim,
            drift,
            input_map,
            drift_jacobian,
            domain,
            control_box,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.input_map)(x)
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x) + (self.input_map)(x) * u
    }

    /// Discrete-time van der Pol oscillator on `Omega = [-2,2]^2` with
    /// `U = [-2,2]`. Note the damping term uses `(1 - x1)^2`, not the
    /// textbook `(1 - x1^2)`.
    pub fn van_der_pol(dt: f64, nu: f64) -> Self {
        let drift: StateFn = Arc::new(move |x: &DVector<f64>| {
            let (x1, x2) = (x[0], x[1]);
            let om = 1.0 - x1;
            DVector::from_column_slice(&[x1 + dt * x2, x2 + dt * (nu * om * om * x2 - x1)])
        });
        let input_map: MatrixFn =
            Arc::new(move |_: &DVector<f64>| DMatrix::from_column_slice(2, 1, &[0.0, dt]));
        let jac: MatrixFn = Arc::new(move |x: &DVector<f64>| {
            let (x1, x2) = (x[0], x[1]);
            let om = 1.0 - x1;
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    1.0,
                    dt,
                    dt * (-2.0 * nu * om * x2 - 1.0),
                    1.0 + dt * nu * om * om,
                ],
            )
        });
        Self {
            state_dim: 2,
            control_dim: 1,
            drift,
            input_map,
            drift_jacobian: Some(jac),
            domain: AxisBox::cube(2, 2.0),
            control_box: AxisBox::cube(1, 2.0),
        }
    }
}

impl PredictionModel for ControlAffinePlant {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.step(x, u)
    }

    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.input_map)(x)
    }

    fn jacobian_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        match &self.drift_jacobian {
            Some(j) => j(x),
            None => {
                // central differences on the full step
                let n = self.state_dim;
                let h = 1e-6;
                let mut jac = DMatrix::zeros(n, n);
                for a in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[a] += h;
                    xm[a] -= h;
                    let col = (self.step(&xp, u) - self.step(&xm, u)) / (2.0 * h);
                    jac.set_column(a, &col);
                }
                jac
            }
        }
    }
}

/// One van der Pol step with explicit parameters; convenience wrapper around
/// the plant closures for tests and oracles.
pub fn vdp_step(x: &DVector<f64>, u: f64, dt: f64, nu: f64) -> DVector<f64> {
    let (x1, x2) = (x[0], x[1]);
    let om = 1.0 - x1;
    DVector::from_column_slice(&[x1 + dt * x2, x2 + dt * (nu * om * om * x2 - x1 + u)])
}

/// Tensor grid of `root^2` Chebyshev nodes on `[-half_width, half_width]^2`,
/// nodes `half_width * cos(pi (2i+1) / (2 root))` for `i in [0:root-1]`
/// (the Chebyshev-Gauss points; a shifted index range would collide its two
/// outermost angles at `pi -+ pi/(2 root)` and break pairwise distinctness).
///
/// `root` must be odd so that the grid contains the origin; the origin is
/// swapped to position 0 since the identification step requires `x_1 = 0`.
pub fn chebyshev_grid(root: usize, half_width: f64) -> Result<ClusterSet> {
    if root < 3 || root.is_multiple_of(2) {
        return Err(Error::InvalidArgument {
            what: "chebyshev grid root",
            why: format!("must be odd and >= 3 so the origin is a node, got {root}"),
        });
    }
    if !(half_width.is_finite() && half_width > 0.0) {
        return Err(Error::InvalidArgument {
            what: "half width",
            why: format!("must be positive, got {half_width}"),
        });
    }
    let nodes: Vec<f64> = (0..root)
        .map(|i| {
            if 2 * i + 1 == root {
                // cos(pi/2) analytically; avoids the ~6e-17 float residue so
                // the origin node is exactly zero
                0.0
            } else {
                half_width * (std::f64::consts::PI * (2 * i + 1) as f64 / (2 * root) as f64).cos()
            }
        })
        .collect();
    let center = nodes
        .iter()
        .position(|&v| v == 0.0)
        .ok_or_else(|| Error::InvalidArgument {
            what: "chebyshev grid root",
            why: "origin node missing".into(),
        })?;

    let mut points = Vec::with_capacity(root * root);
    for i in 0..root {
        for j in 0..root {
            points.push(DVector::from_column_slice(&[nodes[i], nodes[j]]));
        }
    }
    let origin_idx = center * root + center;
    points.swap(0, origin_idx);
    ClusterSet::new(points)
}

/// Writes a cluster grid as CSV rows `index,x_1,x_2,...`.
pub fn grid_to_csv(clusters: &ClusterSet) -> String {
    let mut out = String::from("index");
    for a in 0..clusters.dim() {
        let _ = write!(out, ",x_{}", a + 1);
    }
    out.push('\n');
    for (i, p) in clusters.points().iter().enumerate() {
        let _ = write!(out, "{i}");
        for a in 0..p.len() {
            let _ = write!(out, ",{:.16e}", p[a]);
        }
        out.push('\n');
    }
    out
}

/// Experiment shape: cluster grid size, cluster radius, samples per cluster,
/// RNG seed and kernel/regularization settings.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub cluster_count: usize,
    pub cluster_radius: f64,
    pub samples_per_cluster: usize,
    pub seed: u64,
    pub kernel: WendlandKernel,
    pub lambda: f64,
}

impl ExperimentConfig {
    /// Square root of the cluster count; errors unless `cluster_count` is a
    /// perfect square with odd root (the grid must contain the origin).
    pub fn grid_root(&self) -> Result<usize> {
        let root = (self.cluster_count as f64).sqrt().round() as usize;
        if root * root != self.cluster_count || root.is_multiple_of(2) || root < 3 {
            return Err(Error::InvalidArgument {
                what: "cluster count",
                why: format!(
                    "{} is not a perfect square with odd root >= 3",
                    self.cluster_count
                ),
            });
        }
        Ok(root)
    }
}

const RANK_RETRY_LIMIT: usize = 100;
const BALL_REJECTION_LIMIT: usize = 10_000;

/// How sample states are placed within the cluster ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BallSampling {
    /// Uniform over the ball (the default reading of "random").
    #[default]
    Uniform,
    /// Uniform over the sphere of radius `eps_c`.
    Boundary,
}

/// Draws the identification dataset: per cluster `x_i`, `samples_per_cluster`
/// triplets `(x_ij, u_ij, x_ij+)` with `x_ij` uniform in the `eps_c`-ball
/// around `x_i` intersected with the plant domain, `u_ij` uniform in the
/// control box, redrawn (up to 100 attempts) until the stacked controls have
/// full numerical rank.
///
/// Each cluster uses its own ChaCha stream of the seeded generator, so the
/// result is reproducible across platforms and clusters may be generated in
/// any order.
pub fn generate_cluster_data(
    plant: &ControlAffinePlant,
    clusters: &ClusterSet,
    eps_c: f64,
    samples_per_cluster: usize,
    seed: u64,
) -> Result<ClusterDataset> {
    generate_cluster_data_with(
        plant,
        clusters,
        eps_c,
        samples_per_cluster,
        seed,
        BallSampling::Uniform,
    )
}

/// [`generate_cluster_data`] with an explicit in-ball sampling mode.
pub fn generate_cluster_data_with(
    plant: &ControlAffinePlant,
    clusters: &ClusterSet,
    eps_c: f64,
    samples_per_cluster: usize,
    seed: u64,
    sampling: BallSampling,
) -> Result<ClusterDataset> {
    let m = plant.control_dim();
    if samples_per_cluster < m + 1 {
        return Err(Error::InvalidArgument {
            what: "samples per cluster",
            why: format!("need at least m + 1 = {}, got {samples_per_cluster}", m + 1),
        });
    }
    if !(eps_c >= 0.0 && eps_c.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "cluster radius",
            why: format!("must be nonnegative, got {eps_c}"),
        });
    }

    let mut all_samples = Vec::with_capacity(clusters.len());
    for (i, center) in clusters.points().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);

        let states: Vec<DVector<f64>> = (0..samples_per_cluster)
            .map(|_| sample_in_ball(center, eps_c, &plant.domain, sampling, &mut rng))
            .collect::<Result<_>>()?;

        let mut controls = None;
        for _ in 0..RANK_RETRY_LIMIT {
            let draw: Vec<DVector<f64>> = (0..samples_per_cluster)
                .map(|_| plant.control_box.sample(&mut rng))
                .collect();
            let stacked = DMatrix::from_fn(m, samples_per_cluster, |r, c| draw[c][r]);
            if numerical_rank(&stacked, 1e-8) == m {
                controls = Some(draw);
                break;
            }
        }
        let controls = controls.ok_or(Error::DegenerateControls {
            cluster: i,
            attempts: RANK_RETRY_LIMIT,
        })?;

        let samples = states
            .into_iter()
            .zip(controls)
            .map(|(x, u)| {
                let successor = plant.step(&x, &u);
                ClusterSample {
                    state: x,
                    control: u,
                    successor,
                }
            })
            .collect();
        all_samples.push(samples);
    }

    ClusterDataset::new(clusters.clone(), all_samples, eps_c, m, Some(seed))
}

fn sample_in_ball(
    center: &DVector<f64>,
    radius: f64,
    domain: &AxisBox,
    sampling: BallSampling,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    if radius == 0.0 {
        return Ok(center.clone());
    }
    // rejection from the bounding cube; boundary mode normalizes the
    // accepted offset onto the sphere
    for _ in 0..BALL_REJECTION_LIMIT {
        let offset = DVector::from_fn(center.len(), |_, _| rng.gen_range(-radius..=radius));
        let norm = offset.norm();
        if norm > radius || norm == 0.0 {
            continue;
        }
        let candidate = match sampling {
            BallSampling::Uniform => center + offset,
            BallSampling::Boundary => center + offset * (radius / norm),
        };
        if domain.contains(&candidate) {
            return Ok(candidate);
        }
    }
    Err(Error::InvalidArgument {
        what: "cluster ball",
        why: format!(
            "could not draw a point of the {radius}-ball around {center:?} inside the domain"
        ),
    })
}
