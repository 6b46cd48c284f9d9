//! Two-step identification of control-affine dynamics from clustered data:
//! per-cluster least squares recovers `H_i = [g0~(x_i) | G~(x_i)]`, then the
//! kernel interpolation of the recovered maps yields the surrogate
//! `F_eps(x, u) = g0_eps(x) + G_eps(x) u` together with the computable
//! factors of its error bound.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::AxisBox;
use crate::error::{Error, Result};
use crate::io::{self, FloatCursor};
use crate::kernel::{
    cross_kernel_matrix, factorize, fill_distance, kernel_matrix, ClusterSet, KernelMatrixFactor,
    WendlandKernel,
};
use crate::model::PredictionModel;

/// Relative singular-value tolerance of the Assumption-style rank check.
pub const RANK_TOL: f64 = 1e-8;
/// Relative singular-value cutoff of the regression pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-10;
/// The ratio `error / dist(x, X)` is not evaluated closer to the cluster set.
pub const RATIO_EXCLUSION_RADIUS: f64 = 1e-6;
/// Cluster sets up to this size get the exact vertex enumeration of
/// `max {v^T K^{-1} v : |v|_inf <= 1}`.
pub const CUBE_ENUM_LIMIT: usize = 12;

/// One data triplet `(x_ij, u_ij, x_ij+)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSample {
    pub state: DVector<f64>,
    pub control: DVector<f64>,
    pub successor: DVector<f64>,
}

/// Clustered identification data: for each virtual observation point `x_i`
/// a batch of triplets sampled within distance `eps_c` of `x_i`.
#[derive(Debug, Clone)]
pub struct ClusterDataset {
    clusters: ClusterSet,
    samples: Vec<Vec<ClusterSample>>,
    eps_c: f64,
    control_dim: usize,
    seed: Option<u64>,
}

impl ClusterDataset {
    /// The first cluster point must be the origin (within 1e-12); everything
    /// else (containment, rank, sample counts) is reported by
    /// [`validate_dataset`] rather than rejected here.
    pub fn new(
        clusters: ClusterSet,
        samples: Vec<Vec<ClusterSample>>,
        eps_c: f64,
        control_dim: usize,
        seed: Option<u64>,
    ) -> Result<Self> {
        if samples.len() != clusters.len() {
            return Err(Error::DimensionMismatch {
                what: "sample batches",
                expected: clusters.len(),
                got: samples.len(),
            });
        }
        if clusters.point(0).norm() > 1e-12 {
            return Err(Error::InvalidArgument {
                what: "cluster set",
                why: format!(
                    "the first cluster point must be the origin, got norm {:.3e}",
                    clusters.point(0).norm()
                ),
            });
        }
        let n = clusters.dim();
        for batch in &samples {
            if batch.is_empty() {
                return Err(Error::Empty("cluster sample batch"));
            }
            for s in batch {
                if s.state.len() != n || s.successor.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "sample state",
                        expected: n,
                        got: s.state.len(),
                    });
                }
                if s.control.len() != control_dim {
                    return Err(Error::DimensionMismatch {
                        what: "sample control",
                        expected: control_dim,
                        got: s.control.len(),
                    });
                }
            }
        }
        if !(eps_c >= 0.0 && eps_c.is_finite()) {
            return Err(Error::InvalidArgument {
                what: "cluster radius",
                why: format!("must be nonnegative, got {eps_c}"),
            });
        }
        Ok(Self {
            clusters,
            samples,
            eps_c,
            control_dim,
            seed,
        })
    }

    pub fn clusters(&self) -> &ClusterSet {
        &self.clusters
    }

    pub fn samples(&self, cluster: usize) -> &[ClusterSample] {
        &self.samples[cluster]
    }

    pub fn cluster_radius(&self) -> f64 {
        self.eps_c
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn total_samples(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }

    /// Serializes as CSV: a commented header block carrying `(n, m, d,
    /// eps_c, seed)` and the cluster coordinates, then one row per triplet.
    pub fn to_csv(&self) -> String {
        let n = self.clusters.dim();
        let m = self.control_dim;
        let mut out = String::new();
        out.push_str("# kedmd dataset\n");
        out.push_str(&format!("# n {n}\n# m {m}\n# d {}\n", self.clusters.len()));
        out.push_str(&format!("# eps_c {:.16e}\n", self.eps_c));
        match self.seed {
            Some(s) => out.push_str(&format!("# seed {s}\n")),
            None => out.push_str("# seed none\n"),
        }
        for (i, p) in self.clusters.points().iter().enumerate() {
            out.push_str(&format!("# cluster {i}"));
            for a in 0..n {
                out.push_str(&format!(" {:.16e}", p[a]));
            }
            out.push('\n');
        }
        out.push_str("cluster_index");
        for a in 1..=n {
            out.push_str(&format!(",x_{a}"));
        }
        for a in 1..=m {
            out.push_str(&format!(",u_{a}"));
        }
        for a in 1..=n {
            out.push_str(&format!(",xplus_{a}"));
        }
        out.push('\n');
        for (i, batch) in self.samples.iter().enumerate() {
            for s in batch {
                out.push_str(&format!("{i}"));
                for v in s
                    .state
                    .iter()
                    .chain(s.control.iter())
                    .chain(s.successor.iter())
                {
                    out.push_str(&format!(",{v:.16e}"));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_csv(text: &str, path: &str) -> Result<Self> {
        let bad = |why: String| Error::MalformedFile {
            path: path.into(),
            why,
        };
        let mut n = None;
        let mut m = None;
        let mut d = None;
        let mut eps_c = None;
        let mut seed = None;
        let mut cluster_points: Vec<DVector<f64>> = Vec::new();
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                match parts.next() {
                    Some("n") => n = parts.next().and_then(|v| v.parse().ok()),
                    Some("m") => m = parts.next().and_then(|v| v.parse().ok()),
                    Some("d") => d = parts.next().and_then(|v| v.parse().ok()),
                    Some("eps_c") => eps_c = parts.next().and_then(|v| v.parse().ok()),
                    Some("seed") => {
                        seed = match parts.next() {
                            Some("none") | None => None,
                            Some(v) => {
                                Some(v.parse().map_err(|_| bad(format!("invalid seed `{v}`")))?)
                            }
                        }
                    }
                    Some("cluster") => {
                        let coords: Vec<f64> = parts
                            .skip(1)
                            .map(|v| v.parse::<f64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|e| bad(format!("invalid cluster line: {e}")))?;
                        cluster_points.push(DVector::from_vec(coords));
                    }
                    _ => {}
                }
                continue;
            }
            if line.starts_with("cluster_index") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let idx: usize = fields[0]
                .parse()
                .map_err(|_| bad(format!("invalid cluster index `{}`", fields[0])))?;
            let values: Vec<f64> = fields[1..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("invalid sample row: {e}")))?;
            rows.push((idx, values));
        }
        let n: usize = n.ok_or_else(|| bad("missing `# n`".into()))?;
        let m: usize = m.ok_or_else(|| bad("missing `# m`".into()))?;
        let d: usize = d.ok_or_else(|| bad("missing `# d`".into()))?;
        let eps_c: f64 = eps_c.ok_or_else(|| bad("missing `# eps_c`".into()))?;
        if cluster_points.len() != d {
            return Err(bad(format!(
                "expected {d} cluster lines, found {}",
                cluster_points.len()
            )));
        }
        let mut samples: Vec<Vec<ClusterSample>> = vec![Vec::new(); d];
        for (idx, values) in rows {
            if idx >= d {
                return Err(bad(format!("cluster index {idx} out of range")));
            }
            if values.len() != 2 * n + m {
                return Err(bad(format!(
                    "expected {} values per row, got {}",
                    2 * n + m,
                    values.len()
                )));
            }
            samples[idx].push(ClusterSample {
                state: DVector::from_column_slice(&values[..n]),
                control: DVector::from_column_slice(&values[n..n + m]),
                successor: DVector::from_column_slice(&values[n + m..]),
            });
        }
        Self::new(ClusterSet::new(cluster_points)?, samples, eps_c, m, seed)
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut file = BufWriter::new(File::create(path)?);
        file.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        Self::from_csv(&text, &path.as_ref().display().to_string())
    }
}

/// Numerical rank at relative singular-value tolerance `rel_tol`.
pub fn numerical_rank(matrix: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = matrix.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Per-cluster findings of [`validate_dataset`].
#[derive(Debug, Clone)]
pub struct ClusterValidation {
    pub cluster: usize,
    pub sample_count: usize,
    /// Indices of samples violating `|x_ij - x_i| <= eps_c`.
    pub containment_violations: Vec<usize>,
    pub control_rank: usize,
    pub rank_ok: bool,
    pub has_enough_samples: bool,
}

impl ClusterValidation {
    pub fn ok(&self) -> bool {
        self.containment_violations.is_empty() && self.rank_ok && self.has_enough_samples
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub clusters: Vec<ClusterValidation>,
    pub passed: bool,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed {
            return write!(
                f,
                "all {} clusters satisfy the data requirements",
                self.clusters.len()
            );
        }
        for c in self.clusters.iter().filter(|c| !c.ok()) {
            write!(f, "cluster {}: {} samples", c.cluster, c.sample_count)?;
            if !c.has_enough_samples {
                write!(f, ", too few samples")?;
            }
            if !c.rank_ok {
                write!(f, ", control rank {} deficient", c.control_rank)?;
            }
            if !c.containment_violations.is_empty() {
                write!(
                    f,
                    ", {} samples outside the cluster ball (first: {})",
                    c.containment_violations.len(),
                    c.containment_violations[0]
                )?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Checks the data requirements cluster by cluster: sample containment in
/// the `eps_c`-ball, full control rank `m`, and at least `m + 1` samples.
pub fn validate_dataset(data: &ClusterDataset) -> ValidationReport {
    let m = data.control_dim();
    let mut clusters = Vec::with_capacity(data.clusters().len());
    for i in 0..data.clusters().len() {
        let center = data.clusters().point(i);
        let batch = data.samples(i);
        let containment_violations = batch
            .iter()
            .enumerate()
            .filter(|(_, s)| (&s.state - center).norm() > data.cluster_radius())
            .map(|(j, _)| j)
            .collect();
        let stacked = DMatrix::from_fn(m, batch.len(), |r, c| batch[c].control[r]);
        let control_rank = numerical_rank(&stacked, RANK_TOL);
        clusters.push(ClusterValidation {
            cluster: i,
            sample_count: batch.len(),
            containment_violations,
            control_rank,
            rank_ok: control_rank == m,
            has_enough_samples: batch.len() > m,
        });
    }
    let passed = clusters.iter().all(ClusterValidation::ok);
    ValidationReport { clusters, passed }
}

/// Minimum-norm least squares `H_i = [x+ ...] U_i^dagger` for one cluster,
/// with `U_i` stacking a row of ones over the controls. Returns the
/// regression matrix `H_i` (n x (m+1)) and the spectral norm of the
/// pseudoinverse `|U_i^dagger|`.
pub fn local_regression(
    cluster: usize,
    samples: &[ClusterSample],
    control_dim: usize,
) -> Result<(DMatrix<f64>, f64)> {
    let di = samples.len();
    let m = control_dim;
    let n = samples[0].successor.len();
    let u_mat = DMatrix::from_fn(m + 1, di, |r, c| {
        if r == 0 {
            1.0
        } else {
            samples[c].control[r - 1]
        }
    });
    let svd = SVD::new(u_mat, true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = PINV_CUTOFF * sigma_max;
    let kept: Vec<f64> = svd
        .singular_values
        .iter()
        .cloned()
        .filter(|&s| s > cutoff)
        .collect();
    if kept.len() < m + 1 {
        return Err(Error::RankDeficient {
            cluster,
            rank: kept.len(),
            required: m + 1,
        });
    }
    let pinv_norm = 1.0 / kept.iter().cloned().fold(f64::INFINITY, f64::min);
    let pinv = svd
        .pseudo_inverse(cutoff)
        .map_err(|why| Error::InvalidArgument {
            what: "control matrix pseudoinverse",
            why: why.to_string(),
        })?;
    let successors = DMatrix::from_fn(n, di, |r, c| samples[c].successor[r]);
    Ok((successors * pinv, pinv_norm))
}

/// Fitted kernel surrogate of a control-affine system.
///
/// The coefficient blocks contract the interpolation matrices against the
/// coordinate observables at fit time: block `j` is `n x d` with row `l`
/// holding the coefficients of the `l`-th coordinate of `g_j_eps`, so one
/// evaluation costs `O(d n (m+1))`.
#[derive(Debug, Clone)]
pub struct ControlSurrogate {
    kernel: WendlandKernel,
    clusters: ClusterSet,
    lambda: f64,
    eps_c: f64,
    control_dim: usize,
    /// m + 1 coefficient blocks, each n x d; block 0 realizes the drift.
    blocks: Vec<DMatrix<f64>>,
    /// Per-cluster regression matrices `H_i`, each n x (m+1).
    regressions: Vec<DMatrix<f64>>,
    /// Per-cluster `|U_i^dagger|`.
    pinv_norms: Vec<f64>,
    factor: KernelMatrixFactor,
}

/// Runs both identification steps and assembles the surrogate coefficient
/// blocks through factored solves (the kernel matrix inverse is never
/// formed).
pub fn fit_control_surrogate(
    data: &ClusterDataset,
    kernel: &WendlandKernel,
    lambda: f64,
) -> Result<ControlSurrogate> {
    let report = validate_dataset(data);
    if !report.passed {
        return Err(Error::InvalidDataset(report.to_string()));
    }
    let clusters = data.clusters();
    let n = clusters.dim();
    let m = data.control_dim();
    if kernel.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "kernel dimension",
            expected: n,
            got: kernel.dim(),
        });
    }

    let mut regressions = Vec::with_capacity(clusters.len());
    let mut pinv_norms = Vec::with_capacity(clusters.len());
    for i in 0..clusters.len() {
        let (h, pinv_norm) = local_regression(i, data.samples(i), m)?;
        regressions.push(h);
        pinv_norms.push(pinv_norm);
    }

    let gram = kernel_matrix(clusters.points(), kernel)?;
    let factor = factorize(&gram, lambda)?;
    let coords = clusters.coordinate_matrix();
    let solved_coords = factor.solve_mat(&coords); // (K + lambda I)^{-1} P

    let mut blocks = Vec::with_capacity(m + 1);
    for j in 0..=m {
        // row i of the interpolation matrix evaluates the features at the
        // regressed image g_j~(x_i), stored as column j of H_i
        let images: Vec<DVector<f64>> = regressions
            .iter()
            .map(|h| DVector::from_column_slice(h.column(j).as_slice()))
            .collect();
        let k_gj = cross_kernel_matrix(&images, clusters, kernel);
        let block_t = factor.solve_mat(&(&k_gj * &solved_coords));
        blocks.push(block_t.transpose());
    }

    Ok(ControlSurrogate {
        kernel: kernel.clone(),
        clusters: clusters.clone(),
        lambda,
        eps_c: data.cluster_radius(),
        control_dim: m,
        blocks,
        regressions,
        pinv_norms,
        factor,
    })
}

impl ControlSurrogate {
    pub fn kernel(&self) -> &WendlandKernel {
        &self.kernel
    }

    pub fn clusters(&self) -> &ClusterSet {
        &self.clusters
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn cluster_radius(&self) -> f64 {
        self.eps_c
    }

    pub fn state_dim(&self) -> usize {
        self.clusters.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn coefficient_block(&self, j: usize) -> &DMatrix<f64> {
        &self.blocks[j]
    }

    pub fn regression(&self, cluster: usize) -> &DMatrix<f64> {
        &self.regressions[cluster]
    }

    pub fn pinv_norms(&self) -> &[f64] {
        &self.pinv_norms
    }

    pub fn factor(&self) -> &KernelMatrixFactor {
        &self.factor
    }

    /// Surrogate step `F_eps(x, u) = g0_eps(x) + G_eps(x) u`.
    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "surrogate state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if u.len() != self.control_dim {
            return Err(Error::DimensionMismatch {
                what: "surrogate control",
                expected: self.control_dim,
                got: u.len(),
            });
        }
        Ok(self.eval_unchecked(x, u))
    }

    fn eval_unchecked(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let kx = self.kernel.features(&self.clusters, x);
        if kx.iter().all(|&v| v == 0.0) {
            // outside every support the interpolant vanishes
            return DVector::zeros(self.state_dim());
        }
        let mut out = &self.blocks[0] * &kx;
        for j in 0..self.control_dim {
            out += (&self.blocks[j + 1] * &kx) * u[j];
        }
        out
    }

    /// Drift part `g0_eps(x)`.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let kx = self.kernel.features(&self.clusters, x);
        &self.blocks[0] * kx
    }

    /// Input matrix `G_eps(x)`.
    pub fn input_matrix_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let kx = self.kernel.features(&self.clusters, x);
        let mut g = DMatrix::zeros(self.state_dim(), self.control_dim);
        for j in 0..self.control_dim {
            g.set_column(j, &(&self.blocks[j + 1] * &kx));
        }
        g
    }

    /// State Jacobian of the surrogate. Radial chain rule per active
    /// cluster; the 0/0 limit at `x = x_i` is the zero gradient since
    /// `phi'(0) = 0`.
    pub fn jacobian_x_at(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        if x.len() != self.state_dim() || u.len() != self.control_dim {
            return Err(Error::DimensionMismatch {
                what: "surrogate jacobian input",
                expected: self.state_dim() + self.control_dim,
                got: x.len() + u.len(),
            });
        }
        Ok(self.jacobian_unchecked(x, u))
    }

    fn jacobian_unchecked(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.state_dim();
        let sigma2 = self.kernel.support_radius() * self.kernel.support_radius();
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..self.clusters.len() {
            let point = self.clusters.point(i);
            let r2 = crate::kernel::distance_squared(x, point);
            if r2 == 0.0 || r2 >= sigma2 {
                continue;
            }
            let r = r2.sqrt();
            let scale = self.kernel.phi_deriv_at(r) / r;
            // rank-one update coeff_i * (scale * (x - x_i))^T
            for c in 0..n {
                let g = scale * (x[c] - point[c]);
                for rr in 0..n {
                    let mut coeff = self.blocks[0][(rr, i)];
                    for j in 0..self.control_dim {
                        coeff += self.blocks[j + 1][(rr, i)] * u[j];
                    }
                    jac[(rr, c)] += coeff * g;
                }
            }
        }
        jac
    }

    /// Computable factors of the uniform error bound: fill distance,
    /// `|(K + lambda I)^{-1}|`, `max_i |U_i^dagger|`, and the constant
    /// `c = max_i |U_i^dagger| phi(0)^{1/2} (max_{|v|_inf<=1} v^T K^{-1} v)^{1/2}`.
    pub fn error_constants(
        &self,
        domain: &AxisBox,
        fill_resolution: usize,
    ) -> Result<ErrorConstants> {
        let h = fill_distance(&self.clusters, domain, fill_resolution)?;
        let inverse_norm = self.factor.inverse_spectral_norm()?;
        let max_pinv_norm = self.pinv_norms.iter().cloned().fold(0.0, f64::max);
        let (cube_max, exact) = cube_quadratic_max(&self.factor);
        let k = self.kernel.smoothness() as f64;
        let phi0 = self.kernel.phi_at(0.0);
        Ok(ErrorConstants {
            fill_distance: h,
            eps_h: h.powf(k - 0.5),
            inverse_norm,
            max_pinv_norm,
            cube_quadratic_max: cube_max,
            cube_bound_exact: exact,
            regression_constant: max_pinv_norm * phi0.sqrt() * cube_max.sqrt(),
            cluster_radius: self.eps_c,
            lambda: self.lambda,
            log10_condition: self.factor.log10_condition(),
        })
    }

    /// Serializes header, cluster coordinates, coefficient blocks, the
    /// per-cluster regressions and pseudoinverse norms. Floats travel as raw
    /// little-endian bytes, so round trips are bit-exact.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let n = self.state_dim();
        let d = self.clusters.len();
        let m = self.control_dim;
        let mut floats = Vec::with_capacity(3 + d * n + (m + 1) * n * d + d * n * (m + 1) + d);
        floats.push(self.kernel.support_radius());
        floats.push(self.lambda);
        floats.push(self.eps_c);
        for p in self.clusters.points() {
            floats.extend(p.iter());
        }
        for block in &self.blocks {
            for r in 0..n {
                for c in 0..d {
                    floats.push(block[(r, c)]);
                }
            }
        }
        for h in &self.regressions {
            for r in 0..n {
                for c in 0..=m {
                    floats.push(h[(r, c)]);
                }
            }
        }
        floats.extend(&self.pinv_norms);

        let mut w = BufWriter::new(File::create(path)?);
        io::write_header(
            &mut w,
            "control",
            &[
                ("n", n.to_string()),
                ("k", self.kernel.smoothness().to_string()),
                ("d", d.to_string()),
                ("m", m.to_string()),
            ],
            floats.len(),
        )?;
        io::write_f64s(&mut w, &floats)?;
        Ok(())
    }

    /// Reads a file written by [`ControlSurrogate::save`]. The kernel matrix
    /// factorization is rebuilt from the stored cluster coordinates.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path_str = path.as_ref().display().to_string();
        let mut r = BufReader::new(File::open(&path)?);
        let header = io::read_header(&mut r, &path_str)?;
        if header.kind != "control" {
            return Err(Error::MalformedFile {
                path: path_str,
                why: format!("expected kind `control`, found `{}`", header.kind),
            });
        }
        let n = header.usize_field("n", &path_str)?;
        let k = header.usize_field("k", &path_str)?;
        let d = header.usize_field("d", &path_str)?;
        let m = header.usize_field("m", &path_str)?;
        let floats = io::read_f64s(&mut r, header.float_count, &path_str)?;
        let mut cur = FloatCursor::new(&floats, &path_str);

        let sigma = cur.take_one()?;
        let lambda = cur.take_one()?;
        let eps_c = cur.take_one()?;
        let kernel = WendlandKernel::new(n, k, sigma)?;
        let mut points = Vec::with_capacity(d);
        for _ in 0..d {
            points.push(DVector::from_column_slice(cur.take(n)?));
        }
        let clusters = ClusterSet::new(points)?;
        let mut blocks = Vec::with_capacity(m + 1);
        for _ in 0..=m {
            blocks.push(DMatrix::from_row_slice(n, d, cur.take(n * d)?));
        }
        let mut regressions = Vec::with_capacity(d);
        for _ in 0..d {
            regressions.push(DMatrix::from_row_slice(n, m + 1, cur.take(n * (m + 1))?));
        }
        let pinv_norms = cur.take(d)?.to_vec();
        cur.finish()?;

        let gram = kernel_matrix(clusters.points(), &kernel)?;
        let factor = factorize(&gram, lambda)?;
        Ok(Self {
            kernel,
            clusters,
            lambda,
            eps_c,
            control_dim: m,
            blocks,
            regressions,
            pinv_norms,
            factor,
        })
    }
}

impl PredictionModel for ControlSurrogate {
    fn state_dim(&self) -> usize {
        self.clusters.dim()
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.eval_unchecked(x, u)
    }

    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.input_matrix_at(x)
    }

    fn jacobian_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.jacobian_unchecked(x, u)
    }
}

/// Computable diagnostics of the surrogate error bound.
#[derive(Debug, Clone)]
pub struct ErrorConstants {
    pub fill_distance: f64,
    /// `h^{k - 1/2}`.
    pub eps_h: f64,
    /// `|(K + lambda I)^{-1}|` (spectral).
    pub inverse_norm: f64,
    /// `max_i |U_i^dagger|`.
    pub max_pinv_norm: f64,
    /// `max { v^T (K + lambda I)^{-1} v : |v|_inf <= 1 }`.
    pub cube_quadratic_max: f64,
    /// Whether the cube maximum is exact (vertex enumeration) or a lower
    /// bound (random signs plus coordinate ascent).
    pub cube_bound_exact: bool,
    /// `c = max_i |U_i^dagger| phi(0)^{1/2} cube_max^{1/2}`.
    pub regression_constant: f64,
    pub cluster_radius: f64,
    pub lambda: f64,
    pub log10_condition: f64,
}

impl fmt::Display for ErrorConstants {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "fill distance h_X        {:.6e}", self.fill_distance)?;
        writeln!(f, "eps_h = h^(k-1/2)        {:.6e}", self.eps_h)?;
        writeln!(f, "|(K+lambda I)^-1|        {:.6e}", self.inverse_norm)?;
        writeln!(f, "max_i |U_i^dagger|       {:.6e}", self.max_pinv_norm)?;
        writeln!(
            f,
            "cube max v'K^-1v         {:.6e} ({})",
            self.cube_quadratic_max,
            if self.cube_bound_exact {
                "exact"
            } else {
                "lower bound"
            }
        )?;
        writeln!(
            f,
            "constant c               {:.6e}",
            self.regression_constant
        )?;
        writeln!(f, "cluster radius eps_c     {:.6e}", self.cluster_radius)?;
        writeln!(f, "lambda                   {:.6e}", self.lambda)?;
        write!(f, "log10 condition estimate {:.2}", self.log10_condition)
    }
}

/// Maximum of the convex quadratic `v^T (K + lambda I)^{-1} v` over the unit
/// cube. The maximum is attained at a sign vertex: enumerated exactly for
/// `d <= 12` (half the vertices by symmetry), otherwise lower-bounded by
/// 1000 seeded random sign vectors refined by coordinate-ascent sweeps.
pub fn cube_quadratic_max(factor: &KernelMatrixFactor) -> (f64, bool) {
    let d = factor.size();
    let value = |v: &DVector<f64>| factor.forward_solve(v).norm_squared();
    if d <= CUBE_ENUM_LIMIT {
        let mut best = 0.0_f64;
        for bits in 0..(1u64 << (d - 1)) {
            let v = DVector::from_fn(d, |i, _| {
                if i == 0 {
                    1.0
                } else if bits >> (i - 1) & 1 == 1 {
                    -1.0
                } else {
                    1.0
                }
            });
            best = best.max(value(&v));
        }
        return (best, true);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5167_17e5);
    let mut best_v = DVector::from_element(d, 1.0);
    let mut best = value(&best_v);
    for _ in 0..1000 {
        let v = DVector::from_fn(d, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 });
        let f = value(&v);
        if f > best {
            best = f;
            best_v = v;
        }
    }
    // coordinate ascent: flip signs that improve the quadratic, using
    // delta_j = 4 ((A^-1)_jj - v_j (A^-1 v)_j); the stale-gradient sweep is
    // safe because only exactly re-evaluated improvements are kept
    let diag = inverse_diagonal(factor);
    for _ in 0..8 {
        let w = factor.solve(&best_v);
        let mut candidate = best_v.clone();
        let mut flipped = false;
        for j in 0..d {
            if 4.0 * (diag[j] - candidate[j] * w[j]) > 0.0 {
                candidate[j] = -candidate[j];
                flipped = true;
            }
        }
        if !flipped {
            break;
        }
        let f = value(&candidate);
        if f > best {
            best = f;
            best_v = candidate;
        } else {
            break;
        }
    }
    (best, false)
}

fn inverse_diagonal(factor: &KernelMatrixFactor) -> DVector<f64> {
    let d = factor.size();
    let mut diag = DVector::zeros(d);
    for j in 0..d {
        let mut e = DVector::zeros(d);
        e[j] = 1.0;
        diag[j] = factor.forward_solve(&e).norm_squared();
    }
    diag
}

/// Sup of the infinity-norm one-step error against `truth`, and the sup of
/// the proportional ratio `error / dist(x, X)` over test points farther than
/// [`RATIO_EXCLUSION_RADIUS`] from the cluster set.
pub struct SupErrorReport {
    pub sup_error: f64,
    pub sup_ratio: f64,
    pub ratio_points: usize,
}

pub fn empirical_sup_error<F>(
    model: &ControlSurrogate,
    truth: F,
    test_points: &[(DVector<f64>, DVector<f64>)],
) -> Result<SupErrorReport>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    if test_points.is_empty() {
        return Err(Error::Empty("test point set"));
    }
    let mut sup_error = 0.0_f64;
    let mut sup_ratio = 0.0_f64;
    let mut ratio_points = 0;
    for (x, u) in test_points {
        let err = (truth(x, u) - model.eval(x, u)?).amax();
        sup_error = sup_error.max(err);
        let dist = model.clusters().min_distance(x);
        if dist >= RATIO_EXCLUSION_RADIUS {
            sup_ratio = sup_ratio.max(err / dist);
            ratio_points += 1;
        }
    }
    Ok(SupErrorReport {
        sup_error,
        sup_ratio,
        ratio_points,
    })
}
