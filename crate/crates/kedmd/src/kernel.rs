//! Wendland radial basis functions, kernel matrices and their Cholesky
//! factors, and fill-distance computation.
//!
//! The shipped radial profile is the smoothness-1 Wendland function
//! `phi(r) = (1/20) (1-r)^4 (4r+1)` on `[0,1)`, zero outside, which is C^2
//! and strictly positive definite on `R^n` for `n <= 3`. A support radius
//! `sigma` rescales the argument: `kappa(x,y) = phi(|x-y|/sigma)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::AxisBox;
use crate::error::{Error, Result};

/// Points below this Euclidean distance are treated as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Compactly supported Wendland kernel `kappa(x,y) = phi_{n,k}(|x-y|/sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WendlandKernel {
    dim: usize,
    smoothness: usize,
    support_radius: f64,
}

impl WendlandKernel {
    /// Only `k = 1` with `n <= 3` ships; other combinations are rejected.
    pub fn new(dim: usize, smoothness: usize, support_radius: f64) -> Result<Self> {
        if smoothness != 1 || dim == 0 || dim > 3 {
            return Err(Error::UnsupportedKernel {
                n: dim,
                k: smoothness,
            });
        }
        if !(support_radius.is_finite() && support_radius > 0.0) {
            return Err(Error::InvalidArgument {
                what: "support radius",
                why: format!("must be positive and finite, got {support_radius}"),
            });
        }
        Ok(Self {
            dim,
            smoothness,
            support_radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn smoothness(&self) -> usize {
        self.smoothness
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Radial profile at distance `r`, i.e. `phi_{n,1}(r/sigma)`.
    pub fn phi(&self, r: f64) -> Result<f64> {
        if r < 0.0 || r.is_nan() {
            return Err(Error::NegativeRadius(r));
        }
        Ok(self.phi_at(r))
    }

    /// Derivative of [`WendlandKernel::phi`] with respect to `r`
    /// (the `1/sigma` chain-rule factor is included).
    pub fn phi_deriv(&self, r: f64) -> Result<f64> {
        if r < 0.0 || r.is_nan() {
            return Err(Error::NegativeRadius(r));
        }
        Ok(self.phi_deriv_at(r))
    }

    #[inline]
    pub(crate) fn phi_at(&self, r: f64) -> f64 {
        let q = r / self.support_radius;
        if q >= 1.0 {
            return 0.0;
        }
        let omq = 1.0 - q;
        let omq2 = omq * omq;
        0.05 * omq2 * omq2 * (4.0 * q + 1.0)
    }

    #[inline]
    pub(crate) fn phi_deriv_at(&self, r: f64) -> f64 {
        let q = r / self.support_radius;
        if q >= 1.0 {
            return 0.0;
        }
        let omq = 1.0 - q;
        -q * omq * omq * omq / self.support_radius
    }

    /// Kernel value `kappa(x, y)`.
    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.phi_at(distance(x, y))
    }

    /// Feature vector `k_X(x) = (Phi_{x_1}(x), ..., Phi_{x_d}(x))`.
    pub fn features(&self, sites: &ClusterSet, x: &DVector<f64>) -> DVector<f64> {
        let r2max = self.support_radius * self.support_radius;
        DVector::from_fn(sites.len(), |i, _| {
            let d2 = distance_squared(x, sites.point(i));
            if d2 >= r2max {
                0.0
            } else {
                self.phi_at(d2.sqrt())
            }
        })
    }

    /// Gradient of the canonical feature `Phi_c = kappa(c, .)` at `x`.
    /// The 0/0 limit at `x = c` is zero because `phi'(0) = 0`.
    pub fn feature_gradient(&self, center: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let diff = x - center;
        let r = diff.norm();
        if r == 0.0 || r >= self.support_radius {
            return DVector::zeros(x.len());
        }
        diff * (self.phi_deriv_at(r) / r)
    }
}

/// The virtual observation (cluster) points at which the surrogate
/// interpolates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    points: Vec<DVector<f64>>,
    dim: usize,
}

impl ClusterSet {
    pub fn new(points: Vec<DVector<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .map(DVector::len)
            .ok_or(Error::Empty("cluster set"))?;
        if let Some(bad) = points.iter().position(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                what: "cluster point",
                expected: dim,
                got: points[bad].len(),
            });
        }
        Ok(Self { points, dim })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    /// Distance from `x` to the nearest cluster point, `dist(x, X)`.
    pub fn min_distance(&self, x: &DVector<f64>) -> f64 {
        self.points
            .iter()
            .map(|p| distance_squared(x, p))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    /// Matrix with row `i` holding the coordinates of point `i`; its columns
    /// are the coordinate observables evaluated on the cluster set.
    pub fn coordinate_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim, |i, j| self.points[i][j])
    }
}

#[inline]
pub(crate) fn distance_squared(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let mut d2 = 0.0;
    for a in 0..x.len() {
        let t = x[a] - y[a];
        d2 += t * t;
    }
    d2
}

#[inline]
pub(crate) fn distance(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    distance_squared(x, y).sqrt()
}

/// Kernel Gram matrix `K_Z` with entries `kappa(z_i, z_j)`. Points closer
/// than [`DUPLICATE_TOL`] are rejected since positive definiteness would be
/// lost numerically.
pub fn kernel_matrix(points: &[DVector<f64>], kernel: &WendlandKernel) -> Result<DMatrix<f64>> {
    let d = points.len();
    if d == 0 {
        return Err(Error::Empty("point set"));
    }
    let mut k = DMatrix::zeros(d, d);
    for i in 0..d {
        k[(i, i)] = kernel.phi_at(0.0);
        for j in (i + 1)..d {
            let dist = distance(&points[i], &points[j]);
            if dist < DUPLICATE_TOL {
                return Err(Error::DuplicatePoints {
                    i,
                    j,
                    dist,
                    tol: DUPLICATE_TOL,
                });
            }
            let v = kernel.phi_at(dist);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cross matrix with rows `k_X(y_i)^T`, i.e. entry `(i, j) = kappa(y_i, x_j)`.
pub fn cross_kernel_matrix(
    rows: &[DVector<f64>],
    sites: &ClusterSet,
    kernel: &WendlandKernel,
) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(rows.len(), sites.len());
    for (i, y) in rows.iter().enumerate() {
        for j in 0..sites.len() {
            k[(i, j)] = kernel.phi_at(distance(y, sites.point(j)));
        }
    }
    k
}

/// Lower-triangular Cholesky factor of `K + lambda I`.
///
/// The inverse is never formed; every occurrence of `(K + lambda I)^{-1} v`
/// is realized as a pair of triangular solves against this factor.
#[derive(Debug, Clone)]
pub struct KernelMatrixFactor {
    // row-major lower triangle, entries above the diagonal are zero
    lower: Vec<f64>,
    size: usize,
    lambda: f64,
    log10_condition: f64,
}

/// Cholesky factorization of `K + lambda I`. On failure the 1-based index of
/// the leading minor that lost positive definiteness is reported.
pub fn factorize(k: &DMatrix<f64>, lambda: f64) -> Result<KernelMatrixFactor> {
    let d = k.nrows();
    if d == 0 {
        return Err(Error::Empty("matrix"));
    }
    if k.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: "kernel matrix (must be square)",
            expected: d,
            got: k.ncols(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "lambda",
            why: format!("must be nonnegative and finite, got {lambda}"),
        });
    }
    let scale = k.amax().max(1.0);
    for i in 0..d {
        for j in (i + 1)..d {
            if (k[(i, j)] - k[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidArgument {
                    what: "kernel matrix",
                    why: format!("not symmetric at ({i}, {j})"),
                });
            }
        }
    }

    // Row-major storage: the inner accumulation over columns 0..j of rows i
    // and j is a dot product of two contiguous row prefixes.
    let mut a: Vec<f64> = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let mut v = k[(i, j)];
            if i == j {
                v += lambda;
            }
            a.push(v);
        }
    }
    for j in 0..d {
        let pivot = {
            let row_j = &a[j * d..j * d + j];
            a[j * d + j] - row_j.iter().map(|v| v * v).sum::<f64>()
        };
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite {
                minor: j + 1,
                pivot,
            });
        }
        let ljj = pivot.sqrt();
        a[j * d + j] = ljj;
        for i in (j + 1)..d {
            let s: f64 = a[i * d..i * d + j]
                .iter()
                .zip(&a[j * d..j * d + j])
                .map(|(x, y)| x * y)
                .sum();
            a[i * d + j] = (a[i * d + j] - s) / ljj;
        }
        for c in (j + 1)..d {
            a[j * d + c] = 0.0;
        }
    }

    let mut factor = KernelMatrixFactor {
        lower: a,
        size: d,
        lambda,
        log10_condition: 0.0,
    };
    factor.log10_condition = factor.estimate_log10_condition();
    Ok(factor)
}

impl KernelMatrixFactor {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Base-10 logarithm of the 2-norm condition number estimate of
    /// `K + lambda I`, from a short pair of power iterations.
    pub fn log10_condition(&self) -> f64 {
        self.log10_condition
    }

    /// Solves `L y = b` (forward substitution).
    pub fn forward_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let d = self.size;
        let mut y = b.clone();
        for i in 0..d {
            let s: f64 = self.lower[i * d..i * d + i]
                .iter()
                .zip(y.iter())
                .map(|(l, v)| l * v)
                .sum();
            y[i] = (y[i] - s) / self.lower[i * d + i];
        }
        y
    }

    /// Solves `L^T z = y` (back substitution).
    fn backward_solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let d = self.size;
        let mut z = y.clone();
        for i in (0..d).rev() {
            let mut s = 0.0;
            for r in (i + 1)..d {
                s += self.lower[r * d + i] * z[r];
            }
            z[i] = (z[i] - s) / self.lower[i * d + i];
        }
        z
    }

    /// Applies `(K + lambda I)^{-1}` to a vector.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.backward_solve(&self.forward_solve(b))
    }

    /// Applies `(K + lambda I)^{-1}` to every column of `b`.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.size, b.ncols());
        for c in 0..b.ncols() {
            let col = DVector::from_column_slice(b.column(c).as_slice());
            out.set_column(c, &self.solve(&col));
        }
        out
    }

    /// Multiplies by the reconstructed matrix, `L (L^T v)`.
    pub fn matvec(&self, v: &DVector<f64>) -> DVector<f64> {
        let d = self.size;
        let mut y = DVector::zeros(d);
        // y = L^T v
        for i in 0..d {
            let mut s = 0.0;
            for r in i..d {
                s += self.lower[r * d + i] * v[r];
            }
            y[i] = s;
        }
        // out = L y
        let mut out = DVector::zeros(d);
        for i in 0..d {
            out[i] = self.lower[i * d..i * d + i + 1]
                .iter()
                .zip(y.iter())
                .map(|(l, w)| l * w)
                .sum();
        }
        out
    }

    /// Spectral norm of `(K + lambda I)^{-1}`, i.e. `1 / lambda_min`, by
    /// inverse power iteration to relative tolerance 1e-8.
    pub fn inverse_spectral_norm(&self) -> Result<f64> {
        const MAX_ITER: usize = 10_000;
        const TOL: f64 = 1e-8;
        let mut rng = ChaCha8Rng::seed_from_u64(0x1b57_2a11);
        let mut v = DVector::from_fn(self.size, |_, _| rng.gen_range(-1.0..1.0_f64));
        if self.size == 1 {
            return Ok(1.0 / (self.lower[0] * self.lower[0]));
        }
        v /= v.norm();
        let mut estimate = 0.0;
        for _ in 0..MAX_ITER {
            let y = self.solve(&v);
            let mu = y.norm();
            if !mu.is_finite() || mu == 0.0 {
                return Err(Error::PowerIterationStalled {
                    iterations: MAX_ITER,
                    estimate: mu,
                });
            }
            let converged = (mu - estimate).abs() <= TOL * mu;
            estimate = mu;
            v = y / mu;
            if converged {
                return Ok(estimate);
            }
        }
        Err(Error::PowerIterationStalled {
            iterations: MAX_ITER,
            estimate,
        })
    }

    fn estimate_log10_condition(&self) -> f64 {
        // Coarse power iterations; this is a diagnostic, not a certified bound.
        let mut rng = ChaCha8Rng::seed_from_u64(0x0c0d_e5ca);
        let mut v = DVector::from_fn(self.size, |_, _| rng.gen_range(-1.0..1.0_f64));
        v /= v.norm();
        let mut hi = 1.0;
        for _ in 0..60 {
            let y = self.matvec(&v);
            let mu = y.norm();
            if mu == 0.0 || !mu.is_finite() {
                return f64::INFINITY;
            }
            if (mu - hi).abs() <= 1e-3 * mu {
                hi = mu;
                break;
            }
            hi = mu;
            v = y / mu;
        }
        let mut w = DVector::from_fn(self.size, |i, _| if i % 2 == 0 { 1.0 } else { -0.5 });
        w /= w.norm();
        let mut inv = 1.0;
        for _ in 0..60 {
            let y = self.solve(&w);
            let mu = y.norm();
            if mu == 0.0 || !mu.is_finite() {
                return f64::INFINITY;
            }
            if (mu - inv).abs() <= 1e-3 * mu {
                inv = mu;
                break;
            }
            inv = mu;
            w = y / mu;
        }
        (hi * inv).log10()
    }
}

/// Approximates the fill distance `h_X = sup_x min_i |x - x_i|` over `domain`
/// by maximizing over a uniform probe grid with `resolution` points per axis
/// (corners included). A lower bound on the true supremum.
pub fn fill_distance(clusters: &ClusterSet, domain: &AxisBox, resolution: usize) -> Result<f64> {
    if clusters.is_empty() {
        return Err(Error::Empty("cluster set"));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument {
            what: "fill-distance resolution",
            why: format!("need at least 2 probe points per axis, got {resolution}"),
        });
    }
    if domain.dim() != clusters.dim() {
        return Err(Error::DimensionMismatch {
            what: "fill-distance domain",
            expected: clusters.dim(),
            got: domain.dim(),
        });
    }
    for (i, p) in clusters.points().iter().enumerate() {
        if !domain.contains(p) {
            return Err(Error::InvalidArgument {
                what: "cluster set",
                why: format!("point {i} lies outside the domain box"),
            });
        }
    }
    let mut h2: f64 = 0.0;
    for probe in domain.grid(resolution) {
        let d2 = clusters
            .points()
            .iter()
            .map(|p| (&probe - p).norm_squared())
            .fold(f64::INFINITY, f64::min);
        h2 = h2.max(d2);
    }
    Ok(h2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn unit_kernel() -> WendlandKernel {
        WendlandKernel::new(2, 1, 1.0).unwrap()
    }

    #[test]
    fn phi_hand_values() {
        let k = unit_kernel();
        assert_eq!(k.phi(0.0).unwrap(), 0.05);
        assert_eq!(k.phi(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(k.phi(0.5).unwrap(), 0.009375, epsilon = 1e-15);
        assert_eq!(k.phi(2.0).unwrap(), 0.0);
    }

    #[test]
    fn phi_deriv_hand_values() {
        let k = unit_kernel();
        assert_eq!(k.phi_deriv(0.0).unwrap(), 0.0);
        assert_eq!(k.phi_deriv(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(k.phi_deriv(0.5).unwrap(), -0.0625, epsilon = 1e-15);
    }

    #[test]
    fn phi_rejects_negative_radius() {
        assert!(matches!(
            unit_kernel().phi(-0.1),
            Err(Error::NegativeRadius(_))
        ));
        assert!(unit_kernel().phi_deriv(-1.0).is_err());
    }

    #[test]
    fn unsupported_parameters_rejected() {
        assert!(matches!(
            WendlandKernel::new(2, 2, 1.0),
            Err(Error::UnsupportedKernel { .. })
        ));
        assert!(WendlandKernel::new(4, 1, 1.0).is_err());
        assert!(WendlandKernel::new(2, 1, 0.0).is_err());
    }

    #[test]
    fn scaled_support() {
        let k = WendlandKernel::new(2, 1, 2.0).unwrap();
        assert_eq!(k.phi(2.0).unwrap(), 0.0);
        assert!(k.phi(1.9).unwrap() > 0.0);
        // phi(r/sigma) at r = 1 equals the unit kernel at 0.5
        assert_abs_diff_eq!(k.phi(1.0).unwrap(), 0.009375, epsilon = 1e-15);
    }

    #[test]
    fn kernel_matrix_single_point_and_support() {
        let k = unit_kernel();
        let m = kernel_matrix(&[dvector![0.3, -0.7]], &k).unwrap();
        assert_eq!(m, DMatrix::from_element(1, 1, 0.05));

        let far = kernel_matrix(&[dvector![0.0, 0.0], dvector![1.5, 0.0]], &k).unwrap();
        assert_eq!(far[(0, 1)], 0.0);
        assert_eq!(far[(0, 0)], 0.05);
    }

    #[test]
    fn kernel_matrix_rejects_duplicates() {
        let k = unit_kernel();
        let err = kernel_matrix(
            &[dvector![0.1, 0.1], dvector![0.5, 0.5], dvector![0.1, 0.1]],
            &k,
        )
        .unwrap_err();
        match err {
            Error::DuplicatePoints { i, j, .. } => {
                assert_eq!((i, j), (0, 2));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn factor_scalar_and_identity() {
        let f = factorize(&DMatrix::from_element(1, 1, 0.05), 0.0).unwrap();
        assert_abs_diff_eq!(f.solve(&dvector![1.0])[0], 20.0, epsilon = 1e-12);

        let f = factorize(&DMatrix::identity(2, 2), 1.0).unwrap();
        let s = f.solve(&dvector![1.0, 1.0]);
        assert_abs_diff_eq!(s[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(s[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn factor_reports_failing_minor() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]); // indefinite
        match factorize(&m, 0.0).unwrap_err() {
            Error::NotPositiveDefinite { minor, .. } => assert_eq!(minor, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn solve_residual_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 50;
        let b = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0_f64));
        let spd = &b * b.transpose() + DMatrix::identity(d, d) * 0.5;
        let f = factorize(&spd, 1e-3).unwrap();
        let rhs = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0_f64));
        let x = f.solve(&rhs);
        let residual = (&spd * &x + &x * 1e-3 - &rhs).norm() / rhs.norm();
        assert!(residual <= 1e-10, "residual {residual}");
    }

    #[test]
    fn inverse_spectral_norm_matches_eigendecomposition() {
        assert_abs_diff_eq!(
            factorize(&DMatrix::from_element(1, 1, 0.05), 0.0)
                .unwrap()
                .inverse_spectral_norm()
                .unwrap(),
            20.0,
            epsilon = 1e-8
        );

        let diag = DMatrix::from_diagonal(&dvector![1.0, 4.0]);
        assert_abs_diff_eq!(
            factorize(&diag, 0.0)
                .unwrap()
                .inverse_spectral_norm()
                .unwrap(),
            1.0,
            epsilon = 1e-7
        );

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let d = 12;
        let b = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0_f64));
        let spd = &b * b.transpose() + DMatrix::identity(d, d) * 0.1;
        let f = factorize(&spd, 0.0).unwrap();
        let eig = spd.clone().symmetric_eigen();
        let expected = 1.0 / eig.eigenvalues.min();
        let got = f.inverse_spectral_norm().unwrap();
        assert!(
            (got - expected).abs() <= 1e-6 * expected,
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn fill_distance_single_origin_cluster() {
        let clusters = ClusterSet::new(vec![dvector![0.0, 0.0]]).unwrap();
        let h = fill_distance(&clusters, &AxisBox::cube(2, 2.0), 41).unwrap();
        assert_abs_diff_eq!(h, 8.0_f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn fill_distance_zero_when_probes_covered() {
        let domain = AxisBox::cube(2, 1.0);
        let clusters = ClusterSet::new(domain.grid(5)).unwrap();
        let h = fill_distance(&clusters, &domain, 5).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn fill_distance_monotone_under_refinement() {
        let domain = AxisBox::cube(2, 2.0);
        let few = ClusterSet::new(vec![dvector![0.0, 0.0], dvector![1.0, 1.0]]).unwrap();
        let mut pts = few.points().to_vec();
        pts.push(dvector![-1.5, -1.5]);
        let more = ClusterSet::new(pts).unwrap();
        let h_few = fill_distance(&few, &domain, 33).unwrap();
        let h_more = fill_distance(&more, &domain, 33).unwrap();
        assert!(h_more <= h_few);
    }

    #[test]
    fn fill_distance_rejects_outside_points() {
        let clusters = ClusterSet::new(vec![dvector![5.0, 0.0]]).unwrap();
        assert!(fill_distance(&clusters, &AxisBox::cube(2, 2.0), 11).is_err());
    }
}
