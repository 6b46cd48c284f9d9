//! Kernel EDMD for autonomous systems: the interpolation-based matrix
//! approximant of the Koopman operator and observable/state propagation.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::{self, FloatCursor};
use crate::kernel::{cross_kernel_matrix, factorize, kernel_matrix, ClusterSet, WendlandKernel};

/// Fitted autonomous kEDMD model.
///
/// `koopman` realizes the triple product of the kernel matrix inverses with
/// the cross matrix of mapped points; it is stored explicitly (d x d, built
/// from two factored solves) because queries dominate once fitted.
#[derive(Debug, Clone)]
pub struct AutonomousModel {
    kernel: WendlandKernel,
    clusters: ClusterSet,
    lambda: f64,
    koopman: DMatrix<f64>,
    /// Row `l` holds the propagation coefficients of the `l`-th coordinate
    /// observable; `predict_state(x) = state_coeffs * k_X(x)`.
    state_coeffs: DMatrix<f64>,
}

/// Fits the matrix approximant from cluster points and their images
/// `F(x_i)`. With `lambda > 0` both inverse factors are replaced by
/// `(K + lambda I)^{-1}`.
pub fn fit_autonomous(
    clusters: &ClusterSet,
    images: &[DVector<f64>],
    kernel: &WendlandKernel,
    lambda: f64,
) -> Result<AutonomousModel> {
    if images.len() != clusters.len() {
        return Err(Error::DimensionMismatch {
            what: "image list",
            expected: clusters.len(),
            got: images.len(),
        });
    }
    if kernel.dim() != clusters.dim() {
        return Err(Error::DimensionMismatch {
            what: "kernel dimension",
            expected: clusters.dim(),
            got: kernel.dim(),
        });
    }
    let gram = kernel_matrix(clusters.points(), kernel)?;
    let factor = factorize(&gram, lambda)?;
    // row i of the cross matrix evaluates the features at F(x_i)
    let k_f = cross_kernel_matrix(images, clusters, kernel);
    let left = factor.solve_mat(&k_f);
    let koopman = factor.solve_mat(&left.transpose()).transpose();
    let state_coeffs = (&koopman * clusters.coordinate_matrix()).transpose();
    Ok(AutonomousModel {
        kernel: kernel.clone(),
        clusters: clusters.clone(),
        lambda,
        koopman,
        state_coeffs,
    })
}

impl AutonomousModel {
    pub fn kernel(&self) -> &WendlandKernel {
        &self.kernel
    }

    pub fn clusters(&self) -> &ClusterSet {
        &self.clusters
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn koopman_matrix(&self) -> &DMatrix<f64> {
        &self.koopman
    }

    /// Propagated observable `psi+(x) = (K^ psi_X)^T k_X(x)` from the values
    /// of `psi` on the cluster set.
    pub fn predict_observable(&self, psi_values: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
        if psi_values.len() != self.clusters.len() {
            return Err(Error::DimensionMismatch {
                what: "observable values",
                expected: self.clusters.len(),
                got: psi_values.len(),
            });
        }
        if x.len() != self.clusters.dim() {
            return Err(Error::DimensionMismatch {
                what: "query point",
                expected: self.clusters.dim(),
                got: x.len(),
            });
        }
        let coeff = &self.koopman * psi_values;
        Ok(coeff.dot(&self.kernel.features(&self.clusters, x)))
    }

    /// Stacks the propagation of the coordinate observables into a one-step
    /// state prediction. Outside the union of supports the prediction decays
    /// to zero (compact support); no error is raised for such queries.
    pub fn predict_state(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.clusters.dim() {
            return Err(Error::DimensionMismatch {
                what: "query point",
                expected: self.clusters.dim(),
                got: x.len(),
            });
        }
        Ok(&self.state_coeffs * self.kernel.features(&self.clusters, x))
    }

    /// Serializes header `(n, k, sigma, lambda, d)`, cluster coordinates and
    /// the matrix approximant row-major; bit-exact for doubles.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let n = self.clusters.dim();
        let d = self.clusters.len();
        let mut floats = Vec::with_capacity(2 + d * n + d * d);
        floats.push(self.kernel.support_radius());
        floats.push(self.lambda);
        for p in self.clusters.points() {
            floats.extend(p.iter());
        }
        for r in 0..d {
            for c in 0..d {
                floats.push(self.koopman[(r, c)]);
            }
        }
        let mut w = BufWriter::new(File::create(path)?);
        io::write_header(
            &mut w,
            "autonomous",
            &[
                ("n", n.to_string()),
                ("k", self.kernel.smoothness().to_string()),
                ("d", d.to_string()),
            ],
            floats.len(),
        )?;
        io::write_f64s(&mut w, &floats)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path_str = path.as_ref().display().to_string();
        let mut r = BufReader::new(File::open(&path)?);
        let header = io::read_header(&mut r, &path_str)?;
        if header.kind != "autonomous" {
            return Err(Error::MalformedFile {
                path: path_str,
                why: format!("expected kind `autonomous`, found `{}`", header.kind),
            });
        }
        let n = header.usize_field("n", &path_str)?;
        let k = header.usize_field("k", &path_str)?;
        let d = header.usize_field("d", &path_str)?;
        let floats = io::read_f64s(&mut r, header.float_count, &path_str)?;
        let mut cur = FloatCursor::new(&floats, &path_str);
        let sigma = cur.take_one()?;
        let lambda = cur.take_one()?;
        let kernel = WendlandKernel::new(n, k, sigma)?;
        let mut points = Vec::with_capacity(d);
        for _ in 0..d {
            points.push(DVector::from_column_slice(cur.take(n)?));
        }
        let clusters = ClusterSet::new(points)?;
        let koopman = DMatrix::from_row_slice(d, d, cur.take(d * d)?);
        cur.finish()?;
        let state_coeffs = (&koopman * clusters.coordinate_matrix()).transpose();
        Ok(Self {
            kernel,
            clusters,
            lambda,
            koopman,
            state_coeffs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::chebyshev_grid;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kernel2() -> WendlandKernel {
        WendlandKernel::new(2, 1, 1.0).unwrap()
    }

    fn scattered_points(count: usize, seed: u64) -> ClusterSet {
        // rejection keeps pairwise separation so the Gram matrix stays
        // comfortably positive definite
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<DVector<f64>> = Vec::new();
        while pts.len() < count {
            let p = dvector![rng.gen_range(-2.0..2.0f64), rng.gen_range(-2.0..2.0f64)];
            if pts.iter().all(|q| (q - &p).norm() > 0.2) {
                pts.push(p);
            }
        }
        ClusterSet::new(pts).unwrap()
    }

    #[test]
    fn identity_map_inverts_kernel_matrix() {
        let clusters = scattered_points(12, 4);
        let kernel = kernel2();
        let model = fit_autonomous(&clusters, clusters.points(), &kernel, 0.0).unwrap();
        let gram = kernel_matrix(clusters.points(), &kernel).unwrap();
        let product = model.koopman_matrix() * gram;
        let eye = DMatrix::identity(12, 12);
        assert!((product - eye).amax() <= 1e-8);
    }

    #[test]
    fn identity_map_interpolates_at_clusters() {
        let clusters = scattered_points(15, 6);
        let model = fit_autonomous(&clusters, clusters.points(), &kernel2(), 0.0).unwrap();
        let mut worst = 0.0_f64;
        for p in clusters.points() {
            let pred = model.predict_state(p).unwrap();
            worst = worst.max((pred - p).amax());
        }
        assert!(worst <= 1e-8, "sup interpolation error {worst}");
    }

    #[test]
    fn image_outside_supports_gives_zero_model() {
        let clusters = scattered_points(6, 8);
        let images = vec![dvector![50.0, 50.0]; 6];
        let model = fit_autonomous(&clusters, &images, &kernel2(), 0.0).unwrap();
        assert_eq!(model.koopman_matrix().amax(), 0.0);
    }

    #[test]
    fn zero_map_with_origin_cluster_predicts_zero() {
        let mut pts = scattered_points(9, 10).points().to_vec();
        pts[0] = dvector![0.0, 0.0];
        let clusters = ClusterSet::new(pts).unwrap();
        let images = vec![dvector![0.0, 0.0]; clusters.len()];
        let model = fit_autonomous(&clusters, &images, &kernel2(), 0.0).unwrap();
        for x in [dvector![0.1, 0.3], dvector![-1.0, 0.5], dvector![1.9, -1.9]] {
            let pred = model.predict_state(&x).unwrap();
            assert!(pred.amax() <= 1e-9, "expected zero prediction, got {pred}");
        }
    }

    #[test]
    fn observable_propagation_is_linear() {
        let clusters = scattered_points(10, 12);
        let vdp = crate::systems::ControlAffinePlant::van_der_pol(0.05, 0.1);
        let images: Vec<DVector<f64>> = clusters.points().iter().map(|p| vdp.drift(p)).collect();
        let model = fit_autonomous(&clusters, &images, &kernel2(), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let psi1 = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0f64));
            let psi2 = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0f64));
            let (a, b) = (rng.gen_range(-2.0..2.0f64), rng.gen_range(-2.0..2.0f64));
            let x = dvector![rng.gen_range(-2.0..2.0f64), rng.gen_range(-2.0..2.0f64)];
            let combined = model
                .predict_observable(&(&psi1 * a + &psi2 * b), &x)
                .unwrap();
            let separate = a * model.predict_observable(&psi1, &x).unwrap()
                + b * model.predict_observable(&psi2, &x).unwrap();
            assert_abs_diff_eq!(combined, separate, epsilon = 1e-10);
        }
        // zero observable propagates to zero
        let zero = model
            .predict_observable(&DVector::zeros(10), &dvector![0.4, 0.4])
            .unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn predict_state_stacks_coordinate_observables() {
        let clusters = scattered_points(8, 14);
        let vdp = crate::systems::ControlAffinePlant::van_der_pol(0.05, 0.1);
        let images: Vec<DVector<f64>> = clusters.points().iter().map(|p| vdp.drift(p)).collect();
        let model = fit_autonomous(&clusters, &images, &kernel2(), 0.0).unwrap();
        let x = dvector![0.25, -0.75];
        let stacked = model.predict_state(&x).unwrap();
        for l in 0..2 {
            let psi = DVector::from_fn(8, |i, _| clusters.point(i)[l]);
            let single = model.predict_observable(&psi, &x).unwrap();
            assert_abs_diff_eq!(stacked[l], single, epsilon = 1e-13);
        }
    }

    #[test]
    fn model_file_round_trip_is_bit_exact() {
        let clusters = chebyshev_grid(5, 2.0).unwrap();
        let vdp = crate::systems::ControlAffinePlant::van_der_pol(0.05, 0.1);
        let images: Vec<DVector<f64>> = clusters.points().iter().map(|p| vdp.drift(p)).collect();
        let model = fit_autonomous(&clusters, &images, &kernel2(), 1e-10).unwrap();
        let dir = std::env::temp_dir().join("kedmd_autonomous_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("auto_a.bin");
        let p2 = dir.join("auto_b.bin");
        model.save(&p1).unwrap();
        let loaded = AutonomousModel::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.koopman_matrix(), model.koopman_matrix());
        let x = dvector![0.6, -0.2];
        assert_eq!(
            loaded.predict_state(&x).unwrap(),
            model.predict_state(&x).unwrap()
        );
    }
}
