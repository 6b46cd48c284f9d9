//! Brute-force oracle checks: the factored-solve assembly of the
//! interpolation operators must match the explicit dense-inverse triple
//! products on small instances.

use kedmd::kernel::{cross_kernel_matrix, kernel_matrix, ClusterSet, WendlandKernel};
use kedmd::koopman::fit_autonomous;
use kedmd::surrogate::{fit_control_surrogate, ClusterDataset, ClusterSample};
use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kernel2() -> WendlandKernel {
    WendlandKernel::new(2, 1, 1.0).unwrap()
}

/// Pairwise-separated random points, first point at the origin.
fn random_clusters(count: usize, rng: &mut ChaCha8Rng) -> ClusterSet {
    let mut pts: Vec<DVector<f64>> = vec![dvector![0.0, 0.0]];
    while pts.len() < count {
        let p = dvector![rng.gen_range(-2.0..2.0f64), rng.gen_range(-2.0..2.0f64)];
        if pts.iter().all(|q| (q - &p).norm() > 0.3) {
            pts.push(p);
        }
    }
    ClusterSet::new(pts).unwrap()
}

fn relative_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

#[test]
fn autonomous_matches_dense_inverse_assembly() {
    let kernel = kernel2();
    let mut rng = ChaCha8Rng::seed_from_u64(0xa11ce);
    for trial in 0..20 {
        let d = rng.gen_range(2..=8usize);
        let clusters = random_clusters(d, &mut rng);
        let images: Vec<DVector<f64>> = (0..d)
            .map(|_| dvector![rng.gen_range(-2.0..2.0f64), rng.gen_range(-2.0..2.0f64)])
            .collect();
        let model = fit_autonomous(&clusters, &images, &kernel, 0.0).unwrap();

        let gram_inv = kernel_matrix(clusters.points(), &kernel)
            .unwrap()
            .try_inverse()
            .unwrap();
        let cross = cross_kernel_matrix(&images, &clusters, &kernel);
        let dense = &gram_inv * &cross * &gram_inv;
        let gap = relative_gap(model.koopman_matrix(), &dense);
        assert!(gap <= 1e-8, "trial {trial}: relative gap {gap}");
    }
}

#[test]
fn control_blocks_match_dense_inverse_assembly() {
    let kernel = kernel2();
    let mut rng = ChaCha8Rng::seed_from_u64(0xbee5);
    for trial in 0..20 {
        let d = rng.gen_range(2..=8usize);
        let clusters = random_clusters(d, &mut rng);
        // random data triplets with two opposite controls per cluster
        let samples: Vec<Vec<ClusterSample>> = clusters
            .points()
            .iter()
            .map(|p| {
                (0..3)
                    .map(|j| ClusterSample {
                        state: p.clone(),
                        control: dvector![[1.0, -1.0, 0.3][j]],
                        successor: dvector![
                            rng.gen_range(-2.0..2.0f64),
                            rng.gen_range(-2.0..2.0f64)
                        ],
                    })
                    .collect()
            })
            .collect();
        let data = ClusterDataset::new(clusters.clone(), samples, 0.0, 1, None).unwrap();
        let surrogate = fit_control_surrogate(&data, &kernel, 0.0).unwrap();

        let gram_inv = kernel_matrix(clusters.points(), &kernel)
            .unwrap()
            .try_inverse()
            .unwrap();
        let coords = clusters.coordinate_matrix();
        for j in 0..=1 {
            let images: Vec<DVector<f64>> = (0..d)
                .map(|i| DVector::from_column_slice(surrogate.regression(i).column(j).as_slice()))
                .collect();
            let cross = cross_kernel_matrix(&images, &clusters, &kernel);
            let dense_block = (&gram_inv * &cross * &gram_inv * &coords).transpose();
            let gap = relative_gap(surrogate.coefficient_block(j), &dense_block);
            assert!(gap <= 1e-8, "trial {trial}, block {j}: relative gap {gap}");
        }
    }
}

#[test]
fn single_cluster_interpolation_scalar() {
    // with X = {0} the kernel matrix is the scalar 0.05, so each
    // interpolation operator is 20 kappa(0, H column) 20
    let kernel = kernel2();
    let clusters = ClusterSet::new(vec![dvector![0.0, 0.0]]).unwrap();
    let image = dvector![0.25, -0.4];
    let model = fit_autonomous(&clusters, std::slice::from_ref(&image), &kernel, 0.0).unwrap();
    let expected = 20.0 * kernel.eval(&image, &dvector![0.0, 0.0]) * 20.0;
    let got = model.koopman_matrix()[(0, 0)];
    assert!(
        (got - expected).abs() <= 1e-12 * expected.abs(),
        "got {got}, expected {expected}"
    );
}

#[test]
fn model_files_reject_mismatched_kind_and_truncation() {
    let dir = std::env::temp_dir().join("kedmd_model_negative");
    std::fs::create_dir_all(&dir).unwrap();
    let kernel = kernel2();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clusters = random_clusters(4, &mut rng);
    let model = fit_autonomous(&clusters, clusters.points(), &kernel, 0.0).unwrap();
    let path = dir.join("auto.bin");
    model.save(&path).unwrap();

    // wrong kind for the control loader
    match kedmd::ControlSurrogate::load(&path) {
        Err(kedmd::Error::MalformedFile { why, .. }) => assert!(why.contains("control")),
        other => panic!("expected kind mismatch, got {other:?}"),
    }

    // truncated payload
    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.join("auto_cut.bin");
    std::fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(
        kedmd::koopman::AutonomousModel::load(&cut),
        Err(kedmd::Error::MalformedFile { .. })
    ));

    // missing magic line
    let garbage = dir.join("garbage.bin");
    std::fs::write(&garbage, b"not a model\n").unwrap();
    assert!(kedmd::koopman::AutonomousModel::load(&garbage).is_err());
}

#[test]
fn dataset_csv_rejects_malformed_headers() {
    let no_header = "cluster_index,x_1,x_2,u_1,xplus_1,xplus_2\n0,0,0,1,0,0\n";
    assert!(kedmd::ClusterDataset::from_csv(no_header, "mem").is_err());

    let bad_row = "# n 2\n# m 1\n# d 1\n# eps_c 0\n# seed none\n# cluster 0 0 0\ncluster_index,x_1,x_2,u_1,xplus_1,xplus_2\n0,0,0\n";
    assert!(kedmd::ClusterDataset::from_csv(bad_row, "mem").is_err());

    let out_of_range = "# n 2\n# m 1\n# d 1\n# eps_c 0\n# seed none\n# cluster 0 0 0\ncluster_index,x_1,x_2,u_1,xplus_1,xplus_2\n7,0,0,1,0,0\n";
    assert!(kedmd::ClusterDataset::from_csv(out_of_range, "mem").is_err());
}
