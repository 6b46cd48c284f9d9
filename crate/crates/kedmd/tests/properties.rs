//! Property tests of the structural invariants.

use std::sync::OnceLock;

use kedmd::kernel::{kernel_matrix, WendlandKernel};
use kedmd::mpc::tightened_box;
use kedmd::surrogate::{fit_control_surrogate, ControlSurrogate};
use kedmd::systems::{chebyshev_grid, generate_cluster_data, ControlAffinePlant};
use kedmd::AxisBox;
use nalgebra::{dvector, DVector};
use proptest::prelude::*;

fn shared_surrogate() -> &'static ControlSurrogate {
    static SURROGATE: OnceLock<ControlSurrogate> = OnceLock::new();
    SURROGATE.get_or_init(|| {
        let plant = ControlAffinePlant::van_der_pol(0.05, 0.1);
        let clusters = chebyshev_grid(7, 2.0).unwrap();
        let data = generate_cluster_data(&plant, &clusters, 0.01, 4, 9).unwrap();
        fit_control_surrogate(&data, &WendlandKernel::new(2, 1, 1.0).unwrap(), 0.0).unwrap()
    })
}

proptest! {
    #[test]
    fn phi_monotone_and_bounded(sigma in 0.1..4.0f64, a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let kernel = WendlandKernel::new(2, 1, sigma).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let phi_lo = kernel.phi(lo * sigma).unwrap();
        let phi_hi = kernel.phi(hi * sigma).unwrap();
        prop_assert!(phi_hi <= phi_lo + 1e-15);
        prop_assert!((0.0..=0.05).contains(&phi_lo));
        prop_assert!(kernel.phi(sigma + hi).unwrap() == 0.0);
    }

    #[test]
    fn kernel_matrix_entries_in_range(
        seed_pts in proptest::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 2..12)
    ) {
        let points: Vec<DVector<f64>> = seed_pts
            .iter()
            .map(|(x, y)| dvector![*x, *y])
            .collect();
        let kernel = WendlandKernel::new(2, 1, 1.0).unwrap();
        match kernel_matrix(&points, &kernel) {
            Ok(k) => {
                for v in k.iter() {
                    prop_assert!((0.0..=0.05).contains(v));
                }
                prop_assert!((k.clone() - k.transpose()).amax() == 0.0);
            }
            // rejection is only legal for near-duplicate points
            Err(kedmd::Error::DuplicatePoints { dist, .. }) => prop_assert!(dist < 1e-12),
            Err(other) => prop_assert!(false, "unexpected error {other}"),
        }
    }

    #[test]
    fn tightening_never_grows_the_box(k in 1usize..20, eps in 0.0..0.09f64) {
        let state_box = AxisBox::cube(2, 2.0);
        let tightened = tightened_box(&state_box, k, eps).unwrap();
        for a in 0..2 {
            prop_assert!(tightened.lo()[a] >= state_box.lo()[a]);
            prop_assert!(tightened.hi()[a] <= state_box.hi()[a]);
        }
        let unchanged = tightened_box(&state_box, k, 0.0).unwrap();
        prop_assert!(unchanged == state_box);
    }

    #[test]
    fn surrogate_affine_in_control(
        x1 in -2.0..2.0f64,
        x2 in -2.0..2.0f64,
        u1 in -2.0..2.0f64,
        u2 in -2.0..2.0f64,
    ) {
        let surrogate = shared_surrogate();
        let x = dvector![x1, x2];
        let lhs = surrogate.eval(&x, &dvector![u1]).unwrap()
            + surrogate.eval(&x, &dvector![u2]).unwrap()
            - surrogate.eval(&x, &dvector![0.0]).unwrap();
        let rhs = surrogate.eval(&x, &dvector![u1 + u2]).unwrap();
        prop_assert!((lhs - rhs).amax() <= 1e-10);
    }
}
