//! Stability-theory calculators and empirical diagnostics: growth-bound
//! estimation from optimal control solves, the horizon-degradation index
//! `alpha_N`, the perturbed growth bound `B_N^eps`, empirical moduli of
//! continuity, and kernel convergence studies.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bounds::AxisBox;
use crate::error::{Error, Result};
use crate::kernel::fill_distance;
use crate::model::PredictionModel;
use crate::mpc::{solve_ocp, OcpConfig, StageCost};
use crate::surrogate::{empirical_sup_error, fit_control_surrogate, ControlSurrogate};
use crate::systems::{chebyshev_grid, generate_cluster_data, ControlAffinePlant, ExperimentConfig};

/// Pointwise infimum of the stage cost over controls, `l*(x) = |x|_Q^2`;
/// the infimum sits at `u = 0` since `R` is positive definite and the
/// control set contains the origin.
pub fn ell_star(x: &DVector<f64>, cost: &StageCost) -> f64 {
    cost.state_cost(x)
}

/// Estimated growth bounds `B_k = max over samples of V_k(x) / l*(x)`.
#[derive(Debug, Clone)]
pub struct GrowthBoundSequence {
    /// `values[k-1]` holds `B_k`.
    pub values: Vec<f64>,
    /// Sample index attaining each `B_k`.
    pub attaining: Vec<usize>,
    /// Initial states that entered the maximum.
    pub samples_used: usize,
    /// Indices of samples dropped for infeasibility.
    pub dropped: Vec<usize>,
}

impl GrowthBoundSequence {
    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    /// `B_k` with 1-based `k`.
    pub fn bound(&self, k: usize) -> f64 {
        self.values[k - 1]
    }
}

/// Estimates `B_1, ..., B_n_max` over a finite sample of initial states by
/// solving the horizon-`k` problem per sample (warm-started along `k`).
/// Monotonicity in `k` is enforced by a running maximum, clipping solver
/// noise. Samples where some solve is infeasible are dropped with a warning;
/// dropping all of them is an error.
pub fn estimate_growth_bounds(
    model: &dyn PredictionModel,
    cost: &StageCost,
    cfg: &OcpConfig,
    initial_states: &[DVector<f64>],
    n_max: usize,
) -> Result<GrowthBoundSequence> {
    if initial_states.is_empty() {
        return Err(Error::Empty("initial state sample"));
    }
    if n_max == 0 {
        return Err(Error::InvalidArgument {
            what: "horizon bound",
            why: "n_max must be at least 1".into(),
        });
    }
    for (i, x) in initial_states.iter().enumerate() {
        if ell_star(x, cost) <= 0.0 {
            return Err(Error::InvalidArgument {
                what: "initial state sample",
                why: format!("sample {i} has zero stage cost (the origin is excluded)"),
            });
        }
        if !cfg.state_box.contains(x) {
            return Err(Error::InvalidArgument {
                what: "initial state sample",
                why: format!("sample {i} lies outside the state box"),
            });
        }
    }

    let mut values = vec![0.0_f64; n_max];
    let mut attaining = vec![0usize; n_max];
    let mut dropped = Vec::new();
    let mut used = 0usize;
    for (i, x) in initial_states.iter().enumerate() {
        let denom = ell_star(x, cost);
        let mut warm: Option<Vec<DVector<f64>>> = None;
        let mut failed = false;
        let mut per_sample = Vec::with_capacity(n_max);
        for k in 1..=n_max {
            let mut cfg_k = cfg.clone();
            cfg_k.horizon = k;
            // previous horizon's solution extended by zero is the natural
            // warm start for horizon k
            let warm_k: Option<Vec<DVector<f64>>> = warm.as_ref().map(|w| {
                let mut v = w.clone();
                v.push(DVector::zeros(cfg.control_box.dim()));
                v
            });
            match solve_ocp(model, x, cost, &cfg_k, warm_k.as_deref()) {
                Ok(sol) => {
                    per_sample.push(sol.value / denom);
                    warm = Some(sol.controls);
                }
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            dropped.push(i);
            continue;
        }
        used += 1;
        for k in 0..n_max {
            if per_sample[k] > values[k] {
                values[k] = per_sample[k];
                attaining[k] = i;
            }
        }
    }
    if used == 0 {
        return Err(Error::Infeasible {
            why: "every growth-bound sample was infeasible".into(),
        });
    }
    // V_k is nondecreasing in k by definition; clip solver noise
    for k in 1..n_max {
        if values[k] < values[k - 1] {
            values[k] = values[k - 1];
        }
    }
    Ok(GrowthBoundSequence {
        values,
        attaining,
        samples_used: used,
        dropped,
    })
}

/// Horizon-degradation index
/// `alpha_N = 1 - (B_2 - 1)(B_N - 1) prod_{i=3}^N (B_i - 1) /
///            (prod_{i=2}^N B_i - (B_2 - 1) prod_{i=3}^N (B_i - 1))`,
/// empty products equal to one. `bounds[k-1]` holds `B_k`. A result `<= 0`
/// signals a too-short horizon.
pub fn compute_alpha(bounds: &[f64], n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument {
            what: "horizon",
            why: format!("alpha_N needs N >= 2, got {n}"),
        });
    }
    if bounds.len() < n {
        return Err(Error::InvalidArgument {
            what: "growth bounds",
            why: format!("need B_1..B_{n}, got {} entries", bounds.len()),
        });
    }
    let b = |k: usize| bounds[k - 1];
    for k in 1..=n {
        if b(k) < 1.0 {
            return Err(Error::InvalidArgument {
                what: "growth bounds",
                why: format!("B_{k} = {} is below 1", b(k)),
            });
        }
    }
    let tail: f64 = (3..=n).map(|i| b(i) - 1.0).product();
    let numerator = (b(2) - 1.0) * (b(n) - 1.0) * tail;
    let denominator = (2..=n).map(&b).product::<f64>() - (b(2) - 1.0) * tail;
    if denominator == 0.0 {
        return Err(Error::InvalidArgument {
            what: "growth bounds",
            why: "degenerate sequence: zero denominator".into(),
        });
    }
    Ok(1.0 - numerator / denominator)
}

/// Growth bound transferred to the surrogate:
/// `B_N^eps = B_N + c1 C eps_h lmax/lmin + c2 C^2 eps_h^2 lmax/lmin` with
/// `g = 2 (L_F + C eps_h)^2`, `B_0 = 1`,
/// `c1 = sum_{k=0}^{N-1} B_k (sum_{i=0}^{k} g^i)(sum_{i=0}^{N-1-k} g^i)` and
/// `c2 = sum_{k=0}^{N-2} B_k sum_{i=0}^{N-2-k} g^i`.
pub fn compute_b_eps(
    bounds: &[f64],
    n: usize,
    lipschitz: f64,
    c_const: f64,
    eps_h: f64,
    lambda_max: f64,
    lambda_min: f64,
) -> Result<f64> {
    if n == 0 || bounds.len() < n {
        return Err(Error::InvalidArgument {
            what: "growth bounds",
            why: format!("need B_1..B_{n}, got {} entries", bounds.len()),
        });
    }
    if !(lambda_max > 0.0 && lambda_min > 0.0) {
        return Err(Error::InvalidArgument {
            what: "cost eigenvalues",
            why: "lambda_max and lambda_min must be positive".into(),
        });
    }
    let b = |k: usize| if k == 0 { 1.0 } else { bounds[k - 1] };
    let g = 2.0 * (lipschitz + c_const * eps_h).powi(2);
    let geom = |p: usize| -> f64 { (0..=p).map(|i| g.powi(i as i32)).sum() };
    let c1: f64 = (0..=n - 1).map(|k| b(k) * geom(k) * geom(n - 1 - k)).sum();
    let c2: f64 = if n >= 2 {
        (0..=n - 2).map(|k| b(k) * geom(n - 2 - k)).sum()
    } else {
        0.0
    };
    let ratio = lambda_max / lambda_min;
    Ok(b(n) + c1 * c_const * eps_h * ratio + c2 * c_const * c_const * eps_h * eps_h * ratio)
}

/// Empirical modulus-of-continuity constant of the surrogate: the larger of
/// the sampled difference quotients `|F(x,u) - F(y,u)| / |x - y|` and the
/// sampled Jacobian spectral norms. Diagnostic only; deterministic per seed.
pub fn estimate_modulus(
    model: &ControlSurrogate,
    domain: &AxisBox,
    control_box: &AxisBox,
    sample_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if sample_pairs == 0 {
        return Err(Error::InvalidArgument {
            what: "sample pairs",
            why: "need at least one pair".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..sample_pairs {
        let x = domain.sample(&mut rng);
        let y = domain.sample(&mut rng);
        let u = control_box.sample(&mut rng);
        let gap = (&x - &y).norm();
        if gap > 1e-12 {
            let quotient = (model.eval(&x, &u)? - model.eval(&y, &u)?).norm() / gap;
            worst = worst.max(quotient);
        }
        let jac = model.jacobian_x_at(&x, &u)?;
        let spectral = jac.singular_values().max();
        worst = worst.max(spectral);
    }
    Ok(worst)
}

/// Largest sampled spectral norm of the plant's state Jacobian over a grid
/// of the domain and the extreme/zero controls. Used as the default `L_F`.
pub fn plant_lipschitz(plant: &ControlAffinePlant, grid_resolution: usize) -> f64 {
    let mut controls = vec![
        plant.control_box.lo().clone(),
        DVector::zeros(plant.control_dim()),
        plant.control_box.hi().clone(),
    ];
    controls.dedup();
    let mut worst: f64 = 0.0;
    for x in plant.domain.grid(grid_resolution) {
        for u in &controls {
            let jac = plant.jacobian_x(&x, u);
            worst = worst.max(jac.singular_values().max());
        }
    }
    worst
}

/// One refinement level of the convergence study.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub cluster_count: usize,
    pub fill_distance: f64,
    pub sup_error: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log(sup_error)` against `log(h_X)`.
    pub slope: f64,
    /// Root-mean-square residual of that fit.
    pub slope_residual: f64,
}

/// Fits one surrogate per cluster count in ascending `d_list`, recording the
/// fill distance and the sup one-step error over `test_points`, plus the
/// empirical order as a log-log slope. The exponent of the underlying rate
/// is reported, never asserted.
pub fn convergence_study(
    plant: &ControlAffinePlant,
    base: &ExperimentConfig,
    d_list: &[usize],
    test_points: &[(DVector<f64>, DVector<f64>)],
    fill_resolution: usize,
) -> Result<ConvergenceStudy> {
    if d_list.is_empty() {
        return Err(Error::Empty("cluster count list"));
    }
    if d_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument {
            what: "cluster count list",
            why: "must be strictly ascending".into(),
        });
    }
    let half_width = plant.domain.hi()[0];
    let mut rows = Vec::with_capacity(d_list.len());
    for &d in d_list {
        let cfg = ExperimentConfig {
            cluster_count: d,
            ..base.clone()
        };
        let root = cfg.grid_root()?;
        let clusters = chebyshev_grid(root, half_width)?;
        let data = generate_cluster_data(
            plant,
            &clusters,
            cfg.cluster_radius,
            cfg.samples_per_cluster,
            cfg.seed,
        )?;
        let surrogate = fit_control_surrogate(&data, &cfg.kernel, cfg.lambda)?;
        let h = fill_distance(&clusters, &plant.domain, fill_resolution)?;
        let report = empirical_sup_error(&surrogate, |x, u| plant.step(x, u), test_points)?;
        rows.push(ConvergenceRow {
            cluster_count: d,
            fill_distance: h,
            sup_error: report.sup_error,
        });
    }

    // log-log least squares over rows with positive error
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.sup_error > 0.0 && r.fill_distance > 0.0)
        .map(|r| (r.fill_distance.ln(), r.sup_error.ln()))
        .collect();
    let (slope, residual) = least_squares_slope(&pts);
    Ok(ConvergenceStudy {
        rows,
        slope,
        slope_residual: residual,
    })
}

/// Slope and RMS residual of the one-dimensional least-squares line through
/// `(x, y)` pairs; `(0, 0)` when fewer than two points remain.
pub fn least_squares_slope(points: &[(f64, f64)]) -> (f64, f64) {
    if points.len() < 2 {
        return (0.0, 0.0);
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, 0.0);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    (slope, (rss / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::AxisBox;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;
    use rand::Rng;

    #[test]
    fn ell_star_hand_values() {
        let cost = StageCost::diagonal(&[1.0, 1.0], &[1e-4]).unwrap();
        assert_eq!(ell_star(&dvector![0.0, 0.0], &cost), 0.0);
        assert_abs_diff_eq!(ell_star(&dvector![0.5, 0.5], &cost), 0.5, epsilon = 1e-15);
        // infimum property against random admissible controls
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = dvector![0.7, -0.2];
        for _ in 0..100 {
            let u = dvector![rng.gen_range(-2.0..2.0f64)];
            assert!(ell_star(&x, &cost) <= cost.evaluate(&x, &u).unwrap());
        }
    }

    #[test]
    fn alpha_hand_values() {
        assert_abs_diff_eq!(compute_alpha(&[1.0, 1.0], 2).unwrap(), 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(
            compute_alpha(&[1.0, 1.5], 2).unwrap(),
            0.75,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            compute_alpha(&[1.0, 2.0, 2.0], 3).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn alpha_rejects_bad_input() {
        assert!(compute_alpha(&[1.0], 1).is_err());
        assert!(compute_alpha(&[1.0, 0.5], 2).is_err());
        assert!(compute_alpha(&[1.0], 2).is_err());
    }

    #[test]
    fn alpha_monotone_in_each_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(2..=8usize);
            let bounds: Vec<f64> = (0..n).map(|_| 1.0 + rng.gen_range(0.0..3.0f64)).collect();
            let Ok(alpha) = compute_alpha(&bounds, n) else {
                continue;
            };
            let i = rng.gen_range(1..n);
            let mut bumped = bounds.clone();
            bumped[i] += rng.gen_range(0.0..1.0f64);
            if let Ok(alpha_bumped) = compute_alpha(&bumped, n) {
                assert!(
                    alpha_bumped <= alpha + 1e-12,
                    "alpha rose from {alpha} to {alpha_bumped} when B_{} grew",
                    i + 1
                );
            }
        }
    }

    #[test]
    fn b_eps_hand_values() {
        // eps_h = 0 collapses to B_N exactly
        let bounds = [1.0, 1.7, 2.1];
        assert_eq!(
            compute_b_eps(&bounds, 3, 1.3, 2.0, 0.0, 1.0, 1e-4).unwrap(),
            2.1
        );
        // N=2, B_1 = 1, L_F = 1, C = 1, eps_h = 0.1, ratio 1:
        // g = 2*1.21 = 2.42, c1 = 2*(1+g) = 6.84, c2 = 1
        let b2 = 1.9;
        let expected = b2 + 6.84 * 0.1 + 0.01;
        assert_abs_diff_eq!(
            compute_b_eps(&[1.0, b2], 2, 1.0, 1.0, 0.1, 2.0, 2.0).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn b_eps_monotone_and_continuous_in_eps_h() {
        let bounds = [1.0, 1.4, 1.9, 2.3];
        let base = compute_b_eps(&bounds, 4, 1.2, 1.5, 0.0, 1.0, 1e-4).unwrap();
        assert_eq!(base, 2.3);
        let mut previous = base;
        for eps_h in [1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0] {
            let value = compute_b_eps(&bounds, 4, 1.2, 1.5, eps_h, 1.0, 1e-4).unwrap();
            assert!(value >= previous, "B_N^eps decreased at eps_h = {eps_h}");
            previous = value;
        }
        // continuity at 0 along a decreasing grid (eigenvalue ratio 1 so the
        // remaining gap is the bare c1 * C * eps_h term)
        let mut gap = f64::INFINITY;
        for eps_h in [1e-2, 1e-4, 1e-6, 1e-8] {
            let value = compute_b_eps(&bounds, 4, 1.2, 1.5, eps_h, 1.0, 1.0).unwrap();
            let new_gap = value - base;
            assert!(new_gap <= gap);
            gap = new_gap;
        }
        assert!(gap <= 1e-5);
    }

    #[test]
    fn growth_bounds_on_exact_plant() {
        let plant = ControlAffinePlant::van_der_pol(0.05, 0.1);
        let cost = StageCost::diagonal(&[1.0, 1.0], &[1e-4]).unwrap();
        let cfg = OcpConfig::new(1, AxisBox::cube(1, 2.0), AxisBox::cube(2, 2.0), 0.0).unwrap();
        let samples: Vec<DVector<f64>> = AxisBox::cube(2, 1.0)
            .grid(3)
            .into_iter()
            .filter(|x| x.norm() > 1e-9)
            .collect();
        let bounds = estimate_growth_bounds(&plant, &cost, &cfg, &samples, 6).unwrap();
        assert_eq!(bounds.horizon(), 6);
        assert_abs_diff_eq!(bounds.bound(1), 1.0, epsilon = 1e-9);
        for k in 2..=6 {
            assert!(bounds.bound(k) >= bounds.bound(k - 1));
            assert!(bounds.bound(k) >= 1.0);
        }
        assert!(bounds.dropped.is_empty());
        assert_eq!(bounds.samples_used, samples.len());
    }

    #[test]
    fn growth_bounds_reject_origin_sample() {
        let plant = ControlAffinePlant::van_der_pol(0.05, 0.1);
        let cost = StageCost::diagonal(&[1.0, 1.0], &[1e-4]).unwrap();
        let cfg = OcpConfig::new(2, AxisBox::cube(1, 2.0), AxisBox::cube(2, 2.0), 0.0).unwrap();
        assert!(estimate_growth_bounds(&plant, &cost, &cfg, &[dvector![0.0, 0.0]], 3).is_err());
    }

    #[test]
    fn modulus_zero_surrogate_and_determinism() {
        use crate::surrogate::{ClusterDataset, ClusterSample};
        use crate::systems::chebyshev_grid;
        use crate::WendlandKernel;

        let grid = chebyshev_grid(3, 2.0).unwrap();
        let samples: Vec<Vec<ClusterSample>> = grid
            .points()
            .iter()
            .map(|p| {
                [1.0, -1.0]
                    .iter()
                    .map(|&u| ClusterSample {
                        state: p.clone(),
                        control: nalgebra::dvector![u],
                        successor: nalgebra::dvector![0.0, 0.0],
                    })
                    .collect()
            })
            .collect();
        let data = ClusterDataset::new(grid, samples, 0.0, 1, None).unwrap();
        let kernel = WendlandKernel::new(2, 1, 1.0).unwrap();
        let zero = crate::surrogate::fit_control_surrogate(&data, &kernel, 0.0).unwrap();
        let domain = AxisBox::cube(2, 2.0);
        let control = AxisBox::cube(1, 2.0);
        let estimate = estimate_modulus(&zero, &domain, &control, 50, 7).unwrap();
        assert!(estimate <= 1e-9, "zero surrogate modulus {estimate}");
        assert_eq!(
            estimate,
            estimate_modulus(&zero, &domain, &control, 50, 7).unwrap()
        );

        // a real surrogate dominates any held-out difference quotient
        let plant = ControlAffinePlant::van_der_pol(0.05, 0.1);
        let grid = chebyshev_grid(7, 2.0).unwrap();
        let data = crate::systems::generate_cluster_data(&plant, &grid, 0.0, 3, 4).unwrap();
        let surrogate = crate::surrogate::fit_control_surrogate(&data, &kernel, 0.0).unwrap();
        let estimate = estimate_modulus(&surrogate, &domain, &control, 400, 11).unwrap();
        let (x, y, u) = (
            nalgebra::dvector![0.3, -0.2],
            nalgebra::dvector![0.31, -0.2],
            nalgebra::dvector![1.0],
        );
        let quotient = (surrogate.eval(&x, &u).unwrap() - surrogate.eval(&y, &u).unwrap()).norm()
            / (&x - &y).norm();
        assert!(estimate >= quotient * 0.9);
    }

    #[test]
    fn least_squares_slope_recovers_line() {
        let pts: Vec<(f64, f64)> = (0..10)
            .map(|i| {
                let x = i as f64 * 0.3;
                (x, 2.5 * x - 1.0)
            })
            .collect();
        let (slope, residual) = least_squares_slope(&pts);
        assert_abs_diff_eq!(slope, 2.5, epsilon = 1e-12);
        assert!(residual <= 1e-12);
    }
}
