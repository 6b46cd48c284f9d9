//! Quadratic stage cost, tightened state constraints, the finite-horizon
//! optimal control problem over a prediction model, and the receding-horizon
//! closed loop against the true plant.
//!
//! The solver is single shooting with projected gradients: controls are the
//! only decision variables, box control constraints enter by exact
//! projection, tightened state constraints by an outer quadratic penalty
//! loop (weight x10 per round). Gradients come from one reverse sweep
//! through the horizon.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::bounds::AxisBox;
use crate::error::{Error, Result};
use crate::model::PredictionModel;

/// Quadratic stage cost `l(x, u) = x^T Q x + u^T R u` with symmetric
/// positive definite `Q`, `R`.
#[derive(Debug, Clone)]
pub struct StageCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    lambda_max: f64,
    lambda_min: f64,
}

impl StageCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("Q", &q), ("R", &r)] {
            if m.nrows() != m.ncols() {
                return Err(Error::DimensionMismatch {
                    what: "stage cost matrix",
                    expected: m.nrows(),
                    got: m.ncols(),
                });
            }
            let scale = m.amax().max(1.0);
            for i in 0..m.nrows() {
                for j in (i + 1)..m.ncols() {
                    if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                        return Err(Error::InvalidArgument {
                            what: "stage cost matrix",
                            why: format!("{name} is not symmetric at ({i}, {j})"),
                        });
                    }
                }
            }
            // positive definiteness via the same Cholesky used for kernels
            crate::kernel::factorize(m, 0.0).map_err(|_| Error::InvalidArgument {
                what: "stage cost matrix",
                why: format!("{name} is not positive definite"),
            })?;
        }
        let mut eigenvalues: Vec<f64> = q
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .chain(r.clone().symmetric_eigen().eigenvalues.iter())
            .map(|v| v.abs())
            .collect();
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self {
            lambda_min: eigenvalues[0],
            lambda_max: *eigenvalues.last().unwrap(),
            q,
            r,
        })
    }

    /// `Q = diag(q)`, `R = diag(r)` convenience constructor.
    pub fn diagonal(q: &[f64], r: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(q)),
            DMatrix::from_diagonal(&DVector::from_column_slice(r)),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Largest eigenvalue magnitude over `Q` and `R`.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Smallest eigenvalue magnitude over `Q` and `R`.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn evaluate(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "stage cost state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if u.len() != self.control_dim() {
            return Err(Error::DimensionMismatch {
                what: "stage cost control",
                expected: self.control_dim(),
                got: u.len(),
            });
        }
        Ok(self.eval_unchecked(x, u))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (&self.q * x).dot(x) + (&self.r * u).dot(u)
    }

    /// State part `|x|_Q^2` only; the infimum of `l(x, .)` over any control
    /// set containing the origin.
    pub fn state_cost(&self, x: &DVector<f64>) -> f64 {
        (&self.q * x).dot(x)
    }
}

/// Projected-gradient solver settings. The defaults are part of the solver
/// contract and shared by every experiment.
#[derive(Debug, Clone)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub penalty_rounds: usize,
    pub feasibility_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            grad_tol: 1e-8,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            penalty_initial: 100.0,
            penalty_growth: 10.0,
            penalty_rounds: 5,
            feasibility_tol: 1e-6,
        }
    }
}

/// Horizon, constraint sets and tightening of one optimal control problem.
#[derive(Debug, Clone)]
pub struct OcpConfig {
    pub horizon: usize,
    pub control_box: AxisBox,
    pub state_box: AxisBox,
    /// Per-step tightening `eps`; predicted states at step `k` must lie in
    /// the state box shrunk by `k * eps`.
    pub tightening: f64,
    pub solver: SolverSettings,
}

impl OcpConfig {
    pub fn new(
        horizon: usize,
        control_box: AxisBox,
        state_box: AxisBox,
        tightening: f64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument {
                what: "horizon",
                why: "must be at least 1".into(),
            });
        }
        if !(tightening >= 0.0 && tightening.is_finite()) {
            return Err(Error::InvalidArgument {
                what: "tightening",
                why: format!("must be nonnegative, got {tightening}"),
            });
        }
        if !control_box.contains_interior(&DVector::zeros(control_box.dim())) {
            return Err(Error::InvalidArgument {
                what: "control box",
                why: "must contain the origin in its interior".into(),
            });
        }
        if !state_box.contains_interior(&DVector::zeros(state_box.dim())) {
            return Err(Error::InvalidArgument {
                what: "state box",
                why: "must contain the origin in its interior".into(),
            });
        }
        for k in 1..=horizon {
            tightened_box(&state_box, k, tightening)?;
        }
        Ok(Self {
            horizon,
            control_box,
            state_box,
            tightening,
            solver: SolverSettings::default(),
        })
    }
}

/// State box eroded by the infinity-norm ball of radius `k * eps`
/// (Pontryagin difference for axis-aligned sets).
pub fn tightened_box(state_box: &AxisBox, k: usize, eps: f64) -> Result<AxisBox> {
    if k == 0 {
        return Err(Error::InvalidArgument {
            what: "tightening step",
            why: "tightening applies from step 1 on".into(),
        });
    }
    state_box
        .shrink(k as f64 * eps)
        .map_err(|axis| Error::EmptyTightenedBox { step: k, axis })
}

/// Result of one finite-horizon solve.
#[derive(Debug, Clone)]
pub struct OcpSolution {
    /// Optimal control sequence, `horizon` entries.
    pub controls: Vec<DVector<f64>>,
    /// Predicted states `x(0), ..., x(N)` under the model.
    pub states: Vec<DVector<f64>>,
    /// Cost of the returned sequence (without penalty terms).
    pub value: f64,
    /// Projected-gradient iterations summed over penalty rounds.
    pub iterations: usize,
    /// Accepted penalized objective values, non-increasing within a round.
    pub objective_history: Vec<f64>,
    /// Largest tightened-constraint violation of the returned trajectory.
    pub max_violation: f64,
}

struct Rollout {
    states: Vec<DVector<f64>>,
    cost: f64,
}

type ControlSequence = Vec<DVector<f64>>;
/// Controls, trajectory, iteration count, accepted objective values.
type DescentOutcome = (ControlSequence, Rollout, usize, Vec<f64>);

struct Ocp<'a> {
    model: &'a dyn PredictionModel,
    cost: &'a StageCost,
    cfg: &'a OcpConfig,
    tightened: Vec<AxisBox>,
    x0: DVector<f64>,
}

impl Ocp<'_> {
    fn rollout(&self, controls: &[DVector<f64>]) -> Rollout {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(self.x0.clone());
        let mut cost = 0.0;
        for u in controls {
            let x = states.last().unwrap();
            cost += self.cost.eval_unchecked(x, u);
            states.push(self.model.predict(x, u));
        }
        Rollout { states, cost }
    }

    fn penalty(&self, states: &[DVector<f64>], weight: f64) -> f64 {
        let mut total = 0.0;
        for (k, tight) in self.tightened.iter().enumerate() {
            let x = &states[k + 1];
            for a in 0..x.len() {
                let over = (x[a] - tight.hi()[a]).max(0.0);
                let under = (tight.lo()[a] - x[a]).max(0.0);
                total += over * over + under * under;
            }
        }
        weight * total
    }

    fn penalty_gradient(&self, x: &DVector<f64>, step: usize, weight: f64) -> DVector<f64> {
        let tight = &self.tightened[step - 1];
        DVector::from_fn(x.len(), |a, _| {
            2.0 * weight * ((x[a] - tight.hi()[a]).max(0.0) - (tight.lo()[a] - x[a]).max(0.0))
        })
    }

    fn max_violation(&self, states: &[DVector<f64>]) -> f64 {
        self.tightened
            .iter()
            .enumerate()
            .map(|(k, tight)| tight.violation(&states[k + 1]))
            .fold(0.0, f64::max)
    }

    /// Reverse sweep: adjoint recursion through the horizon. `dF/du` is the
    /// model's input matrix (control-affine), `dF/dx` its state Jacobian.
    fn gradient(
        &self,
        controls: &[DVector<f64>],
        states: &[DVector<f64>],
        weight: f64,
    ) -> Vec<DVector<f64>> {
        let n_steps = controls.len();
        let mut grads = vec![DVector::zeros(0); n_steps];
        let mut adjoint = self.penalty_gradient(&states[n_steps], n_steps, weight);
        for i in (0..n_steps).rev() {
            let x = &states[i];
            let u = &controls[i];
            let b = self.model.input_matrix(x);
            grads[i] = (self.cost.r() * u) * 2.0 + b.transpose() * &adjoint;
            if i > 0 {
                let a = self.model.jacobian_x(x, u);
                adjoint = (self.cost.q() * x) * 2.0
                    + self.penalty_gradient(x, i, weight)
                    + a.transpose() * adjoint;
            }
        }
        grads
    }

    fn project(&self, controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
        controls
            .iter()
            .map(|u| self.cfg.control_box.project(u))
            .collect()
    }
}

/// Horizon cost of a fixed control sequence and its adjoint gradient
/// (reverse sweep through the horizon), without constraint penalties. Used
/// by gradient checks and growth-bound diagnostics.
pub fn ocp_objective_and_gradient(
    model: &dyn PredictionModel,
    x0: &DVector<f64>,
    cost: &StageCost,
    cfg: &OcpConfig,
    controls: &[DVector<f64>],
) -> Result<(f64, Vec<DVector<f64>>)> {
    if controls.len() != cfg.horizon {
        return Err(Error::DimensionMismatch {
            what: "control sequence",
            expected: cfg.horizon,
            got: controls.len(),
        });
    }
    let tightened = (1..=cfg.horizon)
        .map(|k| tightened_box(&cfg.state_box, k, cfg.tightening))
        .collect::<Result<Vec<_>>>()?;
    let ocp = Ocp {
        model,
        cost,
        cfg,
        tightened,
        x0: x0.clone(),
    };
    let roll = ocp.rollout(controls);
    if !roll.cost.is_finite() {
        return Err(Error::NonFiniteCost);
    }
    let grads = ocp.gradient(controls, &roll.states, 0.0);
    Ok((roll.cost, grads))
}

/// Single-shooting solve of the horizon-`N` problem over `model` from `x0`.
///
/// The returned value never exceeds the cost of the zero control sequence
/// whenever that sequence satisfies the tightened state constraints.
pub fn solve_ocp(
    model: &dyn PredictionModel,
    x0: &DVector<f64>,
    cost: &StageCost,
    cfg: &OcpConfig,
    warm_start: Option<&[DVector<f64>]>,
) -> Result<OcpSolution> {
    let n = model.state_dim();
    let m = model.control_dim();
    if cost.state_dim() != n || cfg.state_box.dim() != n || x0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "ocp state dimension",
            expected: n,
            got: x0.len(),
        });
    }
    if cost.control_dim() != m || cfg.control_box.dim() != m {
        return Err(Error::DimensionMismatch {
            what: "ocp control dimension",
            expected: m,
            got: cfg.control_box.dim(),
        });
    }
    if !cfg.state_box.contains(x0) {
        return Err(Error::Infeasible {
            why: format!("initial state {x0:?} outside the state box"),
        });
    }
    let horizon = cfg.horizon;
    let tightened = (1..=horizon)
        .map(|k| tightened_box(&cfg.state_box, k, cfg.tightening))
        .collect::<Result<Vec<_>>>()?;
    let ocp = Ocp {
        model,
        cost,
        cfg,
        tightened,
        x0: x0.clone(),
    };
    let settings = &cfg.solver;

    let zeros: Vec<DVector<f64>> = vec![DVector::zeros(m); horizon];
    let zero_roll = ocp.rollout(&zeros);
    let zero_violation = ocp.max_violation(&zero_roll.states);

    let mut controls = match warm_start {
        Some(w) if w.len() == horizon && w.iter().all(|u| u.len() == m) => {
            let projected = ocp.project(w);
            let warm_roll = ocp.rollout(&projected);
            let weight = settings.penalty_initial;
            if warm_roll.cost + ocp.penalty(&warm_roll.states, weight)
                <= zero_roll.cost + ocp.penalty(&zero_roll.states, weight)
            {
                projected
            } else {
                zeros.clone()
            }
        }
        _ => zeros.clone(),
    };

    let mut weight = settings.penalty_initial;
    let mut total_iterations = 0;
    let mut history = Vec::new();
    let mut best: Option<(Vec<DVector<f64>>, Rollout, f64)> = None;

    for round in 0..settings.penalty_rounds {
        let (u, roll, iters, hist) = descend(&ocp, controls, weight, settings)?;
        total_iterations += iters;
        history.extend(hist);
        let violation = ocp.max_violation(&roll.states);
        controls = u.clone();
        best = Some((u, roll, violation));
        if violation <= settings.feasibility_tol {
            break;
        }
        if round + 1 == settings.penalty_rounds {
            return Err(Error::Infeasible {
                why: format!(
                    "tightened state constraints violated by {violation:.3e} after {} penalty rounds",
                    settings.penalty_rounds
                ),
            });
        }
        weight *= settings.penalty_growth;
    }

    let (mut controls, mut roll, mut violation) = best.unwrap();
    // contract: never return worse than the feasible zero sequence
    if zero_violation == 0.0 && zero_roll.cost < roll.cost {
        controls = zeros;
        roll = zero_roll;
        violation = zero_violation;
    }
    Ok(OcpSolution {
        value: roll.cost,
        states: roll.states,
        controls,
        iterations: total_iterations,
        objective_history: history,
        max_violation: violation,
    })
}

/// Monotone projected-gradient descent with Armijo backtracking at a fixed
/// penalty weight. Trial steps use the spectral (Barzilai-Borwein) length,
/// which copes with the poor scaling between `R` and the dynamic `Q` terms;
/// every accepted step still satisfies the Armijo decrease. Terminates on
/// the projected-gradient norm, on an Armijo failure at machine precision
/// (stationary within tolerance), or on the iteration cap.
fn descend(
    ocp: &Ocp<'_>,
    mut controls: ControlSequence,
    weight: f64,
    settings: &SolverSettings,
) -> Result<DescentOutcome> {
    let mut roll = ocp.rollout(&controls);
    let mut objective = roll.cost + ocp.penalty(&roll.states, weight);
    if !objective.is_finite() {
        return Err(Error::NonFiniteCost);
    }
    let mut history = vec![objective];
    let mut step = 1.0_f64;
    let mut previous: Option<(ControlSequence, ControlSequence)> = None;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        let grads = ocp.gradient(&controls, &roll.states, weight);
        let pg_norm = controls
            .iter()
            .zip(&grads)
            .map(|(u, g)| (ocp.cfg.control_box.project(&(u - g)) - u).amax())
            .fold(0.0, f64::max);
        if pg_norm <= settings.grad_tol {
            break;
        }
        iterations += 1;

        // spectral trial step <s,s>/<s,y> from the previous accepted pair
        if let Some((prev_u, prev_g)) = &previous {
            let mut ss = 0.0;
            let mut sy = 0.0;
            for i in 0..controls.len() {
                let s = &controls[i] - &prev_u[i];
                let y = &grads[i] - &prev_g[i];
                ss += s.dot(&s);
                sy += s.dot(&y);
            }
            if sy > 1e-300 && ss > 0.0 {
                step = (ss / sy).clamp(1e-12, 1e12);
            }
        }

        let mut t = step;
        let mut accepted = false;
        while t >= 1e-20 {
            let candidate: Vec<DVector<f64>> = controls
                .iter()
                .zip(&grads)
                .map(|(u, g)| ocp.cfg.control_box.project(&(u - g * t)))
                .collect();
            let cand_roll = ocp.rollout(&candidate);
            let cand_objective = cand_roll.cost + ocp.penalty(&cand_roll.states, weight);
            if !cand_objective.is_finite() {
                return Err(Error::NonFiniteCost);
            }
            let direction: f64 = candidate
                .iter()
                .zip(&controls)
                .zip(&grads)
                .map(|((cu, u), g)| g.dot(&(cu - u)))
                .sum();
            if cand_objective <= objective + settings.armijo_c * direction {
                previous = Some((std::mem::replace(&mut controls, candidate), grads));
                roll = cand_roll;
                objective = cand_objective;
                history.push(objective);
                step = (t * 2.0).min(1e8);
                accepted = true;
                break;
            }
            t *= settings.armijo_shrink;
        }
        if !accepted {
            // stationary at machine precision
            break;
        }
    }
    Ok((controls, roll, iterations, history))
}

/// One recorded closed-loop step.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub step: usize,
    pub state: DVector<f64>,
    pub control: DVector<f64>,
    pub state_norm: f64,
    pub stage_cost: f64,
    pub ocp_value: f64,
    pub solver_iterations: usize,
}

/// Closed-loop record. States satisfy the plant recursion exactly and can be
/// reproduced from `x(0)` and the controls.
#[derive(Debug, Clone)]
pub struct ClosedLoopTrace {
    pub steps: Vec<TraceStep>,
    /// State after the last applied control.
    pub final_state: DVector<f64>,
    /// Set when the loop stopped early: failing step index and reason.
    pub aborted: Option<(usize, String)>,
}

impl ClosedLoopTrace {
    /// `|x(k)|` for `k = 0, ..., steps` (the final state included).
    pub fn norms(&self) -> Vec<f64> {
        let mut norms: Vec<f64> = self.steps.iter().map(|s| s.state_norm).collect();
        norms.push(self.final_state.norm());
        norms
    }

    /// Smallest relaxed-Lyapunov ratio `(V(k) - V(k+1)) / l(k)` along the
    /// trace; positive values certify a value-function decrease at every
    /// recorded step. Steps with zero stage cost are skipped.
    pub fn relaxed_lyapunov_alpha(&self) -> Option<f64> {
        let mut alpha: Option<f64> = None;
        for pair in self.steps.windows(2) {
            if pair[0].stage_cost <= 0.0 {
                continue;
            }
            let ratio = (pair[0].ocp_value - pair[1].ocp_value) / pair[0].stage_cost;
            alpha = Some(alpha.map_or(ratio, |a: f64| a.min(ratio)));
        }
        alpha
    }

    /// CSV with header `k,x1..xn,u1..um,norm_x,stage_cost,ocp_value,solver_iters`;
    /// floats carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k");
        if let Some(first) = self.steps.first() {
            for a in 1..=first.state.len() {
                let _ = write!(out, ",x{a}");
            }
            for a in 1..=first.control.len() {
                let _ = write!(out, ",u{a}");
            }
        }
        out.push_str(",norm_x,stage_cost,ocp_value,solver_iters\n");
        for s in &self.steps {
            let _ = write!(out, "{}", s.step);
            for v in s.state.iter().chain(s.control.iter()) {
                let _ = write!(out, ",{v:.16e}");
            }
            let _ = writeln!(
                out,
                ",{:.16e},{:.16e},{:.16e},{}",
                s.state_norm, s.stage_cost, s.ocp_value, s.solver_iterations
            );
        }
        out
    }

    /// Exact recomputation of the recursion `x(k+1) = F(x(k), u(k))`.
    pub fn verify_recursion(&self, plant: &crate::systems::ControlAffinePlant) -> bool {
        let mut x = match self.steps.first() {
            Some(s) => s.state.clone(),
            None => return true,
        };
        for s in &self.steps {
            if s.state != x {
                return false;
            }
            x = plant.step(&x, &s.control);
        }
        x == self.final_state
    }
}

/// Receding-horizon loop: measure, solve the OCP over `model`, apply the
/// first control to the true `plant`, shift the warm start (drop the first
/// entry, append zero). Infeasibility aborts with the partial trace and the
/// failing step recorded.
pub fn mpc_closed_loop(
    plant: &crate::systems::ControlAffinePlant,
    model: &dyn PredictionModel,
    x0: &DVector<f64>,
    steps: usize,
    cost: &StageCost,
    cfg: &OcpConfig,
) -> Result<ClosedLoopTrace> {
    if !cfg.state_box.contains(x0) {
        return Err(Error::Infeasible {
            why: "initial state outside the state box".into(),
        });
    }
    let m = model.control_dim();
    let mut x = x0.clone();
    let mut warm: Option<Vec<DVector<f64>>> = None;
    let mut trace = ClosedLoopTrace {
        steps: Vec::with_capacity(steps),
        final_state: x.clone(),
        aborted: None,
    };
    for k in 0..steps {
        let solution = match solve_ocp(model, &x, cost, cfg, warm.as_deref()) {
            Ok(s) => s,
            Err(e) => {
                trace.aborted = Some((k, e.to_string()));
                break;
            }
        };
        let u0 = solution.controls[0].clone();
        trace.steps.push(TraceStep {
            step: k,
            state: x.clone(),
            state_norm: x.norm(),
            stage_cost: cost.eval_unchecked(&x, &u0),
            ocp_value: solution.value,
            solver_iterations: solution.iterations,
            control: u0.clone(),
        });
        x = plant.step(&x, &u0);
        let mut shifted: Vec<DVector<f64>> = solution.controls[1..].to_vec();
        shifted.push(DVector::zeros(m));
        warm = Some(shifted);
    }
    trace.final_state = x;
    Ok(trace)
}
