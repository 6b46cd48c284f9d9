//! Common interface for one-step prediction models (true plants and fitted
//! surrogates) as consumed by the optimal control solver.

use nalgebra::{DMatrix, DVector};

/// A discrete-time control-affine prediction model `x+ = g0(x) + G(x) u`.
pub trait PredictionModel: Sync {
    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    /// One-step prediction `F(x, u)`.
    fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// Input matrix `G(x)`, which equals `dF/du` for control-affine dynamics.
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// State Jacobian `dF/dx (x, u)`. The default is a central finite
    /// difference of `predict`; implementors with analytic derivatives
    /// should override it.
    fn jacobian_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.state_dim();
        let h = 1e-6;
        let mut jac = DMatrix::zeros(n, n);
        for a in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[a] += h;
            xm[a] -= h;
            let col = (self.predict(&xp, u) - self.predict(&xm, u)) / (2.0 * h);
            jac.set_column(a, &col);
        }
        jac
    }
}
