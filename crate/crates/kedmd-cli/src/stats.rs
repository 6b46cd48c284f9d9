//! Summary statistics of closed-loop traces: plateau level, log-linear
//! decay slope and tail slope turn the qualitative shape of an error curve
//! into testable numbers.

use kedmd::analysis::least_squares_slope;
use kedmd::mpc::ClosedLoopTrace;

/// Number of trailing norms entering the plateau estimate.
pub const PLATEAU_WINDOW: usize = 100;
/// The decay slope is fitted over steps with `|x(k)| > 3 * plateau`.
pub const PLATEAU_GUARD: f64 = 3.0;
/// Floor applied before taking logarithms of norms.
const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct TraceSummary {
    pub steps: usize,
    pub initial_norm: f64,
    pub final_norm: f64,
    /// Median of the last [`PLATEAU_WINDOW`] norms.
    pub plateau: f64,
    /// Least-squares slope of `log10 |x(k)|` over the pre-plateau segment,
    /// per step.
    pub decay_slope: f64,
    /// Least-squares slope of `log10 |x(k)|` over the last
    /// [`PLATEAU_WINDOW`] steps.
    pub tail_slope: f64,
    /// Smallest relaxed-Lyapunov ratio along the trace, when defined.
    pub relaxed_lyapunov: Option<f64>,
    pub aborted: Option<(usize, String)>,
}

pub fn summarize(trace: &ClosedLoopTrace) -> TraceSummary {
    let norms = trace.norms();
    let plateau = median_of_tail(&norms, PLATEAU_WINDOW);
    let log_points: Vec<(f64, f64)> = norms
        .iter()
        .enumerate()
        .map(|(k, &v)| (k as f64, v.max(LOG_FLOOR).log10()))
        .collect();
    let decay_points: Vec<(f64, f64)> = log_points
        .iter()
        .zip(&norms)
        .filter(|(_, &v)| v > PLATEAU_GUARD * plateau)
        .map(|(p, _)| *p)
        .collect();
    let (decay_slope, _) = least_squares_slope(&decay_points);
    let tail_start = norms.len().saturating_sub(PLATEAU_WINDOW);
    let (tail_slope, _) = least_squares_slope(&log_points[tail_start..]);
    TraceSummary {
        steps: trace.steps.len(),
        initial_norm: norms.first().copied().unwrap_or(0.0),
        final_norm: *norms.last().unwrap_or(&0.0),
        plateau,
        decay_slope,
        tail_slope,
        relaxed_lyapunov: trace.relaxed_lyapunov_alpha(),
        aborted: trace.aborted.clone(),
    }
}

impl TraceSummary {
    /// Tail flat within 10% of the decay slope magnitude: the plateau
    /// criterion used by the figure checks.
    pub fn is_plateaued(&self) -> bool {
        self.tail_slope.abs() <= 0.1 * self.decay_slope.abs()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("steps              {}\n", self.steps));
        out.push_str(&format!("initial |x|        {:.6e}\n", self.initial_norm));
        out.push_str(&format!("final |x|          {:.6e}\n", self.final_norm));
        out.push_str(&format!(
            "plateau (median of last {PLATEAU_WINDOW}) {:.6e}\n",
            self.plateau
        ));
        out.push_str(&format!(
            "decay slope        {:.6e} log10/step\n",
            self.decay_slope
        ));
        out.push_str(&format!(
            "tail slope         {:.6e} log10/step\n",
            self.tail_slope
        ));
        match self.relaxed_lyapunov {
            Some(a) => out.push_str(&format!("min relaxed-Lyapunov ratio {a:.6e}\n")),
            None => out.push_str("min relaxed-Lyapunov ratio undefined\n"),
        }
        match &self.aborted {
            Some((k, why)) => out.push_str(&format!("ABORTED at step {k}: {why}\n")),
            None => out.push_str("completed\n"),
        }
        out
    }
}

/// Median of the last `window` entries (all entries when shorter).
pub fn median_of_tail(values: &[f64], window: usize) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let start = values.len().saturating_sub(window);
    let mut tail: Vec<f64> = values[start..].to_vec();
    tail.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = tail.len() / 2;
    if tail.len() % 2 == 1 {
        tail[mid]
    } else {
        0.5 * (tail[mid - 1] + tail[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_even_and_odd_windows() {
        assert_eq!(median_of_tail(&[1.0, 2.0, 3.0], 3), 2.0);
        assert_eq!(median_of_tail(&[1.0, 2.0, 3.0, 4.0], 4), 2.5);
        assert_eq!(median_of_tail(&[9.0, 1.0, 2.0, 3.0], 3), 2.0);
        assert_eq!(median_of_tail(&[], 5), 0.0);
    }
}
