use super::{QuadTree, RateModel, RdProblem};
use crate::frame::IntensityFrame;
use crate::{Error, Result};

/// Outcome of [`optimize_rate`].
#[derive(Debug, Clone)]
pub struct RateControlled {
    pub tree: QuadTree,
    /// False when the achieved rate is below `(1 - tolerance) * r_max`, either
    /// because `max_iters` ran out or because the target sits in a gap of the
    /// operational rate-distortion hull.
    pub converged: bool,
    /// Number of trees solved during the search.
    pub iterations: u32,
}

impl RateControlled {
    pub fn lambda_star(&self) -> f64 {
        self.tree.lambda
    }
}

/// Bisection on `lambda` for the lowest-distortion tree with `R <= r_max`.
///
/// Relies on `R(lambda)` being non-increasing. Stops as soon as the rate lands
/// in `[(1 - tolerance) * r_max, r_max]`.
pub fn optimize_rate(
    current: &IntensityFrame,
    reconstruction: &IntensityFrame,
    r_max: f64,
    model: RateModel,
    max_depth: Option<u8>,
    tolerance: f64,
    max_iters: u32,
) -> Result<RateControlled> {
    let problem = RdProblem::new(current, reconstruction, model, max_depth)?;
    optimize_problem_rate(&problem, r_max, tolerance, max_iters)
}

pub(crate) fn optimize_problem_rate(
    problem: &RdProblem,
    r_max: f64,
    tolerance: f64,
    max_iters: u32,
) -> Result<RateControlled> {
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(Error::invalid(format!("rate tolerance must be in (0, 1), got {tolerance}")));
    }
    if r_max.is_nan() {
        return Err(Error::invalid("rate target is NaN"));
    }
    let min_rate = problem.min_rate();
    if r_max < min_rate as f64 {
        return Err(Error::Infeasible { r_max, min_rate });
    }
    let fits = |t: &QuadTree| t.total_rate() as f64 <= r_max;
    let in_band = |t: &QuadTree| t.total_rate() as f64 >= (1.0 - tolerance) * r_max;

    let mut iterations = 1;
    let unconstrained = problem.solve(0.0);
    if fits(&unconstrained) {
        return Ok(RateControlled {
            tree: unconstrained,
            converged: true,
            iterations,
        });
    }

    // grow an upper bracket until the tree fits
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut best = loop {
        let t = problem.solve(hi);
        iterations += 1;
        if fits(&t) {
            break t;
        }
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            // unreachable for a finite frame: the root leaf wins at large lambda
            return Err(Error::Infeasible { r_max, min_rate });
        }
    };

    let mut steps = 0;
    while !in_band(&best) && steps < max_iters {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let t = problem.solve(mid);
        iterations += 1;
        steps += 1;
        if fits(&t) {
            hi = mid;
            best = t;
        } else {
            lo = mid;
        }
    }
    let converged = in_band(&best);
    Ok(RateControlled {
        tree: best,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadtree::optimize_tree;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(seed: u64, side: usize) -> (IntensityFrame, IntensityFrame) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<u8> = (0..side * side).map(|_| rng.gen()).collect();
        let b: Vec<u8> = (0..side * side).map(|_| rng.gen()).collect();
        (
            IntensityFrame::new(side, side, a).unwrap(),
            IntensityFrame::new(side, side, b).unwrap(),
        )
    }

    #[test]
    fn generous_budget_returns_unconstrained_tree() {
        let (cur, recon) = pair(5, 8);
        let full = optimize_tree(&cur, &recon, 0.0, RateModel::default(), None).unwrap();
        let rc = optimize_rate(&cur, &recon, full.total_rate() as f64, RateModel::default(), None, 0.05, 64)
            .unwrap();
        assert_eq!(rc.lambda_star(), 0.0);
        assert_eq!(rc.tree.total_distortion(), 0.0);
        assert!(rc.converged);
    }

    #[test]
    fn minimum_budget_returns_root_skip() {
        let (cur, recon) = pair(6, 16);
        let rc = optimize_rate(&cur, &recon, 2.0, RateModel::default(), None, 0.05, 64).unwrap();
        assert!(rc.tree.root.is_leaf());
        assert_eq!(rc.tree.total_rate(), 2);
    }

    #[test]
    fn infeasible_budget_is_an_error() {
        let (cur, recon) = pair(7, 8);
        match optimize_rate(&cur, &recon, 1.0, RateModel::default(), None, 0.05, 64) {
            Err(Error::Infeasible { min_rate, .. }) => assert_eq!(min_rate, 2),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn matches_dense_grid_oracle() {
        let (cur, recon) = pair(8, 16);
        let r_max = 200.0;
        let rc = optimize_rate(&cur, &recon, r_max, RateModel::default(), None, 0.05, 64).unwrap();
        assert!(rc.tree.total_rate() as f64 <= r_max);
        let problem = RdProblem::new(&cur, &recon, RateModel::default(), None).unwrap();
        let best_grid = (0..1000)
            .map(|k| 10f64.powf(-3.0 + 9.0 * k as f64 / 999.0))
            .map(|l| problem.solve(l))
            .filter(|t| t.total_rate() as f64 <= r_max)
            .map(|t| t.total_rate())
            .max()
            .unwrap();
        if best_grid as f64 >= 0.95 * r_max {
            assert!(rc.tree.total_rate() as f64 >= 0.95 * r_max);
        }
        assert!(rc.tree.total_rate() >= best_grid || rc.converged);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let (cur, recon) = pair(9, 16);
        let rc = optimize_rate(&cur, &recon, 700.0, RateModel::default(), None, 1e-6, 0).unwrap();
        assert!(rc.tree.total_rate() as f64 <= 700.0);
        assert!(!rc.converged);
    }
}
