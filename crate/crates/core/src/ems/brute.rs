use super::{feasible_actions, integer_weights, plan_from_actions, preference_rank, soc_step, DispatchPlan, EmsError, HorizonProblem};

/// Longest horizon the exhaustive search accepts (3^12 sequences).
pub const MAX_BRUTE_FORCE_HORIZON: usize = 12;

struct Search<'a> {
    problem: &'a HorizonProblem,
    battery: usize,
    weights: Vec<i128>,
    path: Vec<i32>,
    best: Option<(i128, Vec<i32>)>,
}

impl Search<'_> {
    fn better(&self, cost: i128) -> bool {
        let Some((best_cost, best_path)) = &self.best else { return true };
        if cost != *best_cost {
            return cost < *best_cost;
        }
        for t in (0..self.path.len()).rev() {
            let (a, b) = (preference_rank(self.path[t]), preference_rank(best_path[t]));
            if a != b {
                return a < b;
            }
        }
        false
    }

    fn visit(&mut self, t: usize, e: f64) {
        let spec = &self.problem.batteries[self.battery].spec;
        if t == self.problem.horizon() {
            let cost = self.path.iter().zip(&self.weights).map(|(&d, &w)| i128::from(d) * w).sum();
            if self.better(cost) {
                self.best = Some((cost, self.path.clone()));
            }
            return;
        }
        let actions = if spec.p_dispatch * spec.eta > 0.0 { feasible_actions(e, spec, self.problem.dt) } else { vec![0] };
        for d in actions {
            self.path.push(d);
            self.visit(t + 1, soc_step(e, d, spec, self.problem.dt));
            self.path.pop();
        }
    }
}

/// Exhaustive enumeration of every feasible action sequence per battery.
/// Test oracle for [`super::dp_dispatch`]; same objective and tie-break.
pub fn brute_force_dispatch(problem: &HorizonProblem) -> Result<DispatchPlan, EmsError> {
    problem.validate()?;
    let t_len = problem.horizon();
    if t_len > MAX_BRUTE_FORCE_HORIZON {
        return Err(EmsError::HorizonTooLarge(t_len));
    }
    let mut d = vec![vec![0; problem.batteries.len()]; t_len];
    for (i, b) in problem.batteries.iter().enumerate() {
        let mut search = Search { problem, battery: i, weights: integer_weights(problem, i), path: Vec::new(), best: None };
        search.visit(0, b.e0);
        let (_, path) = search.best.expect("the idle sequence is always feasible");
        for t in 0..t_len {
            d[t][i] = path[t];
        }
    }
    plan_from_actions(problem, d)
}
