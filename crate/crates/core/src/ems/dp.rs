use super::{integer_weights, plan_from_actions, preference_rank, BatteryState, DispatchPlan, EmsError, HorizonProblem, BOUND_TOL, PREFERENCE};

/// Index range of the SoC lattice `e0 + k q` inside the band.
fn lattice(b: &BatteryState, dt: f64) -> (i64, i64) {
    let q = b.spec.eta * b.spec.p_dispatch * dt;
    if q <= 0.0 {
        return (0, 0);
    }
    let lo = ((b.spec.e_min() - BOUND_TOL - b.e0) / q).ceil() as i64;
    let hi = ((b.spec.e_max() + BOUND_TOL - b.e0) / q).floor() as i64;
    (lo.min(0), hi.max(0))
}

/// Lattice step for action `d`: discharging moves one node down.
fn delta(d: i32) -> i64 {
    -i64::from(d)
}

fn schedule_battery(problem: &HorizonProblem, i: usize) -> Vec<i32> {
    let b = &problem.batteries[i];
    let t_len = problem.horizon();
    let (lo, hi) = lattice(b, problem.dt);
    let width = (hi - lo + 1) as usize;
    let w = integer_weights(problem, i);
    let idx = |k: i64| (k - lo) as usize;
    let in_band = |k: i64| k >= lo && k <= hi;
    // value[t][k]: cheapest cost of reaching node k after t hours
    let mut value: Vec<Vec<Option<i128>>> = vec![vec![None; width]; t_len + 1];
    value[0][idx(0)] = Some(0);
    for t in 0..t_len {
        for k in lo..=hi {
            let Some(v) = value[t][idx(k)] else { continue };
            for d in [-1, 0, 1] {
                let next = k + delta(d);
                // idle never moves; a zero quantum makes every action idle
                if d != 0 && (!in_band(next) || lo == hi) {
                    continue;
                }
                let cand = v + i128::from(d) * w[t];
                let slot = &mut value[t + 1][idx(next)];
                if slot.is_none_or(|cur| cand < cur) {
                    *slot = Some(cand);
                }
            }
        }
    }
    let best = value[t_len].iter().flatten().min().copied().expect("idle path always exists");
    let mut frontier: Vec<i64> = (lo..=hi).filter(|&k| value[t_len][idx(k)] == Some(best)).collect();
    let mut actions = vec![0; t_len];
    for t in (0..t_len).rev() {
        let mut chosen: Option<(usize, Vec<i64>)> = None;
        for &k_next in &frontier {
            for d in PREFERENCE {
                if d != 0 && lo == hi {
                    continue;
                }
                let k = k_next - delta(d);
                if !in_band(k) {
                    continue;
                }
                let Some(v) = value[t][idx(k)] else { continue };
                if v + i128::from(d) * w[t] != value[t + 1][idx(k_next)].expect("frontier nodes are reached") {
                    continue;
                }
                let rank = preference_rank(d);
                match &mut chosen {
                    Some((r, nodes)) if *r == rank => {
                        if !nodes.contains(&k) {
                            nodes.push(k)
                        }
                    }
                    Some((r, _)) if *r < rank => {}
                    _ => chosen = Some((rank, vec![k])),
                }
            }
        }
        let (rank, nodes) = chosen.expect("every optimal node has an optimal predecessor");
        actions[t] = PREFERENCE[rank];
        frontier = nodes;
    }
    actions
}

/// Exact optimum by dynamic programming over each battery's SoC lattice.
/// Among equal-cost plans the one preferred by the tie-break (compared from
/// the last hour backwards) is returned.
pub fn dp_dispatch(problem: &HorizonProblem) -> Result<DispatchPlan, EmsError> {
    problem.validate()?;
    let n = problem.batteries.len();
    let columns: Vec<Vec<i32>> = (0..n).map(|i| schedule_battery(problem, i)).collect();
    let d = (0..problem.horizon()).map(|t| columns.iter().map(|c| c[t]).collect()).collect();
    plan_from_actions(problem, d)
}
