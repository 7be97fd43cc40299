mod common;

use dcgrid::ems::{
    baseline_cost, battery_contribution, brute_force_dispatch, dp_dispatch, feasible_actions, horizon_cost, plan_from_actions, soc_step,
    HorizonProblem,
};
use dcgrid::model::{ScenarioConfig, TrafficClass};
use dcgrid::modbus::{decode_frame, encode_frame, reg_decode, reg_encode, ModbusFrame, Pdu, RegKind};
use dcgrid::netem::{LinkQueue, TrafficClassModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every feasible joint action matrix, enumerated independently of the
/// solver: own SoC walk, own cost sum, no separability shortcut.
fn joint_optimum(p: &HorizonProblem) -> f64 {
    let t_len = p.horizon();
    let n = p.batteries.len();
    let cells = t_len * n;
    let mut best = f64::INFINITY;
    'plans: for code in 0..3u64.pow(cells as u32) {
        let mut c = code;
        let mut d = vec![vec![0i32; n]; t_len];
        for row in d.iter_mut() {
            for x in row.iter_mut() {
                *x = (c % 3) as i32 - 1;
                c /= 3;
            }
        }
        for (i, b) in p.batteries.iter().enumerate() {
            let s = &b.spec;
            let mut e = b.e0;
            for row in &d {
                e -= f64::from(row[i]) * s.eta * s.p_dispatch * p.dt;
                if row[i] != 0 && (e < s.capacity * s.soc_min - 1e-9 || e > s.capacity * s.soc_max + 1e-9) {
                    continue 'plans;
                }
            }
        }
        let mut cost = 0.0;
        for (t, row) in d.iter().enumerate() {
            let bess: f64 = p.batteries.iter().zip(row).map(|(b, &x)| f64::from(x) * b.spec.p_dispatch).sum();
            let grid = p.load[t].iter().sum::<f64>() - p.pv[t].iter().sum::<f64>() - bess;
            cost += (p.c_grid[t] * grid - p.c_bess[t] * bess) / 1000.0 * p.dt;
        }
        best = best.min(cost);
    }
    best
}

fn discharged_at(p: &HorizonProblem, d: &[Vec<i32>], t: usize) -> f64 {
    p.batteries.iter().zip(&d[t]).map(|(b, &x)| f64::from(x) * b.spec.p_dispatch).sum()
}

fn frame_strategy() -> impl Strategy<Value = ModbusFrame> {
    let pdu = prop_oneof![
        (any::<u16>(), 1u16..=125).prop_map(|(address, count)| Pdu::ReadRequest { address, count }),
        (any::<u16>(), prop::collection::vec(any::<u16>(), 1..=123))
            .prop_map(|(address, values)| Pdu::WriteRequest { address, values }),
        prop::collection::vec(any::<u16>(), 1..=125).prop_map(|values| Pdu::ReadResponse { values }),
        (any::<u16>(), 1u16..=123).prop_map(|(address, count)| Pdu::WriteResponse { address, count }),
        (prop_oneof![Just(0x03u8), Just(0x10u8)], 1u8..=4).prop_map(|(function, code)| Pdu::Exception { function, code }),
    ];
    (any::<u16>(), any::<u8>(), pdu).prop_map(|(txn, unit, pdu)| ModbusFrame::from_pdu(txn, unit, &pdu))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn frames_round_trip(frame in frame_strategy()) {
        let bytes = encode_frame(&frame);
        prop_assert_eq!(bytes.len(), frame.wire_len());
        let (back, used) = decode_frame(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, frame);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn dp_matches_exhaustive_search(seed in any::<u64>()) {
        let p = common::random_problem(seed, 8, 4);
        let dp = dp_dispatch(&p).unwrap();
        let bf = brute_force_dispatch(&p).unwrap();
        prop_assert_eq!(&dp.d, &bf.d);
        prop_assert_eq!(dp.cost, bf.cost);
    }

    #[test]
    fn cost_separates_per_battery(seed in any::<u64>()) {
        let p = common::random_problem(seed, 8, 4);
        let dp = dp_dispatch(&p).unwrap();
        let column = |i: usize| dp.d.iter().map(|r| r[i]).collect::<Vec<_>>();
        let parts: f64 = (0..p.batteries.len()).map(|i| battery_contribution(&p, i, &column(i))).sum();
        let joint = horizon_cost(&p, &dp).unwrap();
        let sum = baseline_cost(&p) + parts;
        prop_assert!((sum - joint).abs() <= 1e-9 * joint.abs().max(1.0), "{sum} vs {joint}");
    }

    #[test]
    fn raising_one_price_never_lowers_discharge_then(seed in any::<u64>(), t_pick in any::<prop::sample::Index>(), bump in 0.001f64..0.5) {
        let p = common::random_problem(seed, 8, 3);
        let t = t_pick.index(p.horizon());
        let before = dp_dispatch(&p).unwrap();
        let mut q = p.clone();
        q.c_grid[t] += bump;
        let after = dp_dispatch(&q).unwrap();
        prop_assert!(discharged_at(&q, &after.d, t) >= discharged_at(&p, &before.d, t));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn plan_beats_idle_and_random_feasible_plans(seed in any::<u64>()) {
        let p = common::random_problem(seed, 8, 3);
        let dp = dp_dispatch(&p).unwrap();
        prop_assert!(dp.cost <= p.idle_plan().unwrap().cost + 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let mut e: Vec<f64> = p.batteries.iter().map(|b| b.e0).collect();
            let d: Vec<Vec<i32>> = (0..p.horizon())
                .map(|_| {
                    p.batteries
                        .iter()
                        .zip(e.iter_mut())
                        .map(|(b, e)| {
                            let options = feasible_actions(*e, &b.spec, p.dt);
                            let x = options[rng.random_range(0..options.len())];
                            *e = soc_step(*e, x, &b.spec, p.dt);
                            x
                        })
                        .collect()
                })
                .collect();
            let plan = plan_from_actions(&p, d).unwrap();
            prop_assert!(dp.cost <= plan.cost + 1e-12, "{} > {}", dp.cost, plan.cost);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dp_matches_joint_enumeration(seed in any::<u64>()) {
        let mut p = common::random_problem(seed, 5, 2);
        while p.horizon() * p.batteries.len() > 9 {
            p.batteries.pop();
        }
        let dp = dp_dispatch(&p).unwrap();
        let best = joint_optimum(&p);
        prop_assert!((dp.cost - best).abs() <= 1e-9, "dp {} joint {}", dp.cost, best);
    }

    #[test]
    fn register_codec_round_trips(raw in any::<u16>()) {
        for kind in [RegKind::Voltage, RegKind::Power, RegKind::SignedPower, RegKind::Soc, RegKind::Energy] {
            let v = reg_decode(raw, kind);
            let (back, saturated) = reg_encode(v, kind);
            if !saturated {
                prop_assert_eq!(back, raw);
            }
        }
    }

    #[test]
    fn link_queue_is_fifo(seed in any::<u64>(), rho in 0.0f64..0.9, gaps in prop::collection::vec(0.0f64..30.0, 1..200)) {
        let mut q = LinkQueue::new(TrafficClassModel::new(TrafficClass::DS0, rho, seed)).unwrap();
        let (mut t, mut last) = (0.0, f64::NEG_INFINITY);
        for g in gaps {
            t += g;
            let release = q.offer(t, 178);
            prop_assert!(release >= last && release >= t + 2.0);
            last = release;
        }
    }
}

#[test]
fn plant_settles_to_equilibrium() {
    let dt = ScenarioConfig::table1(1).sim.dt_sim_s;
    let mut checked = 0;
    for seed in 0..80u64 {
        let Some((err, field)) = common::settle_case(seed, dt, 1.0) else { continue };
        assert!(err <= 1.0, "seed {seed}: {field} ({err:.3} of tolerance)");
        checked += 1;
    }
    assert!(checked >= 50, "only {checked} cases had an equilibrium");
}

#[test]
fn tagged_images_detect_mixing() {
    let a = common::tagged_image(5, &[2, 3]);
    let b = common::tagged_image(6, &[2, 3]);
    let n = dcgrid::modbus::reg::MEASUREMENT_COUNT as usize;
    let row = |img: &dcgrid::modbus::RegisterImage, u| img.unit(u).unwrap()[..n].to_vec();
    assert!(common::consistent(2, &row(&a, 2)));
    assert!(!common::consistent(3, &row(&a, 2)));
    let mut mixed = row(&a, 2);
    mixed[3] = row(&b, 2)[3];
    assert!(!common::consistent(2, &mixed));
}

#[test]
fn settling_check_sees_a_transient() {
    // 5 ms after the command step the loops are still moving
    let dt = ScenarioConfig::table1(1).sim.dt_sim_s;
    let early: Vec<f64> = (0..20u64).filter_map(|s| common::settle_case(s, dt, 0.005)).map(|e| e.0).collect();
    assert!(early.len() >= 10 && early.iter().all(|&e| e > 1.0), "{early:?}");
}
