use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datagen::{ImuSample, PositionSample};

fn imu_stream(rate: f64, t_end: f64, w: impl Fn(f64) -> f64, a: impl Fn(f64) -> f64) -> Vec<ImuSample> {
    let n = (t_end * rate).round() as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 / rate;
            ImuSample {
                time_s: t,
                yaw_rate: w(t),
                ax: a(t),
                ay: 0.0,
            }
        })
        .collect()
}

fn random_state(rng: &mut ChaCha8Rng) -> State {
    State {
        x: rng.random_range(-5.0..5.0),
        y: rng.random_range(-5.0..5.0),
        theta: rng.random_range(-3.0..3.0),
        v: rng.random_range(0.2..2.0),
        gyro_bias: rng.random_range(-0.05..0.05),
        accel_bias: rng.random_range(-0.1..0.1),
    }
}

fn numeric_jacobian(f: &Factor, states: &[State]) -> Vec<(usize, Vec<[f64; STATE_DIM]>)> {
    let eps = 1e-6;
    f.states()
        .into_iter()
        .map(|s| {
            let mut block = vec![[0.0; STATE_DIM]; f.dim()];
            for k in 0..STATE_DIM {
                let mut plus = states.to_vec();
                let mut minus = states.to_vec();
                let mut a = plus[s].to_array();
                a[k] += eps;
                plus[s] = State { theta: a[2], ..State::from_array(a) };
                let mut b = minus[s].to_array();
                b[k] -= eps;
                minus[s] = State { theta: b[2], ..State::from_array(b) };
                let (rp, rm) = (f.linearize(&plus).residual, f.linearize(&minus).residual);
                for row in 0..f.dim() {
                    let mut d = rp[row] - rm[row];
                    let angle_row = (f.name() == "imu" && row == 0) || (f.name() == "prior" && row == 2);
                    if angle_row {
                        d = wrap_angle(d);
                    }
                    block[row][k] = d / (2.0 * eps);
                }
            }
            (s, block)
        })
        .collect()
}

fn assert_jacobian_matches(f: &Factor, states: &[State]) {
    let lin = f.linearize(states);
    let num = numeric_jacobian(f, states);
    for ((sa, ana), (sn, nb)) in lin.blocks.iter().zip(&num) {
        assert_eq!(sa, sn);
        for (ra, rn) in ana.iter().zip(nb) {
            for (a, n) in ra.iter().zip(rn) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
                assert!(rel <= 1e-5, "{}: analytic {a} vs numeric {n}", f.name());
            }
        }
    }
}

#[test]
fn wrap_angle_boundaries() {
    assert_abs_diff_eq!(wrap_angle(PI), PI);
    assert_abs_diff_eq!(wrap_angle(-PI), PI);
    assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(wrap_angle(0.25), 0.25);
}

proptest! {
    #[test]
    fn wrapped_angles_stay_in_half_open_interval(a in -100.0f64..100.0) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        let k = ((a - w) / (2.0 * PI)).round();
        prop_assert!((a - w - 2.0 * PI * k).abs() < 1e-9);
    }

    #[test]
    fn state_retract_keeps_heading_wrapped(t in -3.0f64..3.0, d in -10.0f64..10.0) {
        let s = State { theta: t, ..State::default() }.retract(&[0.0, 0.0, d, 0.0, 0.0, 0.0]);
        prop_assert!(s.theta > -PI && s.theta <= PI);
    }

    #[test]
    fn ate_is_zero_for_identical_trajectories(xs in proptest::collection::vec(-10.0f64..10.0, 2..40)) {
        let p: Vec<PositionSample> = xs.iter().enumerate()
            .map(|(i, &x)| PositionSample { time_s: i as f64 * 0.1, x_m: x, y_m: -x })
            .collect();
        prop_assert_eq!(ate_rmse(&p, &p, 0.05).unwrap(), 0.0);
    }
}

#[test]
fn constant_acceleration_without_turning() {
    let a = 0.7;
    let imu = imu_stream(100.0, 2.0, |_| 0.0, |_| a);
    let p = preintegrate_imu(&imu, 0.25, 1.25, 0.0, 0.0).unwrap();
    assert_abs_diff_eq!(p.dt, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(p.dtheta, 0.0);
    assert_abs_diff_eq!(p.dv, a, epsilon = 1e-12);
    assert_abs_diff_eq!(p.dp[0], 0.5 * a, epsilon = 1e-12);
    assert_abs_diff_eq!(p.dp[1], 0.0);
    assert_abs_diff_eq!(p.dp_unit[0], 1.0, epsilon = 1e-12);
}

#[test]
fn preintegration_matches_fine_step_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let (w0, w1, wf) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.2..1.5));
        let (a0, a1, af) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..1.5));
        let v0 = rng.random_range(0.0..2.0);
        let w = move |t: f64| w0 + w1 * (wf * t).sin();
        let a = move |t: f64| a0 + a1 * (af * t).cos();
        let imu = imu_stream(200.0, 3.0, w, a);
        let (t0, t1) = (0.5, 2.5);
        let p = preintegrate_imu(&imu, t0, t1, 0.0, 0.0).unwrap();

        // Independent integration of the continuous signals on a grid
        // 1000 times finer than the IMU rate.
        let steps = (1000.0 * 200.0 * (t1 - t0)) as usize;
        let h = (t1 - t0) / steps as f64;
        let (mut phi, mut v, mut x, mut y) = (0.0f64, v0, 0.0, 0.0);
        for k in 0..steps {
            let t = t0 + k as f64 * h;
            let phi_m = phi + 0.5 * h * w(t + 0.5 * h);
            let v_m = v + 0.5 * h * a(t + 0.5 * h);
            x += h * v_m * phi_m.cos();
            y += h * v_m * phi_m.sin();
            phi += h * w(t + 0.5 * h);
            v += h * a(t + 0.5 * h);
        }
        let px = v0 * p.dp_unit[0] + p.dp[0];
        let py = v0 * p.dp_unit[1] + p.dp[1];
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-3);
        assert!(rel(p.dtheta, phi) <= 1e-4, "{} vs {phi}", p.dtheta);
        assert!(rel(p.dv, v - v0) <= 1e-4);
        let err = (px - x).hypot(py - y) / x.hypot(y).max(1e-3);
        assert!(err <= 1e-4, "displacement rel err {err}");
    }
}

#[test]
fn empty_interval_is_rejected() {
    let imu = imu_stream(10.0, 1.0, |_| 0.0, |_| 0.0);
    assert!(matches!(preintegrate_imu(&imu, 0.5, 0.5, 0.0, 0.0), Err(FusionError::Interval(_))));
    assert!(matches!(preintegrate_imu(&imu, 0.51, 0.55, 0.0, 0.0), Err(FusionError::Interval(_))));
    assert!(preintegrate_imu(&imu, 0.45, 0.55, 0.0, 0.0).is_ok());
}

#[test]
fn bias_derivatives_match_finite_differences() {
    let imu = imu_stream(100.0, 2.0, |t| 0.3 * t.sin(), |t| 0.5 - 0.2 * t);
    let grid = ImuGrid::between(&imu, 0.1, 1.7).unwrap();
    let (bg, ba, e) = (0.02, -0.05, 1e-6);
    let p = grid.integrate(bg, ba);
    let pg = (grid.integrate(bg + e, ba), grid.integrate(bg - e, ba));
    let pa = (grid.integrate(bg, ba + e), grid.integrate(bg, ba - e));
    for k in 0..2 {
        assert_abs_diff_eq!(p.dp_unit_dbg[k], (pg.0.dp_unit[k] - pg.1.dp_unit[k]) / (2.0 * e), epsilon = 1e-7);
        assert_abs_diff_eq!(p.dp_dbg[k], (pg.0.dp[k] - pg.1.dp[k]) / (2.0 * e), epsilon = 1e-7);
        assert_abs_diff_eq!(p.dp_dba[k], (pa.0.dp[k] - pa.1.dp[k]) / (2.0 * e), epsilon = 1e-7);
    }
}

#[test]
fn analytic_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let imu = imu_stream(100.0, 2.0, |t| 0.4 * (1.3 * t).sin() + 0.1, |t| 0.3 * t.cos());
    for _ in 0..20 {
        let states = [random_state(&mut rng), random_state(&mut rng)];
        let factors = [
            Factor::new(FactorKind::Prior {
                state: 1,
                mean: random_state(&mut rng),
                std: [0.1, 0.2, 0.05, 0.3, 0.01, 0.02],
            }),
            Factor::new(FactorKind::Imu {
                from: 0,
                to: 1,
                grid: ImuGrid::between(&imu, 0.2, 1.4).unwrap(),
                std: [0.01, 0.05, 0.02, 0.03],
            }),
            Factor::new(FactorKind::Wheel {
                state: 0,
                speed_mps: 1.0,
                std: 0.05,
            }),
            Factor::new(FactorKind::Gpr {
                from: 0,
                to: 1,
                distance_m: 1.5,
                dt_s: 0.4,
                std: 0.02,
                form: GprForm::Distance,
            }),
            Factor::new(FactorKind::Gpr {
                from: 0,
                to: 1,
                distance_m: 0.3,
                dt_s: 0.4,
                std: 0.02,
                form: GprForm::Speed,
            }),
            Factor::new(FactorKind::BiasWalk {
                from: 0,
                to: 1,
                std: [1e-3, 1e-2],
            }),
        ];
        for f in &factors {
            assert_jacobian_matches(f, &states);
        }
    }
}

#[test]
fn wheel_residual_example() {
    let f = Factor::new(FactorKind::Wheel {
        state: 0,
        speed_mps: 1.0,
        std: 0.1,
    });
    let s = State { v: 1.2, ..State::default() };
    assert_abs_diff_eq!(f.linearize(&[s]).residual[0], 2.0, epsilon = 1e-12);
}

#[test]
fn coincident_poses_give_a_finite_damped_jacobian() {
    let f = Factor::new(FactorKind::Gpr {
        from: 0,
        to: 1,
        distance_m: 0.2,
        dt_s: 0.4,
        std: 0.02,
        form: GprForm::Distance,
    });
    let s = State { x: 1.0, y: 2.0, ..State::default() };
    let lin = f.linearize(&[s, s]);
    assert_abs_diff_eq!(lin.residual[0], -10.0, epsilon = 1e-12);
    for (_, block) in &lin.blocks {
        assert!(block[0].iter().all(|v| v.is_finite()));
    }
    let near = State { x: 1.0 + 1e-12, ..s };
    let lin = f.linearize(&[s, near]);
    assert!(lin.blocks[1].1[0][0].abs() < 1.0 / 0.02);
}

fn prior_factor(state: usize, mean: State) -> Factor {
    Factor::new(FactorKind::Prior {
        state,
        mean,
        std: [0.01, 0.01, 0.01, 0.01, 0.02, 0.1],
    })
}

#[test]
fn prior_only_graph_recovers_the_priors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let means: Vec<State> = (0..4).map(|_| random_state(&mut rng)).collect();
    let mut g = FactorGraph::new(vec![State::default(); 4]);
    for (i, m) in means.iter().enumerate() {
        g.add(prior_factor(i, *m));
    }
    let report = g.optimize(&SolverConfig::default()).unwrap();
    assert!(report.final_cost < 1e-20);
    for (s, m) in g.states.iter().zip(&means) {
        for (a, b) in s.to_array().iter().zip(m.to_array()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }
}

fn line_record() -> crate::datagen::TrajectoryRecord {
    simulate_scenario(&ScenarioConfig::noiseless_line(12.0), "line", 1).unwrap()
}

#[test]
fn noiseless_straight_line_is_recovered() {
    let rec = line_record();
    let cfg = FusionConfig::default();
    let times = state_times(&rec, &cfg).unwrap();
    let mut g = build_graph(&rec, &times, rec.gpr_odom.as_deref().unwrap(), &cfg).unwrap();
    // Start away from the truth so the solver has work to do.
    for (i, s) in g.states.iter_mut().enumerate().skip(1) {
        s.x += 0.05 * (i as f64).sin();
        s.y -= 0.03;
        s.v += 0.02;
    }
    let report = g.optimize(&cfg.solver).unwrap();
    assert!(report.final_cost < 1e-12, "final cost {}", report.final_cost);
    for (t, s) in times.iter().zip(&g.states) {
        let k = rec.ground_truth.iter().position(|p| (p.time_s - t).abs() < 1e-9).unwrap();
        let p = &rec.ground_truth[k];
        assert!((s.x - p.x_m).hypot(s.y - p.y_m) <= 1e-6, "pose at {t} off by {}", (s.x - p.x_m).hypot(s.y - p.y_m));
    }
}

#[test]
fn accepted_costs_never_increase() {
    let rec = simulate_scenario(&ScenarioConfig { duration_s: 20.0, ..ScenarioConfig::default() }, "s", 3).unwrap();
    let cfg = FusionConfig::default();
    let times = state_times(&rec, &cfg).unwrap();
    let mut g = build_graph(&rec, &times, rec.gpr_odom.as_deref().unwrap(), &cfg).unwrap();
    let report = g.optimize(&cfg.solver).unwrap();
    assert!(report.iterations <= cfg.solver.max_iterations);
    assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));
    assert!(report.final_cost < report.initial_cost);
}

#[test]
fn missing_prior_is_reported_as_rank_deficient() {
    let rec = line_record();
    let cfg = FusionConfig::default();
    let times = state_times(&rec, &cfg).unwrap();
    let mut g = build_graph(&rec, &times, rec.gpr_odom.as_deref().unwrap(), &cfg).unwrap();
    g.factors.retain(|f| f.name() != "prior");
    match g.optimize(&cfg.solver) {
        Err(FusionError::UnderConstrained(vars)) => {
            assert!(!vars.is_empty());
            assert!(vars.iter().all(|v| v.starts_with("state ")));
        }
        other => panic!("expected a rank error, got {other:?}"),
    }
}

#[test]
fn non_adjacent_factor_is_rejected() {
    let mut g = FactorGraph::new(vec![State::default(); 3]);
    g.add(prior_factor(0, State::default()));
    g.add(Factor::new(FactorKind::BiasWalk { from: 0, to: 2, std: [1.0, 1.0] }));
    assert!(matches!(g.optimize(&SolverConfig::default()), Err(FusionError::Structure { .. })));
}

fn track(offset: (f64, f64), dt: f64) -> Vec<PositionSample> {
    (0..20)
        .map(|i| PositionSample {
            time_s: i as f64 * 0.1 + dt,
            x_m: i as f64 + offset.0,
            y_m: 0.5 * i as f64 + offset.1,
        })
        .collect()
}

#[test]
fn ate_of_constant_offset() {
    let truth = track((0.0, 0.0), 0.0);
    assert_abs_diff_eq!(ate_rmse(&track((1.0, 1.0), 0.0), &truth, 0.05).unwrap(), 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(ate_rmse(&track((1.0, 1.0), 0.03), &truth, 0.05).unwrap(), 1.0, epsilon = 1e-12);
}

#[test]
fn ate_needs_an_association() {
    let truth = track((0.0, 0.0), 0.0);
    assert!(matches!(
        ate_rmse(&track((0.0, 0.0), 10.0), &truth, 0.05),
        Err(FusionError::NoAssociation { .. })
    ));
    assert!(matches!(ate_rmse(&track((0.0, 0.0), 0.0), &[], 0.05), Err(FusionError::NoAssociation { .. })));
}

#[test]
fn association_picks_nearest_within_tolerance() {
    let truth = track((0.0, 0.0), 0.0);
    let est = vec![
        PositionSample { time_s: 0.26, x_m: 0.0, y_m: 0.0 },
        PositionSample { time_s: 1.9 + 0.06, x_m: 0.0, y_m: 0.0 },
    ];
    assert_eq!(associate(&est, &truth, 0.05), vec![(0, 3)]);
}

#[test]
fn length_weighted_overall_error() {
    let v = overall_weighted(&[0.353, 0.751, 0.380], &[365.0, 264.0, 90.0]).unwrap();
    assert_abs_diff_eq!(v, (0.353 * 365.0 + 0.751 * 264.0 + 0.380 * 90.0) / 719.0, epsilon = 1e-12);
    assert!((v - 0.502).abs() < 1e-3);
    assert_abs_diff_eq!(overall_weighted(&[1.0, 4.0], &[2.0, 1.0]).unwrap(), 2.0, epsilon = 1e-12);
    assert!(matches!(overall_weighted(&[1.0], &[1.0, 2.0]), Err(FusionError::Input(_))));
}

#[test]
fn gpr_factors_improve_on_imu_and_wheel() {
    for seed in 0..3 {
        let rec = simulate_scenario(&ScenarioConfig::default(), "s", seed).unwrap();
        let d = rec.gpr_odom.clone().unwrap();
        let with = fuse_record(&rec, &d, &FusionConfig::default()).unwrap();
        let without_cfg = FusionConfig {
            sensors: Sensors { wheel: true, gpr: false },
            ..FusionConfig::default()
        };
        let without = fuse_record(&rec, &d, &without_cfg).unwrap();
        assert_eq!(without.gpr_factors, 0);
        assert!(with.gpr_factors > 100);
        let (a, b) = (with.ate_m.unwrap(), without.ate_m.unwrap());
        assert!(a <= b, "seed {seed}: with GPR {a} m, without {b} m");
    }
}

#[test]
fn speed_form_also_converges() {
    let rec = simulate_scenario(&ScenarioConfig { duration_s: 20.0, ..ScenarioConfig::default() }, "s", 4).unwrap();
    let cfg = FusionConfig { gpr_form: GprForm::Speed, ..FusionConfig::default() };
    let r = fuse_record(&rec, rec.gpr_odom.as_deref().unwrap(), &cfg).unwrap();
    assert!(r.ate_m.unwrap().is_finite());
    assert!(r.report.final_cost < r.report.initial_cost);
}

#[test]
fn outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let states = vec![State::default(), State { x: 1.0, y: 0.5, theta: 0.2, v: 1.0, ..State::default() }];
    let csv_path = dir.path().join("t.csv");
    write_trajectory_csv(&csv_path, &[0.0, 0.4], &states).unwrap();
    let body = std::fs::read_to_string(&csv_path).unwrap();
    assert!(body.starts_with("time_s,x_m,y_m,theta_rad,v_mps\n"));
    assert_eq!(body.lines().count(), 3);
    let svg = render_svg("run <a>", &[("truth", "black", vec![(0.0, 0.0), (1.0, 1.0)])]);
    assert!(svg.starts_with("<svg") && svg.contains("<polyline") && svg.contains("run &lt;a&gt;"));
}

#[test]
fn scenario_is_deterministic_and_validated() {
    let cfg = ScenarioConfig { duration_s: 5.0, ..ScenarioConfig::default() };
    let a = simulate_scenario(&cfg, "a", 8).unwrap();
    let b = simulate_scenario(&cfg, "a", 8).unwrap();
    assert_eq!(a, b);
    a.validate().unwrap();
    let bad = ScenarioConfig { frame_period_s: 0.0, speed_amplitude_mps: 5.0, ..cfg };
    match simulate_scenario(&bad, "x", 0) {
        Err(FusionError::Config(e)) => assert_eq!(e.len(), 2),
        other => panic!("{other:?}"),
    }
}
