//! Acceptance suite. Prints one `PASS` or `FAIL` line per criterion and
//! exits non-zero if any criterion fails. Pass a substring to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gpr_odom::autonn::{Graph, Mode, PoolKind, Tensor, Var};
use gpr_odom::datagen::{generate_dataset, split, Dataset, DatasetConfig, OdomPair, PairConfig, SplitSpec};
use gpr_odom::fusion::{
    ate_rmse, build_graph, fuse_record, overall_weighted, simulate_scenario, state_times, wrap_angle, Factor,
    FactorKind, FusionConfig, GprForm, ImuGrid, ScenarioConfig, Sensors, State, STATE_DIM,
};
use gpr_odom::odomnet::{rmse_loss, NetConfig, OdomNet, Variant};
use gpr_odom::preprocess::wavelet::{denoise, WaveletFamily};
use gpr_odom::preprocess::butterworth::BandpassFilter;
use gpr_odom::preprocess::{dewow, sec_gain, AScan, SecConfig};
use gpr_odom::trainer::{dataset_hash, evaluate_relative, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, budget_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < budget_s, || {
        format!("took {:.1} s, budget {budget_s} s", elapsed.as_secs_f64())
    })
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Var {
    let r = g.constant(random(&g.shape(y).to_vec(), seed));
    let p = g.mul(y, r).unwrap();
    g.sum(p)
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Worst relative error between autodiff and central differences over every
/// element of every input.
fn worst_input_grad_error(inputs: &[Tensor], build: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone())).collect();
        let l = build(&mut g, &vars);
        g.value(l).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_requires_grad(true))).collect();
    let l = build(&mut g, &vars);
    g.backward(l).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).unwrap().to_vec();
        for (k, a) in analytic.iter().enumerate() {
            let (mut p, mut m) = (inputs.to_vec(), inputs.to_vec());
            p[i].data_mut()[k] += h;
            m[i].data_mut()[k] -= h;
            let numeric = (eval(&p) - eval(&m)) / (2.0 * h);
            worst = worst.max(rel_err(*a, numeric, 1e-2));
        }
    }
    worst
}

/// Central difference on the widest stencil, from h = 1e-5 down to 1e-9,
/// whose forward and backward slopes agree to 1e-4, i.e. that does not
/// straddle a ReLU or max-pool kink. Returns the difference and its step.
fn smooth_central(f0: f64, mut f: impl FnMut(f64) -> f64) -> Option<(f64, f64)> {
    for h in [1e-5, 1e-6, 1e-7, 1e-8, 1e-9] {
        let (up, down) = (f(h), f(-h));
        let central = (up - down) / (2.0 * h);
        if rel_err((up - f0) / h, (f0 - down) / h, 1e-2) <= 1e-4 {
            return Some((central, h));
        }
    }
    None
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;
    let x4 = random(&[2, 3, 6, 6], 1);
    let cases: Vec<(&str, Vec<Tensor>, Build)> = vec![
        (
            "conv2d",
            vec![x4.clone(), random(&[4, 3, 3, 3], 2), random(&[4], 3)],
            Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), (2, 2), (1, 1)).unwrap();
                weighted_sum(g, y, 4)
            }),
        ),
        (
            "batch_norm/train",
            vec![x4.clone(), random(&[3], 5), random(&[3], 6)],
            Box::new(|g, v| {
                let (y, _) = g.batch_norm(v[0], v[1], v[2], (&[0.0; 3], &[1.0; 3]), 1e-5, Mode::Train).unwrap();
                weighted_sum(g, y, 7)
            }),
        ),
        (
            "batch_norm/eval",
            vec![x4.clone(), random(&[3], 8), random(&[3], 9)],
            Box::new(|g, v| {
                let (y, _) = g
                    .batch_norm(v[0], v[1], v[2], (&[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0]), 1e-5, Mode::Eval)
                    .unwrap();
                weighted_sum(g, y, 10)
            }),
        ),
        (
            "relu",
            vec![x4.clone()],
            Box::new(|g, v| {
                let y = g.relu(v[0]);
                weighted_sum(g, y, 11)
            }),
        ),
        (
            "sigmoid",
            vec![x4.clone()],
            Box::new(|g, v| {
                let y = g.sigmoid(v[0]);
                weighted_sum(g, y, 12)
            }),
        ),
        (
            "linear",
            vec![random(&[3, 5], 13), random(&[4, 5], 14), random(&[4], 15)],
            Box::new(|g, v| {
                let y = g.linear(v[0], v[1], Some(v[2])).unwrap();
                weighted_sum(g, y, 16)
            }),
        ),
        (
            "dropout",
            vec![random(&[4, 8], 17)],
            Box::new(|g, v| {
                let y = g.dropout(v[0], 0.3, Mode::Train, 18).unwrap();
                weighted_sum(g, y, 19)
            }),
        ),
        (
            "max_pool",
            vec![x4.clone()],
            Box::new(|g, v| {
                let y = g.pool(v[0], PoolKind::Max, (3, 3), (2, 2)).unwrap();
                weighted_sum(g, y, 20)
            }),
        ),
        (
            "avg_pool",
            vec![x4.clone()],
            Box::new(|g, v| {
                let y = g.pool(v[0], PoolKind::Avg, (2, 2), (2, 2)).unwrap();
                weighted_sum(g, y, 21)
            }),
        ),
        (
            "global_avg_pool",
            vec![x4.clone()],
            Box::new(|g, v| {
                let y = g.global_avg_pool(v[0]).unwrap();
                weighted_sum(g, y, 22)
            }),
        ),
        (
            "add/sub/mul/abs_diff",
            vec![x4.clone(), random(&[2, 3, 6, 6], 23), random(&[1, 3, 1, 1], 24)],
            Box::new(|g, v| {
                let a = g.add(v[0], v[2]).unwrap();
                let s = g.sub(v[1], v[2]).unwrap();
                let m = g.mul(a, s).unwrap();
                let d = g.abs_diff(m, v[1]).unwrap();
                weighted_sum(g, d, 25)
            }),
        ),
        (
            "concat/reshape/flatten",
            vec![x4.clone(), random(&[2, 2, 6, 6], 26)],
            Box::new(|g, v| {
                let c = g.concat(&[v[0], v[1]], 1).unwrap();
                let r = g.reshape(c, &[2, 5, 36]).unwrap();
                let f = g.flatten(r).unwrap();
                weighted_sum(g, f, 27)
            }),
        ),
        (
            "square/sqrt/scale/mean",
            vec![x4.clone()],
            Box::new(|g, v| {
                let s = g.square(v[0]);
                let k = g.scale(s, 2.5);
                let r = g.sqrt(k);
                let w = weighted_sum(g, r, 28);
                let m = g.mean(s);
                g.add(w, m).unwrap()
            }),
        ),
        (
            "cosine_channel",
            vec![x4.clone(), random(&[2, 3, 6, 6], 29)],
            Box::new(|g, v| {
                let y = g.cosine_channel(v[0], v[1]).unwrap();
                weighted_sum(g, y, 30)
            }),
        ),
    ];
    let mut report = Vec::new();
    for (name, inputs, build) in &cases {
        let worst = worst_input_grad_error(inputs, build.as_ref());
        ensure(worst <= 1e-4, || format!("{name}: worst relative error {worst:.2e}"))?;
        report.push(worst);
    }

    // Every trainable parameter and every input pixel of the toy network.
    let mut net = OdomNet::new(NetConfig::tiny(32, 32), 31).unwrap();
    // A batch of two makes train-mode batch norm at 1×1 extent map the two
    // samples to exact negatives, which parks later ReLUs on their kinks.
    let (prev, cur) = (random(&[4, 1, 32, 32], 32), random(&[4, 1, 32, 32], 33));
    let loss = |net: &OdomNet, g: &mut Graph, a: Var, b: Var| {
        let y = net.forward(g, a, b, Mode::Train, Some(34)).unwrap();
        rmse_loss(g, y, &[0.2, 0.35, 0.1, 0.4]).unwrap()
    };
    let mut g = Graph::new();
    let (a, b) = (g.leaf(prev.clone().with_requires_grad(true)), g.leaf(cur.clone().with_requires_grad(true)));
    let l = loss(&net, &mut g, a, b);
    g.backward(l).unwrap();
    let grads = net.store.gradients(&g);
    let entries: Vec<(String, usize)> = net
        .store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(n, p)| (0..p.tensor.len()).map(move |k| (n.to_string(), k)))
        .collect();
    let value = |net: &OdomNet, p: &Tensor, c: &Tensor| {
        let mut g = Graph::new();
        let (a, b) = (g.constant(p.clone()), g.constant(c.clone()));
        let l = loss(net, &mut g, a, b);
        g.value(l).item()
    };
    let f0 = value(&net, &prev, &cur);
    let mut narrowed = 0;
    let mut check = |what: String, analytic: f64, fd: Option<(f64, f64)>, worst: &mut f64| {
        let (numeric, h) = fd.ok_or_else(|| format!("toy network {what}: no kink-free stencil down to 1e-9"))?;
        if h < 1e-5 {
            narrowed += 1;
        }
        let e = rel_err(analytic, numeric, 1e-2);
        ensure(e <= 1e-4, || format!("toy network {what}: relative error {e:.2e} at h = {h:e}"))?;
        *worst = worst.max(e);
        Ok::<(), String>(())
    };
    let mut worst_param = 0.0f64;
    for (name, k) in &entries {
        let orig = net.store.get(name).unwrap().data()[*k];
        let fd = smooth_central(f0, |d| {
            net.store.get_mut(name).unwrap().data_mut()[*k] = orig + d;
            value(&net, &prev, &cur)
        });
        net.store.get_mut(name).unwrap().data_mut()[*k] = orig;
        check(format!("{name}[{k}]"), grads[name.as_str()][*k], fd, &mut worst_param)?;
    }
    let mut worst_input = 0.0f64;
    for (which, var) in [(0, a), (1, b)] {
        let analytic = g.grad(var).unwrap().to_vec();
        for (k, an) in analytic.iter().enumerate() {
            let fd = smooth_central(f0, |d| {
                let (mut p, mut c) = (prev.clone(), cur.clone());
                if which == 0 {
                    p.data_mut()[k] += d
                } else {
                    c.data_mut()[k] += d
                }
                value(&net, &p, &c)
            });
            check(format!("input {which}[{k}]"), *an, fd, &mut worst_input)?;
        }
    }
    within(t.elapsed(), 120.0)?;
    Ok(format!(
        "{} layers worst {:.1e}; toy network {} parameters worst {:.1e}, {} input pixels worst {:.1e}; {narrowed} stencils narrowed past a kink",
        cases.len(),
        report.iter().fold(0.0f64, |m, v| m.max(*v)),
        entries.len(),
        worst_param,
        2 * prev.len(),
        worst_input
    ))
}

fn dsp_suite() -> Outcome {
    use rustfft::{num_complex::Complex, FftPlanner};
    let t = Instant::now();
    let fs = 10_000.0;
    let mut worst_db = 0.0f64;
    for order in [1, 2, 4, 6] {
        let f = BandpassFilter::design(order, 1000.0, 4000.0, fs).map_err(|e| e.to_string())?;
        let mut buf: Vec<Complex<f64>> =
            f.impulse_response(10_000).into_iter().map(|v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        for bin in [1000, 4000] {
            let db = 20.0 * buf[bin].norm().log10();
            let dev = (db + 3.0103).abs();
            ensure(dev <= 0.2, || format!("order {order} at {bin} Hz: {db:.3} dB"))?;
            worst_db = worst_db.max(dev);
        }
    }

    let mut worst_dewow = 0.0f64;
    for (c, window) in [(4.2, 9), (-1e3, 3), (0.5, 63)] {
        let trace = AScan::new(vec![c; 64], 1e-9, 0.0, None).unwrap();
        let out = dewow(&trace, window).map_err(|e| e.to_string())?;
        let m = out.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        ensure(m <= 1e-12 * c.abs().max(1.0), || format!("dewow left {m} on constant {c}"))?;
        worst_dewow = worst_dewow.max(m);
    }

    let x: Vec<f64> = (0..200).map(|k| (k as f64 * 0.37).sin() + 0.01 * k as f64 + (k % 7) as f64 * 0.1).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut worst_wave = 0.0f64;
    for fam in [WaveletFamily::Haar, WaveletFamily::Db4] {
        for levels in 1..=5 {
            let y = denoise(&x, fam, levels, |_| 0.0).map_err(|e| e.to_string())?;
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm;
            ensure(err <= 1e-8, || format!("{fam:?} with {levels} levels: relative error {err:.2e}"))?;
            worst_wave = worst_wave.max(err);
        }
    }

    // Two unit echoes at samples 10 and 30 with dt = 1 ns and t_ref = 1 ns.
    let mut echo = vec![0.0; 64];
    echo[10] = 1.0;
    echo[30] = 1.0;
    let trace = AScan::new(echo, 1e-9, 0.0, None).unwrap();
    let mut worst_sec = 0.0f64;
    for (alpha, p) in [(0.0, 1.0), (5e7, 1.0), (3e7, 2.0), (1e8, 0.5)] {
        let out = sec_gain(&trace, &SecConfig { alpha_per_s: alpha, spreading_exponent: p, time_zero_s: 0.0 })
            .map_err(|e| e.to_string())?;
        let ratio = out.samples[30] / out.samples[10];
        let expect = 3f64.powf(p) * (alpha * 20e-9f64).exp();
        let e = (ratio - expect).abs() / expect;
        ensure(e <= 1e-12, || format!("alpha {alpha}, p {p}: ratio {ratio} vs {expect}"))?;
        worst_sec = worst_sec.max(e);
    }
    within(t.elapsed(), 60.0)?;
    Ok(format!(
        "cutoff deviation {worst_db:.3} dB; dewow residual {worst_dewow:.1e}; reconstruction {worst_wave:.1e}; SEC ratio {worst_sec:.1e}"
    ))
}

fn architecture_invariants() -> Outcome {
    let t = Instant::now();
    let net = OdomNet::new(NetConfig::tiny(64, 64), 41).unwrap();
    let diff = |a: &Tensor, b: &Tensor| {
        let mut g = Graph::new();
        let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
        let d = net.difference_branch(&mut g, x, y, Mode::Eval).unwrap();
        [d.delta, d.conv, d.channel_attention, d.spatial_attention, d.weighted, d.descriptor]
            .map(|v| g.value(v).clone())
    };
    let c = net.cfg.compressed_channels;
    for s in 0..50 {
        let (a, b) = (random(&[2, c, 4, 4], 100 + s), random(&[2, c, 4, 4], 200 + s));
        let (ab, ba) = (diff(&a, &b), diff(&b, &a));
        ensure(ab == ba, || format!("difference branch not symmetric for sample {s}"))?;
        let gates_ok = ab[2].data().iter().chain(ab[3].data()).all(|v| *v > 0.0 && *v < 1.0);
        ensure(gates_ok, || format!("attention gate outside (0, 1) for sample {s}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..1000 {
        let scale = 10f64.powf(rng.random_range(-6.0..6.0));
        let shape = [1, rng.random_range(1..6), rng.random_range(1..4), rng.random_range(1..4)];
        let (a, b) = (random(&shape, rng.random()), random(&shape, rng.random()));
        let b = Tensor::new(&shape, b.data().iter().map(|v| v * scale).collect()).unwrap();
        let mut g = Graph::new();
        let (x, y) = (g.constant(a), g.constant(b));
        let m = net.similarity_map(&mut g, x, y).unwrap();
        let ok = g.value(m).data().iter().all(|v| (-1.0..=1.0).contains(v));
        ensure(ok, || format!("similarity outside [-1, 1] on input {case}"))?;
    }

    let small = OdomNet::new(NetConfig::tiny(32, 32), 43).unwrap();
    let mut g = Graph::new();
    let x = g.constant(random(&[3, 1, 32, 32], 44));
    let fp = small.extract_features(&mut g, x, Mode::Eval).unwrap();
    let fc = small.extract_features(&mut g, x, Mode::Eval).unwrap();
    let d = small
        .difference_branch(&mut g, fp.compressed.unwrap(), fc.compressed.unwrap(), Mode::Eval)
        .unwrap();
    ensure(g.value(d.delta).data().iter().all(|v| *v == 0.0), || "identical frames gave a nonzero difference".into())?;
    within(t.elapsed(), 60.0)?;
    Ok("50 symmetric pairs, 1000 bounded similarity maps, gates in (0, 1), zero difference".into())
}

struct Learned {
    train: Vec<OdomPair>,
    test: Vec<OdomPair>,
    baseline: f64,
    full_rmse: f64,
    elapsed: Duration,
}

static LEARNED: OnceLock<Result<Learned, String>> = OnceLock::new();

fn default_split(ds: &Dataset) -> Result<(Vec<OdomPair>, Vec<OdomPair>), String> {
    split(&ds.pairs, &SplitSpec::last_fifth(&ds.trajectories())).map_err(|e| e.to_string())
}

fn mean_predictor_rmse(train: &[OdomPair], test: &[OdomPair]) -> f64 {
    let mean = train.iter().map(|p| p.label).sum::<f64>() / train.len() as f64;
    (test.iter().map(|p| (p.label - mean).powi(2)).sum::<f64>() / test.len() as f64).sqrt()
}

fn learned() -> &'static Result<Learned, String> {
    LEARNED.get_or_init(|| {
        let t = Instant::now();
        let ds = generate_dataset(&DatasetConfig::default(), 42).map_err(|e| e.to_string())?;
        let (train_pairs, test) = default_split(&ds)?;
        let baseline = mean_predictor_rmse(&train_pairs, &test);
        let out = train(&train_pairs, &NetConfig::default(), &TrainConfig::default()).map_err(|e| e.to_string())?;
        let full_rmse = evaluate_relative(&out.net, &test).map_err(|e| e.to_string())?.overall_rmse;
        Ok(Learned { train: train_pairs, test, baseline, full_rmse, elapsed: t.elapsed() })
    })
}

fn end_to_end_learning() -> Outcome {
    let l = learned().as_ref().map_err(Clone::clone)?;
    let ratio = l.full_rmse / l.baseline;
    let threads = gpr_odom::par::threads();
    // The budget is stated for four cores; fewer cores scale it linearly.
    let budget = 1800.0 * 4.0 / threads.clamp(1, 4) as f64;
    ensure(ratio < 0.5, || {
        format!("test RMSE {:.4} m is {ratio:.3} of the mean predictor's {:.4} m", l.full_rmse, l.baseline)
    })?;
    within(l.elapsed, budget)?;
    Ok(format!(
        "test RMSE {:.4} m vs mean predictor {:.4} m (ratio {ratio:.3}); {} train / {} test pairs; {:.0} s on {threads} thread(s), budget {budget:.0} s",
        l.full_rmse,
        l.baseline,
        l.train.len(),
        l.test.len(),
        l.elapsed.as_secs_f64()
    ))
}

fn ablation_direction() -> Outcome {
    let l = learned().as_ref().map_err(Clone::clone)?;
    let cfg = TrainConfig { variant: Variant::FeatureConcat, ..TrainConfig::default() };
    let out = train(&l.train, &NetConfig::default(), &cfg).map_err(|e| e.to_string())?;
    let concat = evaluate_relative(&out.net, &l.test).map_err(|e| e.to_string())?.overall_rmse;
    ensure(l.full_rmse <= concat, || {
        format!("full {:.4} m exceeds feature concatenation {concat:.4} m", l.full_rmse)
    })?;
    Ok(format!(
        "full {:.4} m <= feature concatenation {concat:.4} m ({:.1}% lower)",
        l.full_rmse,
        100.0 * (1.0 - l.full_rmse / concat)
    ))
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

fn worst_jacobian_error(f: &Factor, states: &[State]) -> f64 {
    let lin = f.linearize(states);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for (s, block) in &lin.blocks {
        for k in 0..STATE_DIM {
            let shifted = |d: f64| {
                let mut st = states.to_vec();
                let mut a = st[*s].to_array();
                a[k] += d;
                st[*s] = State { theta: a[2], ..State::from_array(a) };
                f.linearize(&st).residual
            };
            let (rp, rm) = (shifted(eps), shifted(-eps));
            for row in 0..f.dim() {
                let mut d = rp[row] - rm[row];
                if (f.name() == "imu" && row == 0) || (f.name() == "prior" && row == 2) {
                    d = wrap_angle(d);
                }
                worst = worst.max(rel_err(block[row][k], d / (2.0 * eps), 1.0));
            }
        }
    }
    worst
}

fn fusion_exactness() -> Outcome {
    let rec = simulate_scenario(&ScenarioConfig::noiseless_line(12.0), "line", 1).map_err(|e| e.to_string())?;
    let cfg = FusionConfig::default();
    let times = state_times(&rec, &cfg).map_err(|e| e.to_string())?;
    let mut g = build_graph(&rec, &times, rec.gpr_odom.as_deref().unwrap(), &cfg).map_err(|e| e.to_string())?;
    for (i, s) in g.states.iter_mut().enumerate().skip(1) {
        s.x += 0.05 * (i as f64).sin();
        s.y -= 0.03;
        s.v += 0.02;
    }
    let report = g.optimize(&cfg.solver).map_err(|e| e.to_string())?;
    let mut worst_pose = 0.0f64;
    for (t, s) in times.iter().zip(&g.states) {
        let p = rec
            .ground_truth
            .iter()
            .find(|p| (p.time_s - t).abs() < 1e-9)
            .ok_or_else(|| format!("no ground truth at {t} s"))?;
        worst_pose = worst_pose.max((s.x - p.x_m).hypot(s.y - p.y_m));
    }
    ensure(worst_pose <= 1e-6, || format!("noiseless pose error {worst_pose:.2e} m"))?;
    ensure(report.cost_history.windows(2).all(|w| w[1] <= w[0]), || "cost rose on an accepted step".into())?;

    let noisy = simulate_scenario(&ScenarioConfig::default(), "noisy", 3).map_err(|e| e.to_string())?;
    let times = state_times(&noisy, &cfg).map_err(|e| e.to_string())?;
    let mut g = build_graph(&noisy, &times, noisy.gpr_odom.as_deref().unwrap(), &cfg).map_err(|e| e.to_string())?;
    let noisy_report = g.optimize(&cfg.solver).map_err(|e| e.to_string())?;
    let monotone = noisy_report.cost_history.windows(2).all(|w| w[1] <= w[0]);
    ensure(monotone, || "cost rose on an accepted step of the noisy solve".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let imu: Vec<_> = (0..=200)
        .map(|k| {
            let t = k as f64 / 100.0;
            gpr_odom::datagen::ImuSample { time_s: t, yaw_rate: 0.4 * (1.3 * t).sin() + 0.1, ax: 0.3 * t.cos(), ay: 0.0 }
        })
        .collect();
    let mut worst_jac = 0.0f64;
    for _ in 0..20 {
        let states = [random_state(&mut rng), random_state(&mut rng)];
        let factors = [
            FactorKind::Prior { state: 1, mean: random_state(&mut rng), std: [0.1, 0.2, 0.05, 0.3, 0.01, 0.02] },
            FactorKind::Imu {
                from: 0,
                to: 1,
                grid: ImuGrid::between(&imu, 0.2, 1.4).map_err(|e| e.to_string())?,
                std: [0.01, 0.05, 0.02, 0.03],
            },
            FactorKind::Wheel { state: 0, speed_mps: 1.0, std: 0.05 },
            FactorKind::Gpr { from: 0, to: 1, distance_m: 1.5, dt_s: 0.4, std: 0.02, form: GprForm::Distance },
            FactorKind::Gpr { from: 0, to: 1, distance_m: 0.3, dt_s: 0.4, std: 0.02, form: GprForm::Speed },
            FactorKind::BiasWalk { from: 0, to: 1, std: [1e-3, 1e-2] },
        ];
        for kind in factors {
            let f = Factor::new(kind);
            let e = worst_jacobian_error(&f, &states);
            ensure(e <= 1e-5, || format!("{} Jacobian relative error {e:.2e}", f.name()))?;
            worst_jac = worst_jac.max(e);
        }
    }
    Ok(format!(
        "noiseless pose error {worst_pose:.1e} m; {} + {} accepted steps monotone; Jacobian error {worst_jac:.1e}",
        report.cost_history.len() - 1,
        noisy_report.cost_history.len() - 1
    ))
}

fn fusion_benefit() -> Outcome {
    let t = Instant::now();
    let mut lines = Vec::new();
    for seed in 0..3 {
        let rec = simulate_scenario(&ScenarioConfig::default(), "s", 42 + seed).map_err(|e| e.to_string())?;
        let d = rec.gpr_odom.clone().unwrap();
        let with = fuse_record(&rec, &d, &FusionConfig::default()).map_err(|e| e.to_string())?;
        let base_cfg = FusionConfig { sensors: Sensors { wheel: true, gpr: false }, ..FusionConfig::default() };
        let without = fuse_record(&rec, &d, &base_cfg).map_err(|e| e.to_string())?;
        let (a, b) = (with.ate_m.unwrap(), without.ate_m.unwrap());
        ensure(a <= b, || format!("seed {}: ATE with GPR {a:.3} m > without {b:.3} m", 42 + seed))?;
        lines.push(format!("{a:.3} <= {b:.3}"));
    }
    within(t.elapsed(), 120.0)?;
    Ok(format!("ATE with GPR vs IMU+wheel (m): {}", lines.join(", ")))
}

fn metric_arithmetic() -> Outcome {
    let truth: Vec<_> = (0..20)
        .map(|i| gpr_odom::datagen::PositionSample { time_s: i as f64 * 0.1, x_m: i as f64, y_m: 0.5 * i as f64 })
        .collect();
    for (dx, dy) in [(1.0, 1.0), (-1.0, 1.0)] {
        let est: Vec<_> = truth
            .iter()
            .map(|p| gpr_odom::datagen::PositionSample { x_m: p.x_m + dx, y_m: p.y_m + dy, ..*p })
            .collect();
        let ate = ate_rmse(&est, &truth, 0.05).map_err(|e| e.to_string())?;
        ensure(ate == 1.0, || format!("constant offset ({dx}, {dy}) gave ATE {ate}"))?;
    }
    for (errors, lengths, expect) in [
        (vec![1.0, 4.0], vec![2.0, 1.0], 2.0),
        (vec![0.5], vec![7.0], 0.5),
        (vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 2.0], 2.25),
    ] {
        let v = overall_weighted(&errors, &lengths).map_err(|e| e.to_string())?;
        ensure(v == expect, || format!("weighted mean of {errors:?} by {lengths:?} gave {v}, expected {expect}"))?;
    }
    let table = overall_weighted(&[0.353, 0.751, 0.380], &[365.0, 264.0, 90.0]).map_err(|e| e.to_string())?;
    ensure((table - 0.502).abs() < 1e-3, || format!("published per-scene ATEs combine to {table:.4} m"))?;
    println!(
        "NOTE  metric_arithmetic: length-weighting the published per-scene ATEs (0.353, 0.751, 0.380 m over 365, 264, 90 m) gives {table:.4} m, not the published overall 0.449 m; the reported figure is kept as published"
    );
    Ok(format!("unit diagonal offset ATE exactly 1; hand cases exact; published scenes combine to {table:.4} m"))
}

fn determinism() -> Outcome {
    let cfg = DatasetConfig { trajectories: 3, pairs_per_trajectory: 8, pairs: PairConfig::default() };
    let a = generate_dataset(&cfg, 5).map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| generate_dataset(&cfg, 5)).map_err(|e| e.to_string())?;
    ensure(dataset_hash(&a) == dataset_hash(&b), || "dataset hash differs between runs".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tcfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
    let (tr, te) = default_split(&a)?;
    let mut outputs = Vec::new();
    for run in 0..2 {
        let go = || -> Result<Vec<Vec<u8>>, String> {
            let out = train(&tr, &NetConfig::tiny(64, 64), &tcfg).map_err(|e| e.to_string())?;
            let hist = dir.path().join(format!("history_{run}.csv"));
            let eval = dir.path().join(format!("eval_{run}.csv"));
            out.history.write_csv(&hist).map_err(|e| e.to_string())?;
            evaluate_relative(&out.net, &te).map_err(|e| e.to_string())?.write_csv(&eval).map_err(|e| e.to_string())?;
            Ok(vec![std::fs::read(hist).unwrap(), std::fs::read(eval).unwrap()])
        };
        outputs.push(if run == 0 { go()? } else { pool.install(go)? });
    }
    ensure(outputs[0] == outputs[1], || "training metrics differ between runs".into())?;

    let fuse = || -> Result<String, String> {
        let rec = simulate_scenario(&ScenarioConfig { duration_s: 20.0, ..ScenarioConfig::default() }, "d", 8)
            .map_err(|e| e.to_string())?;
        let r = fuse_record(&rec, rec.gpr_odom.as_deref().unwrap(), &FusionConfig::default()).map_err(|e| e.to_string())?;
        Ok(format!("{:?} {:?}", r.ate_m, r.states))
    };
    let first = fuse()?;
    ensure(first == pool.install(fuse)?, || "fusion output differs between runs".into())?;
    Ok("dataset hash, training history, evaluation CSV and fused trajectory identical across reruns and pool sizes".into())
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient_suite", gradient_suite),
        ("dsp_suite", dsp_suite),
        ("architecture_invariants", architecture_invariants),
        ("fusion_exactness", fusion_exactness),
        ("fusion_benefit", fusion_benefit),
        ("metric_arithmetic", metric_arithmetic),
        ("determinism", determinism),
        ("end_to_end_learning", end_to_end_learning),
        ("ablation_direction", ablation_direction),
    ];
    println!(
        "NOTE  scale: the published per-scene tables need the recorded field dataset and GPU training; the criteria below check the same properties on synthetic data"
    );
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name} [{secs:.1} s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} [{secs:.1} s]: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
