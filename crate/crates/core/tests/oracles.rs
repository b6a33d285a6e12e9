//! Independent oracles for the numerical building blocks and the drivers.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rsris::channel::{sample_scenario, FadingParams, FadingSet, SetKind, ThetaSet, Topology};
use rsris::framework::{
    run_ao, run_mm, run_scheme, sweep_rate_region, ObjectiveKind, ProblemSpec, Scheme, SurfaceMode,
};
use rsris::linalg::{ComplexMatrix, RealMatrix};
use rsris::rates::{evaluate_rates, gee, CovarianceSet, PowerModel, RealChannels, Signaling};
use rsris::realdec::{
    iqi_equivalent_channel, noise_covariance, stack_real, DeviceIqi, IqiParams, NoiseModel, SystemIqi,
};
use rsris::rispace::{PhaseDraw, SetParams};

fn cgauss(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// I branch untouched, Q branch scaled by `epsilon` and skewed by `phi`.
fn physical_iqi(z: Complex64, p: &IqiParams) -> Complex64 {
    Complex64::new(z.re, p.epsilon * (p.phi.sin() * z.re + p.phi.cos() * z.im))
}

fn random_device(rng: &mut ChaCha8Rng, n: usize) -> DeviceIqi {
    DeviceIqi {
        antennas: (0..n)
            .map(|_| IqiParams::new(0.8 + 0.4 * rng.random::<f64>(), 0.3 * (rng.random::<f64>() - 0.5)).unwrap())
            .collect(),
    }
}

fn scalar_channels(gains: &[&[f64]], users_per_cell: usize) -> RealChannels {
    RealChannels {
        cells: gains.len() / users_per_cell,
        users_per_cell,
        links: gains
            .iter()
            .map(|row| row.iter().map(|&g| RealMatrix::identity(2, 2) * g).collect())
            .collect(),
        noise: vec![RealMatrix::identity(2, 2) * 0.5; gains.len()],
    }
}

fn small_scenario(seed: u64, users: usize, elements: usize) -> (Topology, FadingSet, SystemIqi, PhaseDraw) {
    let topo = Topology::two_cell(users, 1, 1, elements);
    let fading = sample_scenario(&topo, &FadingParams::default(), seed)
        .unwrap()
        .normalized(10f64.powf(-12.4));
    let p = IqiParams::new(1.1, 5f64.to_radians()).unwrap();
    let iqi = SystemIqi::uniform(&topo.bs_antennas, &topo.user_antennas, p, p, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let draw = PhaseDraw::sample(&fading.ris_elements(), &mut rng);
    (topo, fading, iqi, draw)
}

#[test]
fn noise_covariance_matches_monte_carlo() {
    let sigma2 = 0.7;
    let dev = DeviceIqi {
        antennas: vec![IqiParams::new(1.2, 0.15).unwrap(), IqiParams::new(0.85, -0.1).unwrap()],
    };
    let expected = noise_covariance(&NoiseModel::new(sigma2, dev.clone()).unwrap(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 1_000_000;
    let mut acc = RealMatrix::zeros(4, 4);
    for _ in 0..draws {
        let y: Vec<Complex64> = dev
            .antennas
            .iter()
            .map(|p| physical_iqi(cgauss(&mut rng) * sigma2.sqrt(), p))
            .collect();
        let v = nalgebra::DVector::from_vec(stack_real(&y));
        acc += &v * v.transpose();
    }
    let sample = acc / draws as f64;
    let rel = (&sample - &expected).norm() / expected.norm();
    assert!(rel < 0.01, "relative deviation {rel}");
}

#[test]
fn equivalent_channel_matches_complex_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let nr = 1 + rng.random_range(0..3);
        let nt = 1 + rng.random_range(0..3);
        let h = ComplexMatrix::from_fn(nr, nt, |_, _| cgauss(&mut rng));
        let tx = random_device(&mut rng, nt);
        let rx = random_device(&mut rng, nr);
        let x: Vec<Complex64> = (0..nt).map(|_| cgauss(&mut rng)).collect();
        let xt: Vec<Complex64> = x.iter().zip(&tx.antennas).map(|(z, p)| physical_iqi(*z, p)).collect();
        let r = &h * nalgebra::DVector::from_vec(xt);
        let y: Vec<Complex64> = r.iter().zip(&rx.antennas).map(|(z, p)| physical_iqi(*z, p)).collect();
        let eq = iqi_equivalent_channel(&h, &tx, &rx).unwrap();
        let got = eq * nalgebra::DVector::from_vec(stack_real(&x));
        for (a, b) in got.iter().zip(stack_real(&y)) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn direct_path_loss_exponent_recovered_by_regression() {
    let mut topo = Topology::single_cell(50, 1, 1, 1);
    topo.drop_side = 300.0;
    let params = FadingParams::default();
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for seed in 0..200 {
        let f = sample_scenario(&topo, &params, seed).unwrap();
        for (u, pos) in f.user_positions.iter().enumerate() {
            let d = rsris::channel::distance(pos, &topo.bs_positions[0]);
            let x = d.ln();
            let y = f.direct[u][0][(0, 0)].norm_sqr().ln();
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
            n += 1.0;
        }
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    assert!((slope + params.direct_exponent).abs() < 0.1, "slope {slope}");
}

#[test]
fn gee_falls_when_static_power_doubles() {
    let ch = scalar_channels(&[&[1.0, 0.2], &[0.3, 0.9]], 1);
    let cov = CovarianceSet::equal_split(Signaling::Igs, &[1, 1], 1, &[2.0, 3.0], false);
    let b = evaluate_rates(&cov, &ch).unwrap();
    let pm = PowerModel::default();
    let doubled = PowerModel {
        p_c: 2.0 * pm.p_c,
        ..pm
    };
    assert!(gee(&cov, &b, &doubled) < gee(&cov, &b, &pm));
}

#[test]
fn gee_matches_power_grid_search() {
    for (g, budget) in [(0.8f64, 5.0), (2.0, 1.0), (0.3, 40.0)] {
        let ch = scalar_channels(&[&[g]], 1);
        let spec = ProblemSpec::new(ObjectiveKind::Gee, Scheme::Tin, Signaling::Igs, vec![budget], 1);
        let t = run_mm(&spec, &ch, spec.initial_covariances(&[1])).unwrap();
        let pm = spec.power_model;
        let best = (0..=100_000)
            .map(|i| {
                let p = budget * i as f64 / 100_000.0;
                (1.0 + g * g * p).log2() / (pm.p_c + pm.eta * p)
            })
            .fold(0.0, f64::max);
        assert!(
            (t.objective - best).abs() / best < 0.01,
            "g {g}: {} vs {best}",
            t.objective
        );
    }
}

#[test]
fn mwee_symmetric_users_share_efficiency() {
    let ch = scalar_channels(&[&[1.0], &[1.0]], 2);
    let spec = ProblemSpec::new(ObjectiveKind::Mwee, Scheme::Rs, Signaling::Igs, vec![4.0], 2);
    let t = run_mm(&spec, &ch, spec.initial_covariances(&[1])).unwrap();
    let seq = t.objective_sequence();
    assert!(seq.windows(2).all(|w| w[1] >= w[0]));
    assert!(t.objective >= seq[0]);
    let ee: Vec<f64> = (0..2)
        .map(|k| t.bundle.total(0, k) / spec.power_model.user_consumption(&t.cov, 0, k))
        .collect();
    assert!((ee[0] - ee[1]).abs() < 1e-3, "{ee:?}");
}

#[test]
fn powermin_never_falls_when_targets_double() {
    let ch = scalar_channels(&[&[1.0, 0.3], &[0.7, 0.4], &[0.2, 0.9], &[0.5, 1.1]], 2);
    let mut powers = Vec::new();
    for target in [0.5, 1.0] {
        let mut spec = ProblemSpec::new(
            ObjectiveKind::PowerMin,
            Scheme::Rs,
            Signaling::Igs,
            vec![100.0, 100.0],
            2,
        );
        spec.thresholds = vec![vec![target; 2]; 2];
        let t = run_mm(&spec, &ch, spec.initial_covariances(&[1, 1])).unwrap();
        assert!(t.feasible);
        powers.push(t.objective);
    }
    assert!(powers[1] >= powers[0] * (1.0 - 1e-4), "{powers:?}");
}

fn toy_surface(f: Complex64, g_rx: Complex64, g_tx: Complex64) -> FadingSet {
    let m = |z: Complex64| DMatrix::from_element(1, 1, z);
    FadingSet {
        cells: 1,
        users_per_cell: 1,
        direct: vec![vec![m(f)]],
        ris_rx: vec![vec![m(g_rx)]],
        ris_tx: vec![vec![m(g_tx)]],
        user_positions: vec![[0.0; 3]],
    }
}

#[test]
fn single_coefficient_matches_disk_grid_search() {
    let (f, g_rx, g_tx) = (
        Complex64::new(0.3, -0.4),
        Complex64::new(0.2, 0.9),
        Complex64::new(-0.7, 0.1),
    );
    let fading = toy_surface(f, g_rx, g_tx);
    let iqi = SystemIqi::ideal(&[1], &[1], 1.0);
    let p = 2.0;
    let spec = ProblemSpec::new(ObjectiveKind::Mwrm, Scheme::Tin, Signaling::Igs, vec![p], 1);
    let mut theta0 = ThetaSet::dark(SetKind::Unit, &[1]);
    theta0.reflect[0][0] = Complex64::new(0.1, 0.0);
    let t = run_scheme(&spec, &fading, SurfaceMode::Optimized(theta0), None, &iqi).unwrap();
    let n = 1000;
    let mut best = 0.0f64;
    for i in 0..=2 * n {
        for j in 0..=2 * n {
            let th = Complex64::new(i as f64 / n as f64 - 1.0, j as f64 / n as f64 - 1.0);
            if th.norm_sqr() <= 1.0 {
                best = best.max((1.0 + p * (f + g_rx * th * g_tx).norm_sqr()).log2());
            }
        }
    }
    assert!((t.objective - best).abs() < 1e-2, "{} vs {best}", t.objective);
}

#[test]
fn dark_surface_ao_equals_fixed_channel_mm() {
    let (_, mut fading, iqi, draw) = small_scenario(21, 2, 4);
    for row in fading.ris_rx.iter_mut() {
        for g in row.iter_mut() {
            g.fill(Complex64::new(0.0, 0.0));
        }
    }
    let spec = ProblemSpec::new(ObjectiveKind::Mwrm, Scheme::Rs, Signaling::Igs, vec![10.0, 10.0], 2);
    let theta = draw.to_theta(SetKind::UnitModulus, &spec.set_params);
    let ch = RealChannels::build(&fading, &theta, None, &iqi).unwrap();
    let mm = run_mm(&spec, &ch, spec.initial_covariances(&[1, 1])).unwrap();
    let ao = run_ao(&spec, &fading, theta, None, &iqi, spec.initial_covariances(&[1, 1])).unwrap();
    assert!(
        (mm.objective - ao.objective).abs() <= 1e-4 * mm.objective.abs().max(1.0),
        "{} vs {}",
        mm.objective,
        ao.objective
    );
}

#[test]
fn optimized_surface_beats_its_random_start_and_is_monotone() {
    for seed in 0..3 {
        let (_, fading, iqi, draw) = small_scenario(30 + seed, 2, 4);
        let spec = ProblemSpec::new(ObjectiveKind::Mwrm, Scheme::Rs, Signaling::Igs, vec![10.0, 10.0], 2);
        let theta = draw.to_theta(SetKind::UnitModulus, &spec.set_params);
        let fixed = run_scheme(&spec, &fading, SurfaceMode::Fixed(theta.clone()), None, &iqi).unwrap();
        let ao = run_scheme(&spec, &fading, SurfaceMode::Optimized(theta), None, &iqi).unwrap();
        assert!(
            ao.objective >= fixed.objective * (1.0 - 1e-4),
            "seed {seed}: {} < {}",
            ao.objective,
            fixed.objective
        );
        assert!(ao.objective_sequence().windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn larger_feasibility_sets_do_not_lose() {
    let (_, fading, iqi, draw) = small_scenario(41, 2, 4);
    let spec = ProblemSpec::new(ObjectiveKind::Mwrm, Scheme::Rs, Signaling::Igs, vec![10.0, 10.0], 2);
    let params = SetParams::default();
    let run = |kind| {
        run_scheme(
            &spec,
            &fading,
            SurfaceMode::Optimized(draw.to_theta(kind, &params)),
            None,
            &iqi,
        )
        .unwrap()
        .objective
    };
    let (u, i, d) = (run(SetKind::Unit), run(SetKind::UnitModulus), run(SetKind::Discrete));
    let tol = 1e-4 * u.abs().max(1.0);
    assert!(u >= i - tol && i >= d - tol, "U {u} I {i} D {d}");
}

#[test]
fn rate_region_points_do_not_dominate_each_other() {
    let ch = scalar_channels(&[&[1.0], &[0.6]], 2);
    let base = ProblemSpec::new(ObjectiveKind::Mwrm, Scheme::Rs, Signaling::Igs, vec![5.0], 2);
    let profiles: Vec<Vec<Vec<f64>>> = (1..10)
        .map(|i| vec![vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0]])
        .collect();
    let pts = sweep_rate_region(&base, &ch, &profiles).unwrap();
    for a in &pts {
        for b in &pts {
            assert!(!(b[0] > a[0] + 1e-3 && b[1] > a[1] + 1e-3), "{b:?} dominates {a:?}");
        }
    }
}

#[test]
fn cli_results_agree_with_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        r#"
[scenario]
topology = "single_cell"
users_per_cell = 2
ris_elements = 2
[schemes]
signaling = ["IGS"]
scheme = ["RS", "TIN"]
surface = ["I"]
[sweep]
values = [0.0, 10.0]
[run]
trials = 2
max_iter = 10
threads = 1
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = std::process::Command::new(env!("CARGO_BIN_EXE_rsris"))
        .args([
            "--config",
            cfg_path.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let mut rd = csv::Reader::from_path(out.join("results.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let scheme = &row[0];
        let sweep: f64 = row[1].parse().unwrap();
        let mean: f64 = row[2].parse().unwrap();
        let s = [0.0, 10.0].iter().position(|v| *v == sweep).unwrap();
        let mut vals = Vec::new();
        for t in 0..2 {
            let text = std::fs::read_to_string(out.join("traces").join(format!("{scheme}_s{s}_t{t}.json"))).unwrap();
            let rec: serde_json::Value = serde_json::from_str(&text).unwrap();
            vals.push(rec["trace"]["true_objective"].as_f64().unwrap());
        }
        let recomputed = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!(
            (mean - recomputed).abs() <= 1e-12 * mean.abs().max(1.0),
            "{scheme}: {mean} vs {recomputed}"
        );
    }
    assert!(out.join("summary.json").exists());
}
