//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 1 3 8`.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, StudentsT};

use rsris::channel::{sample_scenario, FadingParams, FadingSet, SetKind, ThetaSet, Topology};
use rsris::config::ExperimentConfig;
use rsris::experiment::{run_experiment, ExperimentResult};
use rsris::framework::{classify_rs_mode, evaluate_objective, run_mm, ObjectiveKind, ProblemSpec, RsMode, Scheme};
use rsris::linalg::{ComplexMatrix, RealMatrix};
use rsris::rates::{evaluate_rates, CovarianceSet, RealChannels, Signaling};
use rsris::realdec::{iqi_equivalent_channel, stack_real, to_real_composite, DeviceIqi, IqiParams, SystemIqi};
use rsris::rispace::{is_member, project, SetParams};
use rsris::solver::SolverOptions;
use rsris::subproblems::{solve_p_step_gee, PStepInput};
use rsris::surrogates::{quadratic_modulus_lower, BlockId, CovExpansion, ThetaExpansion};

/// Noise power of -94 dBm in watts.
fn sigma2() -> f64 {
    10f64.powf(-12.4)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cgauss(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn random_iqi(rng: &mut ChaCha8Rng) -> IqiParams {
    IqiParams::new(0.8 + 0.4 * rng.random::<f64>(), 0.3 * (rng.random::<f64>() - 0.5)).unwrap()
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> RealMatrix {
    let a = RealMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    (&a * a.transpose() + RealMatrix::identity(n, n) * 0.05) * scale
}

fn blocks(cells: usize, k: usize) -> Vec<BlockId> {
    (0..cells)
        .flat_map(|l| (0..k).map(move |j| BlockId::Private(l, j)).chain([BlockId::Common(l)]))
        .collect()
}

fn random_cov(rng: &mut ChaCha8Rng, bs: &[usize], k: usize) -> CovarianceSet {
    let mut cov = CovarianceSet::zeros(Signaling::Igs, bs, k);
    for id in blocks(bs.len(), k) {
        let n = cov.block(id).nrows();
        *cov.block_mut(id) = random_psd(rng, n, 1.0);
    }
    cov
}

fn random_theta(rng: &mut ChaCha8Rng, elements: &[usize]) -> ThetaSet {
    let mut t = ThetaSet::dark(SetKind::Unit, elements);
    for z in t.reflect.iter_mut().flatten() {
        *z = Complex64::from_polar(rng.random::<f64>().sqrt(), rng.random::<f64>() * std::f64::consts::TAU);
    }
    t
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Surrogate tightness, gradient agreement and minorization on random instances.
fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut gap, mut grad, mut viol) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for inst in 0..100u64 {
        let cells = rng.random_range(1..=2);
        let k = rng.random_range(1..=3);
        let n_bs = rng.random_range(1..=2);
        let n_u = rng.random_range(1..=2);
        let n_ris = rng.random_range(1..=8);
        let topo = if cells == 2 {
            Topology::two_cell(k, n_bs, n_u, n_ris)
        } else {
            Topology::single_cell(k, n_bs, n_u, n_ris)
        };
        let fading = sample_scenario(&topo, &FadingParams::default(), inst)
            .unwrap()
            .normalized(sigma2());
        let iqi = SystemIqi::uniform(
            &topo.bs_antennas,
            &topo.user_antennas,
            random_iqi(&mut rng),
            random_iqi(&mut rng),
            1.0,
        );
        let theta = random_theta(&mut rng, &fading.ris_elements());
        let ch = RealChannels::build(&fading, &theta, None, &iqi).unwrap();
        let at = random_cov(&mut rng, &topo.bs_antennas, k);

        // Covariance-step bounds.
        let ep = CovExpansion::new(&at, &ch).unwrap();
        let mut surr = Vec::new();
        for l in 0..cells {
            for j in 0..k {
                surr.push((l, j, false, ep.private_surrogate(l, j, &ch).unwrap()));
                surr.push((l, j, true, ep.common_surrogate(l, j, &ch).unwrap()));
            }
        }
        let exact = |c: &CovarianceSet, l: usize, j: usize, common: bool| {
            let b = evaluate_rates(c, &ch).unwrap();
            if common {
                b.common_caps[l][j]
            } else {
                b.private[l][j]
            }
        };
        for (l, j, common, s) in &surr {
            gap = gap.max((s.value(&at) - exact(&at, *l, *j, *common)).abs());
        }
        let mut dir = CovarianceSet::zeros(Signaling::Igs, &topo.bs_antennas, k);
        for id in blocks(cells, k) {
            let n = dir.block(id).nrows();
            let a = RealMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            *dir.block_mut(id) = &a + a.transpose();
        }
        let h = 1e-5;
        let shifted = |sign: f64| {
            let mut c = at.clone();
            for id in blocks(cells, k) {
                *c.block_mut(id) += dir.block(id) * (sign * h);
            }
            c
        };
        let (plus, minus) = (shifted(1.0), shifted(-1.0));
        for (l, j, common, s) in &surr {
            let ds = (s.value(&plus) - s.value(&minus)) / (2.0 * h);
            let dr = (exact(&plus, *l, *j, *common) - exact(&minus, *l, *j, *common)) / (2.0 * h);
            grad = grad.max(rel_err(ds, dr, 1e-3));
        }
        for _ in 0..200 {
            let p = random_cov(&mut rng, &topo.bs_antennas, k);
            let b = evaluate_rates(&p, &ch).unwrap();
            for (l, j, common, s) in &surr {
                let r = if *common {
                    b.common_caps[*l][*j]
                } else {
                    b.private[*l][*j]
                };
                viol = viol.max(s.value(&p) - r);
            }
        }

        // Surface-step bounds.
        let te = ThetaExpansion::new(&fading, &theta, None, &iqi, &at).unwrap();
        let mut tsurr = Vec::new();
        for l in 0..cells {
            for j in 0..k {
                tsurr.push((l, j, false, te.private_surrogate(l, j).unwrap()));
                tsurr.push((l, j, true, te.common_surrogate(l, j).unwrap()));
            }
        }
        let rate_at = |x: &[f64], l: usize, j: usize, common: bool| {
            let b = evaluate_rates(&at, &te.channels_at(x)).unwrap();
            if common {
                b.common_caps[l][j]
            } else {
                b.private[l][j]
            }
        };
        for (l, j, common, s) in &tsurr {
            gap = gap.max((s.value(&te.center) - rate_at(&te.center, *l, *j, *common)).abs());
            let scale = s.gradient.iter().map(|g| g.abs()).fold(1e-3, f64::max);
            for idx in 0..te.num_params() {
                let mut xp = te.center.clone();
                let mut xm = te.center.clone();
                xp[idx] += 1e-6;
                xm[idx] -= 1e-6;
                let fd = (rate_at(&xp, *l, *j, *common) - rate_at(&xm, *l, *j, *common)) / 2e-6;
                grad = grad.max((fd - s.gradient[idx]).abs() / scale);
            }
        }
        for _ in 0..200 {
            let x = random_theta(&mut rng, &fading.ris_elements()).to_real_params();
            let b = evaluate_rates(&at, &te.channels_at(&x)).unwrap();
            for (l, j, common, s) in &tsurr {
                let r = if *common {
                    b.common_caps[*l][*j]
                } else {
                    b.private[*l][*j]
                };
                viol = viol.max(s.value(&x) - r);
            }
        }

        // Modulus linearization.
        let t0: Vec<Complex64> = theta.reflect.iter().flatten().copied().collect();
        let mb = quadratic_modulus_lower(&t0);
        let energy = |t: &[Complex64]| t.iter().map(|z| z.norm_sqr()).sum::<f64>();
        gap = gap.max((mb.value(&t0) - energy(&t0)).abs());
        for idx in 0..2 * t0.len() {
            let bump = |sign: f64| {
                let mut t = t0.clone();
                let d = Complex64::new(
                    if idx % 2 == 0 { sign * 1e-6 } else { 0.0 },
                    if idx % 2 == 1 { sign * 1e-6 } else { 0.0 },
                );
                t[idx / 2] += d;
                t
            };
            let (tp, tm) = (bump(1.0), bump(-1.0));
            let fb = (mb.value(&tp) - mb.value(&tm)) / 2e-6;
            let fe = (energy(&tp) - energy(&tm)) / 2e-6;
            grad = grad.max(rel_err(fb, fe, 1e-3));
        }
        for _ in 0..200 {
            let t: Vec<Complex64> = random_theta(&mut rng, &[t0.len()]).reflect.concat();
            viol = viol.max(mb.value(&t) - energy(&t));
        }
    }
    outcome(
        gap < 1e-8 && grad < 1e-5 && viol < 1e-9,
        format!("max |gap| {gap:.2e}, max gradient rel. error {grad:.2e}, max violation {viol:.2e}"),
    )
}

fn small_channels(seed: u64) -> (RealChannels, Vec<usize>) {
    let topo = Topology::two_cell(2, 1, 1, 4);
    let fading = sample_scenario(&topo, &FadingParams::default(), seed)
        .unwrap()
        .normalized(sigma2());
    let p = IqiParams::new(1.1, 5f64.to_radians()).unwrap();
    let iqi = SystemIqi::uniform(&topo.bs_antennas, &topo.user_antennas, p, p, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = random_theta(&mut rng, &fading.ris_elements());
    (
        RealChannels::build(&fading, &theta, None, &iqi).unwrap(),
        topo.bs_antennas,
    )
}

/// Monotone accepted objectives and convergence on seeded MWRM and GEE runs.
fn criterion_2() -> Outcome {
    let mut non_monotone = Vec::new();
    let mut slow = Vec::new();
    let mut iters = Vec::new();
    for kind in [ObjectiveKind::Mwrm, ObjectiveKind::Gee] {
        for seed in 0..50u64 {
            let (_, ch) = overloaded_channels(1000 + seed);
            let spec = ProblemSpec::new(kind, Scheme::Rs, Signaling::Igs, vec![10.0, 10.0], 4);
            let t = run_mm(&spec, &ch, spec.initial_covariances(&[1, 1])).unwrap();
            if !t.objective_sequence().windows(2).all(|w| w[1] >= w[0]) {
                non_monotone.push(format!("{kind:?}/{seed}"));
            }
            if !t.converged {
                slow.push(format!("{kind:?}/{seed}"));
            }
            iters.push(t.iterations);
        }
    }
    iters.sort_unstable();
    outcome(
        non_monotone.is_empty() && slow.is_empty(),
        format!(
            "100 runs, median {} iterations; non-monotone: {non_monotone:?}; not converged within 50: {} {slow:?}",
            iters[iters.len() / 2],
            slow.len()
        ),
    )
}

fn siso_channels(g: f64) -> RealChannels {
    RealChannels {
        cells: 1,
        users_per_cell: 1,
        links: vec![vec![RealMatrix::identity(2, 2) * g]],
        noise: vec![RealMatrix::identity(2, 2) * 0.5],
    }
}

/// Single-user capacity and its inverse.
fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    for (g, p, r) in [(0.3, 2.0, 0.5), (1.0, 1.0, 1.0), (1.7, 10.0, 2.5), (0.05, 100.0, 0.2)] {
        let ch = siso_channels(g);
        let spec = ProblemSpec::new(ObjectiveKind::Mwrm, Scheme::Tin, Signaling::Igs, vec![p], 1);
        let t = run_mm(&spec, &ch, spec.initial_covariances(&[1])).unwrap();
        worst = worst.max(rel_err(t.objective, (1.0 + p * g * g).log2(), 0.0));
        let mut spec = ProblemSpec::new(ObjectiveKind::PowerMin, Scheme::Tin, Signaling::Igs, vec![1e6], 1);
        spec.thresholds = vec![vec![r]];
        let t = run_mm(&spec, &ch, spec.initial_covariances(&[1])).unwrap();
        worst = worst.max(rel_err(t.objective, (2f64.powf(r) - 1.0) / (g * g), 0.0));
    }
    outcome(worst < 1e-3, format!("max relative error {worst:.2e}"))
}

fn overloaded(extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
[scenario]
topology = "two_cell"
users_per_cell = 4
bs_antennas = 1
user_antennas = 1
ris_elements = 8
noise_power_dbm = -94.0
[objective]
power_dbw = 10.0
[sweep]
values = [10.0]
[run]
trials = 20
seed = 1
{extra}
"#
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

fn run_schemes(extra: &str, signaling: &str, schemes: &str, surfaces: &str) -> ExperimentResult {
    let mut cfg = overloaded(extra);
    let sch = ExperimentConfig::from_toml_str(&format!(
        "[schemes]\nsignaling = {signaling}\nscheme = {schemes}\nsurface = {surfaces}\n"
    ))
    .unwrap()
    .schemes;
    cfg.schemes = sch;
    run_experiment(&cfg).unwrap()
}

fn per_trial(res: &ExperimentResult, label: &str) -> Vec<Option<f64>> {
    let mut recs: Vec<_> = res.records.iter().filter(|r| r.scheme == label).collect();
    recs.sort_by_key(|r| r.trial);
    recs.iter().map(|r| r.value).collect()
}

/// One-sided lower 95% confidence bound of the mean paired difference `a - b`.
fn paired_lower_bound(a: &[Option<f64>], b: &[Option<f64>]) -> (f64, f64, usize) {
    let d: Vec<f64> = a.iter().zip(b).filter_map(|(x, y)| Some((*x)? - (*y)?)).collect();
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).unwrap().inverse_cdf(0.95);
    (mean, mean - t * (var / n as f64).sqrt(), n)
}

fn mean(v: &[Option<f64>]) -> f64 {
    let x: Vec<f64> = v.iter().flatten().copied().collect();
    x.iter().sum::<f64>() / x.len() as f64
}

/// RS over TIN and IGS over PGS on paired overloaded trials.
fn criterion_4(shared: &mut Option<ExperimentResult>) -> Outcome {
    let igs = run_schemes("", "[\"IGS\"]", "[\"RS\", \"TIN\"]", "[\"I\"]");
    let pgs = run_schemes("", "[\"PGS\"]", "[\"RS\"]", "[\"I\"]");
    let rs = per_trial(&igs, "IGS-RS-I");
    let tin = per_trial(&igs, "IGS-TIN-I");
    let prs = per_trial(&pgs, "PGS-RS-I");
    let (d1, lb1, n1) = paired_lower_bound(&rs, &tin);
    let (d2, lb2, n2) = paired_lower_bound(&rs, &prs);
    *shared = Some(igs);
    outcome(
        lb1 >= 0.0 && lb2 >= 0.0 && n1 >= 20 && n2 >= 20,
        format!(
            "means IGS-RS {:.4}, IGS-TIN {:.4}, PGS-RS {:.4}; RS-TIN diff {d1:.4} (lower bound {lb1:.4}, n={n1}); IGS-PGS diff {d2:.4} (lower bound {lb2:.4}, n={n2})",
            mean(&rs),
            mean(&tin),
            mean(&prs)
        ),
    )
}

/// Fairness ordering across surface feasibility sets on the same trials.
fn criterion_5(shared: &mut Option<ExperimentResult>) -> Outcome {
    let base = shared
        .take()
        .unwrap_or_else(|| run_schemes("", "[\"IGS\"]", "[\"RS\"]", "[\"I\"]"));
    let other = run_schemes("", "[\"IGS\"]", "[\"RS\"]", "[\"U\", \"C\", \"D\"]");
    let m = |res: &ExperimentResult, s: &str| mean(&per_trial(res, &format!("IGS-RS-{s}")));
    let (u, i, c, d) = (m(&other, "U"), m(&base, "I"), m(&other, "C"), m(&other, "D"));
    let tol = 1e-4;
    outcome(
        u >= i - tol && i >= d - tol && u >= c - tol,
        format!("mean min rate U {u:.4}, I {i:.4}, C {c:.4}, D {d:.4}"),
    )
}

/// Total power to reach a common rate target, RS against TIN.
fn criterion_6() -> Outcome {
    let mut cfg = overloaded("");
    cfg.objective.kind = ObjectiveKind::PowerMin;
    cfg.objective.target_rate = 0.9;
    cfg.objective.power_dbw = 30.0;
    cfg.sweep.values = vec![0.9];
    cfg.sweep.axis = rsris::config::SweepAxis::TargetRate;
    cfg.schemes.signaling = vec![Signaling::Igs];
    cfg.schemes.scheme = vec![Scheme::Rs, Scheme::Tin];
    let res = run_experiment(&cfg).unwrap();
    let rs = per_trial(&res, "IGS-RS-I");
    let tin = per_trial(&res, "IGS-TIN-I");
    let infeasible = |label: &str| {
        res.records
            .iter()
            .filter(|r| r.scheme == label && r.status == "infeasible")
            .count()
    };
    let paired = rs.iter().zip(&tin).filter(|(a, b)| a.is_some() && b.is_some()).count();
    let (mr, mt) = (mean(&rs), mean(&tin));
    outcome(
        mr <= mt && paired >= 20,
        format!(
            "mean power IGS-RS {mr:.3} W ({} infeasible), IGS-TIN {mt:.3} W ({} infeasible, charged the cap), {paired} pairs",
            infeasible("IGS-RS-I"),
            infeasible("IGS-TIN-I")
        ),
    )
}

/// Dinkelbach residuals shrink monotonically and the optimum matches a power grid search.
fn criterion_7() -> Outcome {
    let mut monotone = true;
    let mut last_f = 0.0f64;
    for seed in 0..10u64 {
        let (ch, bs) = small_channels(2000 + seed);
        let cov = CovarianceSet::equal_split(Signaling::Igs, &bs, 2, &[10.0, 10.0], true);
        let ep = CovExpansion::new(&cov, &ch).unwrap();
        let opts = SolverOptions::default();
        let input = PStepInput {
            ch: &ch,
            expansion: &ep,
            budgets: Some(&[10.0, 10.0]),
            with_common: true,
            opts: &opts,
        };
        let out = solve_p_step_gee(input, &Default::default(), None).unwrap();
        let f: Vec<f64> = out.dinkelbach.iter().map(|s| s.f_value).collect();
        monotone &= f.windows(2).all(|w| w[1] <= w[0] + 1e-9) && f.iter().all(|&v| v >= -1e-9);
        last_f = last_f.max(f.last().copied().unwrap_or(0.0));
    }
    let mut worst = 0.0f64;
    for (g, budget) in [(0.8f64, 5.0), (2.0, 1.0), (0.3, 40.0), (0.05, 1000.0), (1.2, 0.5)] {
        let spec = ProblemSpec::new(ObjectiveKind::Gee, Scheme::Tin, Signaling::Igs, vec![budget], 1);
        let t = run_mm(&spec, &siso_channels(g), spec.initial_covariances(&[1])).unwrap();
        let pm = spec.power_model;
        let best = (0..=200_000)
            .map(|i| {
                let p = budget * i as f64 / 200_000.0;
                (1.0 + g * g * p).log2() / (pm.p_c + pm.eta * p)
            })
            .fold(0.0, f64::max);
        worst = worst.max(rel_err(t.objective, best, 0.0));
    }
    outcome(
        monotone && last_f < 1e-6 && worst < 0.01,
        format!("F nonincreasing: {monotone}, final F {last_f:.2e}, max GEE error vs grid {worst:.2e}"),
    )
}

/// Exact membership and idempotence of the projections.
fn criterion_8() -> Outcome {
    let params = SetParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let n = 100_000;
    let mut errs = [0.0f64; 5];
    let mut idem = true;
    let mut on_grid = true;
    let sample = |rng: &mut ChaCha8Rng| -> Vec<Vec<Complex64>> {
        vec![(0..n).map(|_| cgauss(rng) * (3.0 * rng.random::<f64>())).collect()]
    };
    for (slot, kind) in [
        SetKind::Unit,
        SetKind::UnitModulus,
        SetKind::PhaseDependent,
        SetKind::Discrete,
        SetKind::StarEnergySplit,
    ]
    .into_iter()
    .enumerate()
    {
        let reflect = sample(&mut rng);
        let transmit = kind.is_star().then(|| sample(&mut rng));
        let t = ThetaSet {
            kind,
            reflect,
            transmit,
        };
        let p = project(&t, &params).unwrap();
        let pp = project(&p, &params).unwrap();
        idem &= pp == p;
        let vals = p.reflect[0].iter().enumerate();
        for (idx, z) in vals {
            let e = match kind {
                SetKind::Unit => (z.norm() - 1.0).max(0.0),
                SetKind::UnitModulus => (z.norm() - 1.0).abs(),
                SetKind::PhaseDependent => (z.norm() - rsris::rispace::amplitude_law(z.arg(), &params.law)).abs(),
                SetKind::Discrete => {
                    let k = params.grid.nearest_index(z.arg());
                    on_grid &= *z == Complex64::from_polar(1.0, params.grid.phase(k));
                    (z.norm() - 1.0).abs()
                }
                SetKind::StarEnergySplit => {
                    (z.norm_sqr() + p.transmit.as_ref().unwrap()[0][idx].norm_sqr() - 1.0).abs()
                }
            };
            errs[slot] = errs[slot].max(e);
        }
        idem &= is_member(&p, &params, 1e-12);
    }
    let worst = errs.iter().copied().fold(0.0, f64::max);
    outcome(
        worst <= 1e-12 && idem && on_grid,
        format!(
            "max membership error U/I/C/D/STAR {}, idempotent and members: {idem}, discrete on grid: {on_grid}",
            errs.map(|e| format!("{e:.1e}")).join("/")
        ),
    )
}

/// I branch untouched, Q branch scaled by `epsilon` and skewed by `phi`.
fn physical_iqi(z: Complex64, p: &IqiParams) -> Complex64 {
    Complex64::new(z.re, p.epsilon * (p.phi.sin() * z.re + p.phi.cos() * z.im))
}

/// Equivalent real channels against direct simulation of the impaired link.
fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst = 0.0f64;
    let mut ideal_exact = true;
    for _ in 0..1000 {
        let nr = rng.random_range(1..=3);
        let nt = rng.random_range(1..=3);
        let h = ComplexMatrix::from_fn(nr, nt, |_, _| cgauss(&mut rng));
        let tx = DeviceIqi {
            antennas: (0..nt).map(|_| random_iqi(&mut rng)).collect(),
        };
        let rx = DeviceIqi {
            antennas: (0..nr).map(|_| random_iqi(&mut rng)).collect(),
        };
        let x: Vec<Complex64> = (0..nt).map(|_| cgauss(&mut rng)).collect();
        let xt: Vec<Complex64> = x.iter().zip(&tx.antennas).map(|(z, p)| physical_iqi(*z, p)).collect();
        let r = &h * nalgebra::DVector::from_vec(xt);
        let y: Vec<Complex64> = r.iter().zip(&rx.antennas).map(|(z, p)| physical_iqi(*z, p)).collect();
        let got = iqi_equivalent_channel(&h, &tx, &rx).unwrap() * nalgebra::DVector::from_vec(stack_real(&x));
        for (a, b) in got.iter().zip(stack_real(&y)) {
            worst = worst.max((a - b).abs());
        }
        let ideal = iqi_equivalent_channel(&h, &DeviceIqi::ideal(nt), &DeviceIqi::ideal(nr)).unwrap();
        ideal_exact &= ideal == to_real_composite(&h).unwrap();
    }
    outcome(
        worst < 1e-10 && ideal_exact,
        format!("max deviation {worst:.2e} over 1000 draws, ideal devices reduce exactly: {ideal_exact}"),
    )
}

fn overloaded_channels(seed: u64) -> (FadingSet, RealChannels) {
    let topo = Topology::two_cell(4, 1, 1, 8);
    let fading = sample_scenario(&topo, &FadingParams::default(), seed)
        .unwrap()
        .normalized(sigma2());
    let p = IqiParams::new(1.1, 5f64.to_radians()).unwrap();
    let iqi = SystemIqi::uniform(&topo.bs_antennas, &topo.user_antennas, p, p, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = ThetaSet::dark(SetKind::UnitModulus, &fading.ris_elements());
    for z in theta.reflect.iter_mut().flatten() {
        *z = Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU);
    }
    let ch = RealChannels::build(&fading, &theta, None, &iqi).unwrap();
    (fading, ch)
}

/// Rate splitting with no common power is exactly TIN.
fn criterion_10() -> Outcome {
    let mut worst = 0.0f64;
    let mut labels_ok = true;
    for seed in 0..5u64 {
        let (_, ch) = overloaded_channels(3000 + seed);
        let tin = ProblemSpec::new(ObjectiveKind::Mwrm, Scheme::Tin, Signaling::Igs, vec![10.0, 10.0], 4);
        let t = run_mm(&tin, &ch, tin.initial_covariances(&[1, 1])).unwrap();
        let mut cov = t.cov.clone();
        for c in cov.common.iter_mut() {
            c.fill(0.0);
        }
        let rs = ProblemSpec {
            scheme: Scheme::Rs,
            ..tin.clone()
        };
        let e = evaluate_objective(&rs, &cov, &ch).unwrap();
        worst = worst.max(rel_err(e.value, t.objective, 1e-12));
        labels_ok &= classify_rs_mode(&e.bundle, 1e-9).iter().all(|m| *m == RsMode::Tin);
    }
    outcome(
        worst < 1e-6 && labels_ok,
        format!("max relative objective gap {worst:.2e}, all cells labelled TIN: {labels_ok}"),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut shared = None;
    let mut failed = Vec::new();
    for n in 1..=10 {
        if !run(n) {
            continue;
        }
        let start = Instant::now();
        let o = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(&mut shared),
            5 => criterion_5(&mut shared),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            _ => criterion_10(),
        };
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2}: {verdict} ({:.1} s) {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        // Set RSRIS_ACCEPTANCE_STRICT to turn failures into a nonzero exit.
        if std::env::var_os("RSRIS_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
