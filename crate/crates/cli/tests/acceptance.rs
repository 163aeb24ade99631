//! Acceptance suite. Runs every criterion in order on one thread, so the
//! timing criterion is not disturbed by sibling tests, and prints one
//! `PASS` or `FAIL` line per criterion to stderr.
//!
//! "Relative" tolerance throughout means `|a - b| <= tol * max(1, |b|)`
//! with `b` the reference value.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use adkit::bench::{
    benchmark_helmholtz, example_f, helmholtz_make, logistic_dl_closed, logistic_l, BenchConfig,
    ExampleFn, Helmholtz, Logistic, Objective, Quadratic, Rosenbrock,
};
use adkit::nest::{asymmetry, Generic};
use adkit::numdiff::{default_h_grid, default_step, error_curve, loglog_slope};
use adkit::optim::{mlp_init, mlp_train, newton, NewtonConfig, XorMlp, MLP_SEED};
use adkit::rng::SplitMix64;
use adkit::{
    derivative, grad_forward, grad_numeric, grad_reverse, hessian, hvp, DiffKind, DiffScheme, Dual,
    Tape,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Largest `|a - b| / max(1, |b|)` over paired entries.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed < limit, format!("{:.3?} of {:?}", elapsed, limit))
}

fn worked_trace() -> Outcome {
    let start = Instant::now();
    let y = example_f(&Dual::seed(2.0, 1.0), &Dual::seed(5.0, 0.0)).unwrap();

    let tape = Tape::new();
    let x1 = tape.var(2.0);
    let x2 = tape.var(5.0);
    let out = example_f(&x1, &x2).unwrap();
    let bar = tape.reverse_sweep(&out, 1.0).unwrap();
    let sweeps = tape.stats().sweeps;
    let (fast, t) = within(start.elapsed(), Duration::from_millis(1));

    let pass = (y.primal - 11.652).abs() <= 5e-4
        && (y.tangent - 5.5).abs() <= 5e-4
        && sweeps == 1
        && (bar[0] - 5.5).abs() <= 5e-4
        && (bar[1] - 1.716).abs() <= 5e-4
        && fast;
    outcome(
        pass,
        format!(
            "y={:.6} ydot={} adjoints=({}, {:.6}) sweeps={sweeps} time {t}",
            y.primal, y.tangent, bar[0], bar[1]
        ),
    )
}

fn expression_swell() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for n in 1..=4 {
        for i in 0..1000 {
            let x = i as f64 / 999.0;
            let d = logistic_l(n, &Dual::seed(x, 1.0)).unwrap().tangent;
            let c = logistic_dl_closed(n, x).unwrap();
            worst = worst.max((d - c).abs() / c.abs().max(1.0));
        }
    }
    let (fast, t) = within(start.elapsed(), Duration::from_secs(1));
    outcome(worst <= 1e-9 && fast, format!("max rel err {worst:.2e} time {t}"))
}

fn error_regimes() -> Outcome {
    let start = Instant::now();
    let rows = error_curve(0.2, &default_h_grid()).unwrap();
    let sf = loglog_slope(&rows, 1e-3, 1e-1, false).unwrap();
    let sc = loglog_slope(&rows, 1e-3, 1e-1, true).unwrap();
    // negative slope below 1e-12: error grows as h shrinks
    let rf = loglog_slope(&rows, 1e-14, 1e-12, false).unwrap();
    let rc = loglog_slope(&rows, 1e-14, 1e-12, true).unwrap();
    let min_f = rows.iter().map(|r| r.e_forward).fold(f64::INFINITY, f64::min);
    let min_c = rows.iter().map(|r| r.e_center).fold(f64::INFINITY, f64::min);
    let (fast, t) = within(start.elapsed(), Duration::from_secs(1));

    let checks = [
        (0.8..=1.2).contains(&sf),
        (1.8..=2.2).contains(&sc),
        rf < 0.0,
        rc < 0.0,
        min_c <= min_f,
        fast,
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "slope E_f {sf:.3} (want [0.8,1.2]) slope E_c {sc:.3} (want [1.8,2.2]) \
             round-off slopes {rf:.2}/{rc:.2} min E_c {min_c:.2e} min E_f {min_f:.2e} time {t}"
        ),
    )
}

fn timing_trends() -> Outcome {
    let start = Instant::now();
    let rows = benchmark_helmholtz(&BenchConfig::default()).unwrap();
    let (fast, t) = within(start.elapsed(), Duration::from_secs(120));

    let num: Vec<f64> = rows.iter().map(|r| r.rel_col_num).collect();
    let rev: Vec<f64> = rows.iter().map(|r| r.rel_col_rev).collect();
    let ops: Vec<f64> = rows.iter().map(|r| r.op_ratio_rev).collect();
    let mean = ops.iter().sum::<f64>() / ops.len() as f64;

    let increasing = num.windows(2).all(|w| w[1] > w[0]);
    let bounded = rev.iter().all(|&c| c <= 6.0);
    let typical = rows
        .iter()
        .filter(|r| r.n >= 15)
        .all(|r| (1.5..=6.0).contains(&r.rel_col_rev));
    let flat = ops.iter().all(|r| (r - mean).abs() <= 0.3 * mean);
    let all_positive = rows
        .iter()
        .all(|r| r.t_f > 0.0 && r.t_num > 0.0 && r.t_fwd > 0.0 && r.t_rev > 0.0);

    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(",");
    outcome(
        increasing && bounded && typical && flat && all_positive && fast,
        format!(
            "rel_col_num [{}] increasing={increasing}; rel_col_rev [{}] <=6:{bounded} in[1.5,6] for n>=15:{typical}; \
             op_ratio_rev [{}] flat:{flat}; time {t}",
            fmt(&num),
            fmt(&rev),
            fmt(&ops)
        ),
    )
}

/// Seeded points for the agreement and HVP suites.
fn points(rng: &mut SplitMix64, count: usize, ranges: impl Fn(usize) -> (f64, f64), n: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            (0..n)
                .map(|i| {
                    let (lo, hi) = ranges(i);
                    rng.uniform(lo, hi)
                })
                .collect()
        })
        .collect()
}

/// Every test function with its interior sampling box.
fn suite(rng: &mut SplitMix64, count: usize) -> Vec<(String, Vec<Vec<f64>>)> {
    let mut out = vec![
        ("example".to_string(), points(rng, count, |i| if i == 0 { (0.5, 3.0) } else { (-3.0, 6.0) }, 2)),
        ("logistic".to_string(), points(rng, count, |_| (0.01, 0.99), 1)),
        ("rosenbrock".to_string(), points(rng, count, |_| (-2.0, 2.0), 5)),
        ("quadratic".to_string(), points(rng, count, |_| (-2.0, 2.0), 3)),
    ];
    for n in [1, 2, 5, 10] {
        // around the standard point 1/(2n), well inside the domain
        let c = 0.5 / n as f64;
        out.push((format!("helmholtz{n}"), points(rng, count, |_| (0.5 * c, 1.5 * c), n)));
    }
    out
}

macro_rules! with_fn {
    ($name:expr, $o:ident => $body:expr) => {{
        let name: &str = $name;
        match name {
            "example" => { let $o = &ExampleFn; $body }
            "logistic" => { let $o = &Logistic { iterations: 4 }; $body }
            "rosenbrock" => { let $o = &Rosenbrock { n: 5 }; $body }
            "quadratic" => { let $o = &Quadratic::standard(); $body }
            h => {
                let n: usize = h.trim_start_matches("helmholtz").parse().unwrap();
                let $o = &Helmholtz(helmholtz_make(n, 42).unwrap());
                $body
            }
        }
    }};
}

fn mode_agreement() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(42);
    let mut worst: Vec<String> = Vec::new();
    let mut pass = true;
    for (name, pts) in suite(&mut rng, 100) {
        let mut e = 0.0f64;
        for x in &pts {
            let (fwd, rev, num) = with_fn!(&name, o => (
                grad_forward(|p| o.eval(p), x).unwrap(),
                grad_reverse(|p| o.eval(p), x).unwrap().1,
                grad_numeric(|p| o.eval(p), x, DiffScheme::center()).unwrap().0,
            ));
            e = e.max(rel_err(&fwd, &rev)).max(rel_err(&num, &rev)).max(rel_err(&fwd, &num));
        }
        pass &= e <= 1e-6;
        worst.push(format!("{name} {e:.1e}"));
    }
    let (fast, t) = within(start.elapsed(), Duration::from_secs(10));
    outcome(pass && fast, format!("max rel err: {}; time {t}", worst.join(", ")))
}

/// `H v` with `H` assembled column by column from center differences of
/// reverse-mode gradients.
fn fd_hessian_times<O: Objective>(o: &O, x: &[f64], v: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut hv = vec![0.0; n];
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = default_step(DiffKind::Center, x[j]);
        xp[j] = x[j] + h;
        let gp = grad_reverse(|p| o.eval(p), &xp).unwrap().1;
        xp[j] = x[j] - h;
        let gm = grad_reverse(|p| o.eval(p), &xp).unwrap().1;
        xp[j] = x[j];
        for i in 0..n {
            hv[i] += (gp[i] - gm[i]) / (2.0 * h) * v[j];
        }
    }
    hv
}

fn hvp_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(43);
    let mut pass = true;
    let mut report = Vec::new();
    for (name, pts) in suite(&mut rng, 20) {
        let (mut e_fd, mut e_h, mut asym) = (0.0f64, 0.0f64, 0.0f64);
        for x in &pts {
            let v: Vec<f64> = (0..x.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let (hv, h, fd) = with_fn!(&name, o => (
                hvp(|p| o.eval(p), x, &v).unwrap(),
                hessian(|p| o.eval(p), x).unwrap(),
                fd_hessian_times(o, x, &v),
            ));
            let assembled: Vec<f64> = h
                .iter()
                .map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum())
                .collect();
            e_fd = e_fd.max(rel_err(&hv, &fd));
            e_h = e_h.max(rel_err(&hv, &assembled));
            asym = asym.max(asymmetry(&h));
        }
        pass &= e_fd <= 1e-4 && e_h <= 1e-10 && asym <= 1e-8;
        report.push(format!("{name} fd {e_fd:.1e} hess {e_h:.1e} asym {asym:.1e}"));
    }
    let (fast, t) = within(start.elapsed(), Duration::from_secs(5));
    outcome(pass && fast, format!("{}; time {t}", report.join(", ")))
}

fn perturbation_confusion() -> Outcome {
    let r = derivative(
        |x| {
            let inner = derivative(|y| Ok(x.clone() + y), Generic::from(1.0))?;
            Ok(x * inner)
        },
        Generic::from(1.0),
    )
    .unwrap();
    let v = r.as_real();
    outcome(v == Some(1.0), format!("d/dx[x * d/dy(x + y)] at 1 = {v:?}"))
}

fn optimizer_demos() -> Outcome {
    let q = Quadratic::standard();
    let cfg = NewtonConfig {
        max_iters: 1,
        grad_tol: 0.0,
        ..NewtonConfig::default()
    };
    let traj = newton(&q, &[0.0, 0.0, 0.0], &cfg).unwrap();
    let exact = [2.0 / 9.0, 1.0 / 9.0, 13.0 / 9.0];
    let w1 = &traj[1].w;
    let newton_ok = traj.len() == 2 && w1.iter().zip(&exact).all(|(a, b)| close(*a, *b, 1e-10));

    let curve = mlp_train(MLP_SEED, 0.5, 5000).unwrap();
    let loss = *curve.last().unwrap();

    let w0 = mlp_init(MLP_SEED);
    let rev = grad_reverse(|p| XorMlp.eval(p), &w0).unwrap().1;
    let num = grad_numeric(|p| XorMlp.eval(p), &w0, DiffScheme::center()).unwrap().0;
    let gc = rel_err(&rev, &num);

    outcome(
        newton_ok && loss < 0.05 && gc <= 1e-5,
        format!(
            "newton step 1 = {w1:?}; mlp seed {MLP_SEED} final loss {loss:.4}; initial grad check {gc:.1e}"
        ),
    )
}

fn run_cli(args: &[&str], seed_env: Option<&str>) -> Vec<u8> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_adkit"));
    cmd.args(args).env_remove("ADKIT_SEED");
    if let Some(s) = seed_env {
        cmd.env("ADKIT_SEED", s);
    }
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn run_to_file(dir: &Path, tag: &str, args: &[&str], seed_env: Option<&str>) -> Vec<u8> {
    let path = dir.join(format!("{tag}.csv"));
    let p = path.to_str().unwrap();
    let mut full = args.to_vec();
    full.extend(["--out", p]);
    run_cli(&full, seed_env);
    std::fs::read(&path).unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str], Option<&str>); 6] = [
        ("helmholtz", &["helmholtz", "--no-time", "--seed", "42"], None),
        ("helmholtz-env", &["helmholtz", "--no-time"], Some("9")),
        ("errcurve", &["errcurve"], None),
        ("gd", &["demo", "gd", "--iters", "200"], None),
        ("newton", &["demo", "newton"], None),
        ("mlp", &["demo", "mlp", "--iters", "300"], Some("7")),
    ];
    let mut same = Vec::new();
    for (tag, args, env) in cases {
        let a = run_to_file(dir.path(), &format!("{tag}-a"), args, env);
        let b = run_to_file(dir.path(), &format!("{tag}-b"), args, env);
        same.push((tag, !a.is_empty() && a == b));
    }
    let stdout_same = run_cli(&["helmholtz", "--no-time", "--n-list", "1,8"], None)
        == run_cli(&["helmholtz", "--no-time", "--n-list", "1,8"], None);
    // untimed benchmark rows do not depend on the seed, the MLP curve does
    let seeded = run_cli(&["demo", "mlp", "--iters", "5"], Some("1"))
        != run_cli(&["demo", "mlp", "--iters", "5"], Some("2"));

    let pass = same.iter().all(|s| s.1) && stdout_same && seeded;
    outcome(
        pass,
        format!("byte-identical reruns {same:?}; stdout {stdout_same}; seed-sensitive {seeded}"),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("worked trace", worked_trace),
        ("expression swell oracle", expression_swell),
        ("finite-difference error regimes", error_regimes),
        ("relative timing trends", timing_trends),
        ("mode agreement", mode_agreement),
        ("hessian-vector products", hvp_correctness),
        ("perturbation confusion", perturbation_confusion),
        ("optimizer demos", optimizer_demos),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        // written directly so the line is shown even when output is captured
        writeln!(err, "{status} criterion {}: {name}: {}", i + 1, o.detail).unwrap();
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
