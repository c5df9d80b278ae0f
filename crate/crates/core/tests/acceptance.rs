//! End-to-end acceptance run: one PASS/FAIL line per criterion.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use otcf::discrete::{optimal_coupling, optimal_matching, CostKind, CostMatrix};
use otcf::estimators::{
    linspace, match_greedy, qcate, sate_ipw, scate_gaussian_marginal, scate_quantile, ArmSmoothers,
    EstimatorSpec,
};
use otcf::gaussian::{sqrtm_spd, transport_matrix, GaussianTransport};
use otcf::points::Points;
use otcf::resampling::{bootstrap_curve, ResamplePlan};
use otcf::sem::{simulate, SemParams};
use otcf::smoothers::{
    Bandwidth, KernelRegressor, LogisticModel, LogisticOptions, PropensityFeatures,
    PropensityModel, SmootherSpec,
};
use otcf::univariate::{GaussianTransport1D, QuantileTransport1D};
use rand::Rng;

use common::{
    dataset_1d, exhaustive_min, frobenius_rel, gap_slope_oracle, lp_coupling_objective, mean_se,
    normal, ols, random_spd, rng,
};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

fn half_step_grid() -> Vec<f64> {
    linspace(-1.5, 1.5, 7)
}

fn max_error(estimates: &[f64], grid: &[f64], truth: impl Fn(f64) -> f64) -> f64 {
    estimates
        .iter()
        .zip(grid)
        .map(|(e, &x)| (e - truth(x)).abs())
        .fold(0.0, f64::max)
}

fn sem_ate() -> Verdict {
    let sample = simulate(&SemParams::reference(0.4), 100_000, 1001).unwrap();
    let data = &sample.data;
    let prop = PropensityModel::fit(
        data,
        &data.collider_columns(),
        PropensityFeatures::Linear,
        &LogisticOptions::default(),
    )
    .unwrap();
    let ipw = sate_ipw(data, &prop).unwrap().estimate;
    let matched = match_greedy(data, &data.mediator_columns(), 1001)
        .unwrap()
        .mean_difference();
    let pass = (ipw - 3.0).abs() <= 0.10 && (matched - 3.0).abs() <= 0.10;
    Verdict::new(
        pass,
        format!("ipw {ipw:.4}, matched pairs {matched:.4}, target 3"),
    )
}

fn sem_mutatis_cate() -> Verdict {
    let params = SemParams::reference(0.4);
    let sample = simulate(&params, 100_000, 1002).unwrap();
    let data = &sample.data;
    let grid = half_step_grid();
    let truth = |x| params.analytic_cate_mm(x);

    let m1d = ArmSmoothers::fit(data, &[0], &SmootherSpec::default()).unwrap();
    let q = scate_quantile(data, &m1d, &grid).unwrap();
    let q_err = max_error(&q.estimates, &grid, truth);

    let m2d = ArmSmoothers::fit(data, &[0, 1], &SmootherSpec::default()).unwrap();
    let t = GaussianTransport::fit_columns(data, &[0, 1]).unwrap();
    let g = scate_gaussian_marginal(data, &t, &m2d, 0, &grid, 16).unwrap();
    let g_err = max_error(&g.estimates, &grid, truth);

    Verdict::new(
        q_err <= 0.15 && g_err <= 0.20,
        format!("quantile max error {q_err:.4} (<= 0.15), gaussian max error {g_err:.4} (<= 0.20)"),
    )
}

fn gap_slope() -> Verdict {
    let params = SemParams::reference(0.4);
    let (d, d_se) = gap_slope_oracle(&params, 1_000_000, 1003);
    let grid = linspace(-1.5, 1.5, 31);
    let slopes: Vec<f64> = (0..20)
        .map(|r| {
            let sample = simulate(&params, 100_000, 2000 + r).unwrap();
            let models = ArmSmoothers::fit(&sample.data, &[0], &SmootherSpec::default()).unwrap();
            let curve = scate_quantile(&sample.data, &models, &grid).unwrap();
            let cp = curve.cp_estimates.unwrap();
            let gap: Vec<f64> = curve
                .estimates
                .iter()
                .zip(&cp)
                .map(|(a, b)| a - b)
                .collect();
            ols(&grid, &gap).1
        })
        .collect();
    let (fit, fit_se) = mean_se(&slopes);
    let bound = 2.0 * (fit_se * fit_se + d_se * d_se).sqrt();
    Verdict::new(
        (fit - d).abs() <= bound,
        format!(
            "fitted slope {fit:.4} +- {fit_se:.4} over 20 replicates, brute-force d {d:.4} +- {d_se:.4}, |diff| {:.4} <= {bound:.4}",
            (fit - d).abs()
        ),
    )
}

fn discrete_oracles() -> Verdict {
    let mut r = rng(1004);
    let mut worst_match = 0.0f64;
    for _ in 0..500 {
        let n = r.random_range(1..=6);
        let c = CostMatrix::from_vec(
            n,
            n,
            (0..n * n).map(|_| r.random_range(0.0..10.0)).collect(),
        )
        .unwrap();
        let m = optimal_matching(&c).unwrap();
        worst_match = worst_match.max((m.cost(&c) - exhaustive_min(&c)).abs());
    }
    let (mut worst_rel, mut worst_res) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (n0, n1) = (r.random_range(1..=6), r.random_range(1..=6));
        let c = CostMatrix::from_vec(
            n0,
            n1,
            (0..n0 * n1).map(|_| r.random_range(0.0..10.0)).collect(),
        )
        .unwrap();
        let weights = |r: &mut rand_chacha::ChaCha8Rng, n: usize| {
            let w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let (a0, a1) = (weights(&mut r, n0), weights(&mut r, n1));
        let p = optimal_coupling(&c, &a0, &a1).unwrap();
        let lp = lp_coupling_objective(&c, &a0, &a1);
        worst_rel = worst_rel.max((p.objective() - lp).abs() / lp.abs().max(f64::MIN_POSITIVE));
        worst_res = worst_res.max(p.marginal_residual());
    }
    Verdict::new(
        worst_match == 0.0 && worst_rel <= 1e-7 && worst_res <= 1e-9,
        format!(
            "matching gap {worst_match:e}, coupling relative gap {worst_rel:.2e}, marginal residual {worst_res:.2e}"
        ),
    )
}

fn rank_matching() -> Verdict {
    let mut r = rng(1005);
    let mut failures = 0;
    for _ in 0..200 {
        let n = r.random_range(2..=40);
        let x0: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let x1: Vec<f64> = (0..n).map(|_| 1.0 + 2.0 * normal(&mut r)).collect();
        let c = CostMatrix::build(
            &Points::from_column(x0.clone()),
            &Points::from_column(x1.clone()),
            CostKind::SquaredEuclidean,
        )
        .unwrap();
        let sigma = optimal_matching(&c).unwrap().sigma().to_vec();
        let rank = |v: &[f64], x: f64| v.iter().filter(|&&u| u < x).count();
        if (0..n).any(|i| rank(&x0, x0[i]) != rank(&x1, x1[sigma[i]])) {
            failures += 1;
        }
    }
    Verdict::new(
        failures == 0,
        format!("{failures} of 200 instances deviate from rank matching"),
    )
}

fn gaussian_identities() -> Verdict {
    let mut r = rng(1006);
    let (mut asym, mut fixed, mut root) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let k = r.random_range(1..=6);
        let (s0, s1) = (random_spd(&mut r, k), random_spd(&mut r, k));
        let a = transport_matrix(&s0, &s1).unwrap();
        asym = asym.max((&a - a.transpose()).amax());
        fixed = fixed.max(frobenius_rel(&(&a * &s0 * &a), &s1));
        let sq = sqrtm_spd(&s0).unwrap();
        root = root.max(frobenius_rel(&(&sq * &sq), &s0));
    }
    let mut affine = 0.0f64;
    for _ in 0..200 {
        let n = r.random_range(6..80);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-4.0..4.0)).collect();
        let t: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let data = dataset_1d(vec![0.0; n], t, x);
        let multi = GaussianTransport::fit_columns(&data, &[0]).unwrap();
        let single = GaussianTransport1D::fit(&data, 0, false).unwrap();
        for _ in 0..5 {
            let q = r.random_range(-5.0..5.0);
            affine = affine.max((multi.apply(&[q]).unwrap()[0] - single.apply(q)).abs());
        }
    }
    Verdict::new(
        asym == 0.0 && fixed <= 1e-8 && root <= 1e-9 && affine <= 1e-10,
        format!(
            "asymmetry {asym:e}, fixed-point residual {fixed:.2e}, sqrt residual {root:.2e}, 1D gap {affine:.2e}"
        ),
    )
}

fn quantile_push_forward() -> Verdict {
    let mut r = rng(1007);
    let mut image_ok = true;
    for _ in 0..100 {
        let n = r.random_range(1..200);
        let x0: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let mut x1: Vec<f64> = (0..n).map(|_| normal(&mut r).exp()).collect();
        let t = QuantileTransport1D::from_samples(&x0, &x1).unwrap();
        let mut image: Vec<f64> = x0.iter().map(|&x| t.apply(x)).collect();
        image.sort_by(f64::total_cmp);
        x1.sort_by(f64::total_cmp);
        image_ok &= image == x1;
    }

    let x0: Vec<f64> = (0..1000).map(|_| normal(&mut r)).collect();
    let x1: Vec<f64> = (0..1300).map(|_| 3.0 * normal(&mut r) + 1.0).collect();
    let t = QuantileTransport1D::from_samples(&x0, &x1).unwrap();
    let violations = (0..100_000)
        .filter(|_| {
            let (a, b) = (r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            t.apply(lo) > t.apply(hi)
        })
        .count();

    let n = 400;
    let x: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let tr: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let y: Vec<f64> = x
        .iter()
        .zip(&tr)
        .map(|(v, &t)| v * v + f64::from(t) + normal(&mut r))
        .collect();
    let data = dataset_1d(y, tr.clone(), x.clone());
    let models = ArmSmoothers::fit(&data, &[0], &SmootherSpec::Knn { k: 10 }).unwrap();
    let mut x0: Vec<f64> = x
        .iter()
        .zip(&tr)
        .filter(|(_, &t)| t == 0)
        .map(|(v, _)| *v)
        .collect();
    x0.sort_by(f64::total_cmp);
    let levels: Vec<f64> = (1..=x0.len())
        .map(|i| i as f64 / x0.len() as f64)
        .filter(|&u| u < 1.0)
        .collect();
    let composed = qcate(&data, &models, &levels).unwrap().estimates
        == scate_quantile(&data, &models, &x0[..levels.len()])
            .unwrap()
            .estimates;

    Verdict::new(
        image_ok && violations == 0 && composed,
        format!("image equals treated sample: {image_ok}, monotonicity violations {violations}, composition exact: {composed}"),
    )
}

fn smoother_contracts() -> Verdict {
    let mut r = rng(1008);
    let mut bounded = true;
    for _ in 0..200 {
        let n = r.random_range(2..50);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-100.0..100.0)).collect();
        let (lo, hi) = y
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let m = KernelRegressor::fit(
            Points::from_column(x),
            y,
            &Bandwidth::Scalar(r.random_range(0.001..10.0)),
        )
        .unwrap();
        for _ in 0..20 {
            let p = m.predict_value(&[r.random_range(-100.0..100.0)]);
            bounded &= p >= lo && p <= hi;
        }
    }

    let x: Vec<f64> = (0..500).map(|_| normal(&mut r)).collect();
    let y: Vec<f64> = x.iter().map(|v| v.sin() + normal(&mut r)).collect();
    let mean = y.iter().sum::<f64>() / 500.0;
    let wide =
        KernelRegressor::fit(Points::from_column(x.clone()), y, &Bandwidth::Scalar(1e8)).unwrap();
    let collapse = [-2.0, 0.0, 2.0]
        .iter()
        .map(|&q| (wide.predict_value(&[q]) - mean).abs())
        .fold(0.0, f64::max);

    let labels: Vec<f64> = x
        .iter()
        .map(|&v| f64::from(u8::from(r.random::<f64>() < 1.0 / (1.0 + (-1.5 * v).exp()))))
        .collect();
    let fit = LogisticModel::fit(
        &Points::from_column(x),
        &labels,
        &LogisticOptions::default(),
    )
    .unwrap();
    let monotone = fit.log_likelihood_trace().windows(2).all(|w| w[1] >= w[0]);

    let balanced: Vec<f64> = (0..1000).map(|i| f64::from(i % 2)).collect();
    let b0 = LogisticModel::fit_intercept(&balanced, &LogisticOptions::default())
        .unwrap()
        .coefficients()[0];

    Verdict::new(
        bounded && collapse <= 1e-6 && monotone && b0.abs() <= 1e-8,
        format!(
            "bounded: {bounded}, wide-bandwidth gap {collapse:.2e}, log-likelihood monotone: {monotone}, balanced intercept {b0:.2e}"
        ),
    )
}

fn mean_width(n: usize, seed: u64, grid: &[f64], params: &SemParams) -> (f64, f64) {
    let sample = simulate(params, n, seed).unwrap();
    let spec = EstimatorSpec::ScateQuantile {
        column: 0,
        smoother: SmootherSpec::default(),
    };
    let res = bootstrap_curve(
        &sample.data,
        &spec,
        &Points::from_column(grid.to_vec()),
        &ResamplePlan::bootstrap(200, seed),
    )
    .unwrap();
    let bands = res.curve.bands.unwrap();
    let width = bands
        .hi
        .iter()
        .zip(&bands.lo)
        .map(|(h, l)| h - l)
        .sum::<f64>()
        / grid.len() as f64;
    let covered = grid
        .iter()
        .enumerate()
        .filter(|&(i, &x)| {
            let truth = params.analytic_cate_mm(x);
            bands.lo[i] <= truth && truth <= bands.hi[i]
        })
        .count();
    (width, covered as f64 / grid.len() as f64)
}

fn bootstrap_coverage() -> Verdict {
    let params = SemParams::reference(0.4);
    let grid = linspace(-1.5, 1.5, 31);
    let (w20, coverage) = mean_width(20_000, 1009, &grid, &params);
    let (w4, _) = mean_width(4000, 1010, &grid, &params);
    let (w100, _) = mean_width(100_000, 1011, &grid, &params);
    Verdict::new(
        coverage >= 0.9 && w4 > w20 && w20 > w100,
        format!(
            "coverage {:.1}% at n = 20000, mean widths {w4:.3} > {w20:.3} > {w100:.3}",
            100.0 * coverage
        ),
    )
}

/// The `otcf` binary next to this test executable, built on demand.
fn cli_binary() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("OTCF_BIN") {
        return Some(PathBuf::from(p));
    }
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let bin = dir.join(format!("otcf{}", std::env::consts::EXE_SUFFIX));
    if !bin.exists() {
        let cargo = std::env::var_os("CARGO").unwrap_or_else(|| "cargo".into());
        let status = Command::new(cargo)
            .args(["build", "--quiet", "-p", "otcf-cli", "--bin", "otcf"])
            .current_dir(env!("CARGO_MANIFEST_DIR"))
            .status()
            .ok()?;
        if !status.success() {
            return None;
        }
    }
    bin.exists().then_some(bin)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn cli_determinism() -> Verdict {
    let Some(bin) = cli_binary() else {
        return Verdict::new(false, "otcf binary not found");
    };
    let tmp = tempfile::tempdir().unwrap();
    let run = |out: &Path, jobs: &str, args: &[&str]| -> Result<Vec<(String, Vec<u8>)>, String> {
        let o = Command::new(&bin)
            .args(["--seed", "17", "--jobs", jobs])
            .args(args)
            .arg("--out")
            .arg(out)
            .env_remove("OTCF_LOG")
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
        }
        Ok(dir_bytes(out))
    };
    let sim = tmp.path().join("sim");
    if let Err(e) = run(&sim, "2", &["simulate", "--n", "2400"]) {
        return Verdict::new(false, e);
    }
    let data = sim.join("data.csv");
    let d = data.to_str().unwrap();
    let base = ["--data", d, "--roles", "m,m,c"];
    let with = |extra: &[&'static str]| -> Vec<String> {
        base.iter()
            .copied()
            .chain(extra.iter().copied())
            .map(String::from)
            .collect()
    };
    let cases: Vec<(&str, Vec<String>)> = vec![
        ("simulate", vec!["--n".into(), "3000".into()]),
        (
            "transport",
            with(&["--method", "quantile", "--columns", "x1"]),
        ),
        ("transport", with(&["--method", "gaussian"])),
        (
            "transport",
            with(&["--method", "coupling", "--columns", "x1"]),
        ),
        ("match", with(&["--method", "greedy"])),
        ("cate", with(&["--estimator", "ipw-kernel"])),
        ("cate", with(&["--estimator", "ipw-knn", "--k", "200"])),
        ("cate", with(&["--estimator", "matched", "--k", "60"])),
        (
            "cate",
            with(&["--estimator", "coupled", "--columns", "x1", "--k", "60"]),
        ),
        (
            "cate",
            with(&["--estimator", "scate-quantile", "--outcome-model", "kernel"]),
        ),
        (
            "cate",
            with(&[
                "--estimator",
                "scate-quantile-gaussian",
                "--outcome-model",
                "knn",
                "--k",
                "50",
            ]),
        ),
        (
            "cate",
            with(&["--estimator", "qcate", "--outcome-model", "kernel"]),
        ),
        (
            "cate",
            with(&["--estimator", "scate-gaussian", "--outcome-model", "kernel"]),
        ),
        (
            "cate",
            with(&[
                "--estimator",
                "scate-gaussian-marginal",
                "--outcome-model",
                "kernel",
            ]),
        ),
        (
            "bootstrap",
            with(&[
                "--estimator",
                "matched",
                "--columns",
                "x1",
                "--k",
                "60",
                "--replicates",
                "8",
            ]),
        ),
        (
            "stability",
            with(&[
                "--estimator",
                "scate-quantile",
                "--outcome-model",
                "kernel",
                "--sizes",
                "600,1200",
                "--replicates",
                "4",
            ]),
        ),
    ];
    let mut mismatched = Vec::new();
    for (i, (cmd, rest)) in cases.iter().enumerate() {
        let mut args = vec![*cmd];
        args.extend(rest.iter().map(String::as_str));
        let outputs: Result<Vec<_>, String> = [("1", "a"), ("8", "b"), ("8", "c"), ("3", "d")]
            .iter()
            .map(|(jobs, tag)| run(&tmp.path().join(format!("{i}{tag}")), jobs, &args))
            .collect();
        match outputs {
            Err(e) => return Verdict::new(false, e),
            Ok(o) if o.windows(2).any(|w| w[0] != w[1]) || o[0].is_empty() => {
                mismatched.push(format!(
                    "{cmd} {}",
                    rest.iter()
                        .skip_while(|a| *a != "m,m,c")
                        .skip(1)
                        .cloned()
                        .collect::<Vec<_>>()
                        .join(" ")
                ))
            }
            Ok(_) => {}
        }
    }
    Verdict::new(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!(
                "{} command lines byte-identical across reruns and --jobs 1/3/8",
                cases.len()
            )
        } else {
            format!("differing outputs: {}", mismatched.join("; "))
        },
    )
}

fn main() {
    type Check = fn() -> Verdict;
    let criteria: [(&str, Check, Option<Duration>); 10] = [
        (
            "SEM average treatment effect",
            sem_ate,
            Some(Duration::from_secs(30)),
        ),
        (
            "SEM mutatis mutandis CATE",
            sem_mutatis_cate,
            Some(Duration::from_secs(60)),
        ),
        ("ceteris/mutatis gap slope", gap_slope, None),
        (
            "discrete OT oracle equivalence",
            discrete_oracles,
            Some(Duration::from_secs(10)),
        ),
        ("1D rank matching", rank_matching, None),
        ("Gaussian transport identities", gaussian_identities, None),
        (
            "quantile transport push-forward",
            quantile_push_forward,
            None,
        ),
        ("smoother contracts", smoother_contracts, None),
        (
            "bootstrap coverage and width",
            bootstrap_coverage,
            Some(Duration::from_secs(300)),
        ),
        ("CLI determinism", cli_determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        let elapsed = start.elapsed();
        let in_budget = budget.is_none_or(|b| elapsed <= b);
        let pass = v.pass && in_budget;
        failed += usize::from(!pass);
        let budget_note = budget
            .map(|b| format!(", budget {}s", b.as_secs()))
            .unwrap_or_default();
        println!(
            "criterion {:>2} {}: {name}: {} ({:.1}s{budget_note})",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
