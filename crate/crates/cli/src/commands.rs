use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use otcf::data::{split_by_treatment, ObservationalDataset, Role};
use otcf::discrete::CostKind;
use otcf::estimators::{
    couple_outcomes, linspace, match_greedy, match_optimal, CateCurve, EstimatorSpec, Pairing,
    PropensityFeatureSpec,
};
use otcf::gaussian::{GaussianTransport, GroupMoments};
use otcf::points::Points;
use otcf::resampling::{bootstrap_curve, subsample_stability, ResampleMode, ResamplePlan};
use otcf::sem::{simulate, SemParams, COLUMNS};
use otcf::smoothers::{silverman_bandwidth, Bandwidth, SmootherSpec};
use otcf::univariate::QuantileTransport1D;
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::settings::*;

const DEFAULT_K: usize = 100;
const DEFAULT_NODES: usize = 16;
const SELF_CHECK_TOL: f64 = 1e-8;

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Write { path, source })
}

fn finish(mut w: BufWriter<File>, dir: &Path, name: &str) -> CliResult<()> {
    w.flush().map_err(|source| CliError::Write {
        path: dir.join(name),
        source,
    })
}

fn write_with(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> otcf::Result<()>,
) -> CliResult<()> {
    let mut w = create(dir, name)?;
    body(&mut w)?;
    finish(w, dir, name)
}

fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    write_with(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|source| otcf::Error::Io {
            path: PathBuf::from(name),
            source,
        })
    })
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn names(data: &ObservationalDataset, cols: &[usize]) -> Vec<String> {
    cols.iter().map(|&j| data.names()[j].clone()).collect()
}

fn arm_counts(data: &ObservationalDataset) -> CliResult<(usize, usize)> {
    let (g0, g1) = split_by_treatment(data)?;
    Ok((g0.len(), g1.len()))
}

pub fn simulate_cmd(args: &SimulateArgs, cfg: &Config, seed: u64) -> CliResult<()> {
    let preset = cfg
        .choice(args.preset, "preset")?
        .unwrap_or(Preset::Reference);
    let n = cfg.parsed(args.n, "n")?.unwrap_or(10_000);
    let r = cfg.parsed(args.r, "r")?.unwrap_or(0.4);
    let out = cfg.out_dir(&args.out)?;
    let params = match preset {
        Preset::Reference => SemParams::reference(r),
        Preset::Homogeneous => SemParams::homogeneous(r),
    };
    let sample = simulate(&params, n, seed)?;
    let data =
        sample
            .data
            .clone()
            .with_roles(vec![Role::Mediator, Role::Mediator, Role::Collider])?;
    write_with(&out, "data.csv", |w| data.write_csv(w, b','))?;

    let preset_name = match preset {
        Preset::Reference => "reference",
        Preset::Homogeneous => "homogeneous",
    };
    write_json(
        &out,
        "params.json",
        &json!({
            "preset": preset_name,
            "seed": seed,
            "n": n,
            "r": r,
            "columns": COLUMNS,
            "roles": data.roles(),
            "params": params,
            "ate": params.analytic_ate(),
            "gamma_direct": params.gamma_direct(),
            "sample_latent_ate": sample.latent_ate(),
            "cp": params.cp_decomposition(),
            "mm": params.mm_decomposition(),
            "gap": params.gap(),
        }),
    )?;

    write_with(&out, "analytic.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["x1", "cate_cp", "cate_mm", "ate"])?;
        for x in linspace(-3.0, 3.0, 121) {
            c.write_record([
                fmt(x),
                fmt(params.analytic_cate_cp(x)),
                fmt(params.analytic_cate_mm(x)),
                fmt(params.analytic_ate()),
            ])?;
        }
        c.flush().map_err(csv::Error::from)?;
        Ok(())
    })
}

fn refuse_colliders(data: &ObservationalDataset, cols: &[usize], force: bool) -> CliResult<()> {
    match cols.iter().find(|&&j| data.roles()[j] == Role::Collider) {
        Some(&j) if !force => Err(otcf::Error::ColliderTransport(j).into()),
        _ => Ok(()),
    }
}

fn write_pairs_csv(dir: &Path, names: &[String], from: &Points, to: &Points) -> CliResult<()> {
    write_with(dir, "transported.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        let header: Vec<String> = names
            .iter()
            .map(|n| format!("from_{n}"))
            .chain(names.iter().map(|n| format!("to_{n}")))
            .collect();
        c.write_record(&header)?;
        for (a, b) in from.rows().zip(to.rows()) {
            c.write_record(a.iter().chain(b).map(|&v| fmt(v)))?;
        }
        c.flush().map_err(csv::Error::from)?;
        Ok(())
    })
}

pub fn transport_cmd(args: &TransportArgs, cfg: &Config) -> CliResult<()> {
    let (data, _) = load_data(&args.data, cfg)?;
    let method = cfg
        .choice(args.method, "method")?
        .ok_or_else(|| CliError::usage("missing --method (quantile, gaussian or coupling)"))?;
    let force = cfg.flag(args.force, "force")?;
    let cols_arg = cfg.string(&args.columns, "columns");
    let out = cfg.out_dir(&args.out)?;
    let grid_specs = cfg.grids(&args.grid, "grid");

    match method {
        TransportMethod::Quantile => {
            let col = match cols_arg {
                Some(c) => match column_indices(&data, &c)?[..] {
                    [j] => j,
                    _ => return Err(CliError::usage("the quantile map takes exactly one column")),
                },
                None => columns_or_mediators(&data, None)?[0],
            };
            let t = QuantileTransport1D::fit(&data, col, force)?;
            let grid = covariate_grid(&data, &[col], &grid_specs)?;
            let to = Points::from_column(grid.rows().map(|x| t.apply(x[0])).collect());
            write_json(&out, "map.json", &t)?;
            write_pairs_csv(&out, &names(&data, &[col]), &grid, &to)
        }
        TransportMethod::Gaussian => {
            let cols = columns_or_mediators(&data, cols_arg.as_deref())?;
            refuse_colliders(&data, &cols, force)?;
            let t = GaussianTransport::fit_columns(&data, &cols)?;
            let (g0, g1) = split_by_treatment(&data)?;
            let m0 = GroupMoments::estimate(&g0.points(&data, &cols))?;
            let m1 = GroupMoments::estimate(&g1.points(&data, &cols))?;
            let residual = t.fixed_point_residual(&m0.cov, &m1.cov);
            if !(residual <= SELF_CHECK_TOL) {
                return Err(CliError::SelfCheck(format!(
                    "|A S0 A - S1| / |S1| = {residual:e} exceeds {SELF_CHECK_TOL:e}"
                )));
            }
            let grid = covariate_grid(&data, &cols, &grid_specs)?;
            let to = t.push_forward(&grid)?;
            write_json(&out, "map.json", &t)?;
            write_json(
                &out,
                "summary.json",
                &json!({
                    "method": "gaussian",
                    "columns": names(&data, &cols),
                    "fixed_point_residual": residual,
                    "ridge": t.ridge(),
                }),
            )?;
            write_pairs_csv(&out, &names(&data, &cols), &grid, &to)
        }
        TransportMethod::Coupling => {
            let cols = columns_or_mediators(&data, cols_arg.as_deref())?;
            let cost_data = if cfg.flag(args.standardize, "standardize")? {
                data.standardize_columns(&cols)?
            } else {
                data.clone()
            };
            let coupled = couple_outcomes(&cost_data, &cols, CostKind::SquaredEuclidean, force)?;
            let (g0, g1) = split_by_treatment(&data)?;
            let x1 = g1.points(&data, &cols);
            let from = g0.points(&data, &cols);
            let projected: Vec<Vec<f64>> = coupled
                .coupling
                .rows_normalized()
                .iter()
                .map(|row| {
                    let mut acc = vec![0.0; cols.len()];
                    for &(j, w) in row {
                        for (a, v) in acc.iter_mut().zip(x1.row(j)) {
                            *a += w * v;
                        }
                    }
                    acc
                })
                .collect();
            let to = Points::from_rows(&projected)?;
            let (n0, n1) = coupled.coupling.shape();
            write_json(
                &out,
                "map.json",
                &json!({
                    "type": "coupling",
                    "columns": names(&data, &cols),
                    "n0": n0,
                    "n1": n1,
                    "objective": coupled.coupling.objective(),
                    "marginal_residual": coupled.coupling.marginal_residual(),
                    "support": coupled.coupling.entries().len(),
                }),
            )?;
            write_with(&out, "coupling.csv", |w| coupled.coupling.write_csv(w))?;
            write_pairs_csv(&out, &names(&data, &cols), &from, &to)
        }
    }
}

pub fn match_cmd(args: &MatchArgs, cfg: &Config, seed: u64) -> CliResult<()> {
    let (data, _) = load_data(&args.data, cfg)?;
    let method = cfg
        .choice(args.method, "method")?
        .unwrap_or(MatchMethod::Greedy);
    let cols = columns_or_mediators(&data, cfg.string(&args.columns, "columns").as_deref())?;
    let force = cfg.flag(args.force, "force")?;
    let out = cfg.out_dir(&args.out)?;
    let cost_data = if cfg.flag(args.standardize, "standardize")? {
        data.standardize_columns(&cols)?
    } else {
        data.clone()
    };
    let pairs = match method {
        MatchMethod::Greedy => match_greedy(&cost_data, &cols, seed)?,
        MatchMethod::Optimal => {
            match_optimal(&cost_data, &cols, CostKind::SquaredEuclidean, force)?
        }
    };
    write_with(&out, "pairs.csv", |w| pairs.write_csv(w))?;
    write_json(
        &out,
        "summary.json",
        &json!({
            "method": match method { MatchMethod::Greedy => "greedy", MatchMethod::Optimal => "optimal" },
            "seed": seed,
            "columns": names(&data, &cols),
            "pairs": pairs.len(),
            "mean_difference": pairs.mean_difference(),
            "total_distance": pairs.total_distance(&cost_data, &cols),
            "subsampled_group": pairs.subsampled_group,
        }),
    )
}

fn parse_bandwidth(s: Option<&str>) -> CliResult<Bandwidth> {
    let Some(s) = s.map(str::trim).filter(|s| !s.eq_ignore_ascii_case("auto")) else {
        return Ok(Bandwidth::Auto);
    };
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("bad bandwidth {s:?}")))?;
    Ok(match values[..] {
        [h] => Bandwidth::Scalar(h),
        _ => Bandwidth::PerColumn(values),
    })
}

/// Estimator plus the grid it is evaluated on.
pub struct Plan {
    pub spec: EstimatorSpec,
    pub grid: Points,
}

pub fn plan_estimator(
    data: &ObservationalDataset,
    est: &EstimatorArgs,
    cfg: &Config,
) -> CliResult<Plan> {
    let kind = cfg
        .choice(est.estimator, "estimator")?
        .ok_or_else(|| CliError::usage("missing --estimator"))?;
    let cols_arg = cfg.string(&est.columns, "columns");
    let k_arg = cfg.parsed(est.k, "k")?;
    let k = k_arg.unwrap_or(DEFAULT_K);
    let force = cfg.flag(est.force, "force")?;
    let grid_specs = cfg.grids(&est.grid, "grid");
    let bandwidth = cfg.string(&est.bandwidth, "bandwidth");

    let one_column = || -> CliResult<usize> {
        match &cols_arg {
            Some(c) => match column_indices(data, c)?[..] {
                [j] => Ok(j),
                _ => Err(CliError::usage(format!(
                    "estimator {} takes exactly one column",
                    kind.to_possible_value().expect("named").get_name()
                ))),
            },
            None => Ok(columns_or_mediators(data, None)?[0]),
        }
    };
    let smoother = || -> CliResult<SmootherSpec> {
        let model = cfg
            .choice(est.outcome_model, "outcome-model")?
            .ok_or_else(|| CliError::usage("this estimator needs --outcome-model <kernel|knn>"))?;
        Ok(match model {
            OutcomeModel::Kernel => SmootherSpec::Kernel {
                bandwidth: parse_bandwidth(bandwidth.as_deref())?,
            },
            OutcomeModel::Knn => SmootherSpec::Knn { k },
        })
    };
    let propensity = || -> CliResult<(Vec<usize>, PropensityFeatureSpec)> {
        let cols = match cfg.string(&est.propensity_columns, "propensity-columns") {
            Some(s) => column_indices(data, &s)?,
            None => data.collider_columns(),
        };
        let features = match cfg.choice(est.propensity_features, "propensity-features")? {
            Some(Features::Quadratic) => PropensityFeatureSpec::Quadratic,
            _ => PropensityFeatureSpec::Linear,
        };
        Ok((cols, features))
    };

    let (spec, grid) = match kind {
        EstimatorKind::IpwKernel | EstimatorKind::IpwKnn => {
            let column = one_column()?;
            let (propensity_columns, features) = propensity()?;
            let grid = covariate_grid(data, &[column], &grid_specs)?;
            let spec = if kind == EstimatorKind::IpwKernel {
                let h = match parse_bandwidth(bandwidth.as_deref())? {
                    Bandwidth::Auto => {
                        silverman_bandwidth(&Points::from_column(data.column(column)))?[0]
                    }
                    Bandwidth::Scalar(h) => h,
                    Bandwidth::PerColumn(_) => {
                        return Err(CliError::usage("ipw-kernel takes a single bandwidth"))
                    }
                };
                EstimatorSpec::IpwKernel {
                    column,
                    propensity_columns,
                    features,
                    bandwidth: h,
                }
            } else {
                EstimatorSpec::IpwKnn {
                    column,
                    propensity_columns,
                    features,
                    k,
                }
            };
            (spec, grid)
        }
        EstimatorKind::Matched | EstimatorKind::Coupled => {
            let columns = columns_or_mediators(data, cols_arg.as_deref())?;
            let grid = covariate_grid(data, &columns, &grid_specs)?;
            let spec = if kind == EstimatorKind::Matched {
                let pairing = match cfg.choice(est.pairing, "pairing")? {
                    Some(MatchMethod::Optimal) => Pairing::Optimal,
                    _ => Pairing::Greedy,
                };
                EstimatorSpec::Matched {
                    columns,
                    k,
                    pairing,
                }
            } else {
                EstimatorSpec::Coupled { columns, k, force }
            };
            (spec, grid)
        }
        EstimatorKind::ScateQuantile | EstimatorKind::ScateQuantileGaussian => {
            let column = one_column()?;
            let smoother = smoother()?;
            let grid = covariate_grid(data, &[column], &grid_specs)?;
            let spec = if kind == EstimatorKind::ScateQuantile {
                EstimatorSpec::ScateQuantile { column, smoother }
            } else {
                EstimatorSpec::ScateQuantileGaussian { column, smoother }
            };
            (spec, grid)
        }
        EstimatorKind::Qcate => {
            let column = one_column()?;
            let smoother = smoother()?;
            let levels = match &grid_specs[..] {
                [] => linspace(0.01, 0.99, 99),
                [g] => parse_axis(g)?,
                _ => return Err(CliError::usage("qcate takes one grid of quantile levels")),
            };
            (
                EstimatorSpec::Qcate { column, smoother },
                Points::from_column(levels),
            )
        }
        EstimatorKind::ScateGaussian => {
            let columns = columns_or_mediators(data, cols_arg.as_deref())?;
            refuse_colliders(data, &columns, force)?;
            let smoother = smoother()?;
            let grid = covariate_grid(data, &columns, &grid_specs)?;
            (EstimatorSpec::ScateGaussian { columns, smoother }, grid)
        }
        EstimatorKind::ScateGaussianMarginal => {
            let columns = columns_or_mediators(data, cols_arg.as_deref())?;
            refuse_colliders(data, &columns, force)?;
            let smoother = smoother()?;
            let along = match cfg.string(&est.along, "along") {
                Some(a) => match column_indices(data, &a)?[..] {
                    [j] => j,
                    _ => return Err(CliError::usage("--along takes one column")),
                },
                None => columns[0],
            };
            let nodes = cfg.parsed(est.nodes, "nodes")?.unwrap_or(DEFAULT_NODES);
            let grid = covariate_grid(data, &[along], &grid_specs)?;
            let spec = EstimatorSpec::ScateGaussianMarginal {
                columns,
                along,
                nodes,
                smoother,
            };
            (spec, grid)
        }
    };
    Ok(Plan { spec, grid })
}

fn write_curve(out: &Path, curve: &CateCurve) -> CliResult<()> {
    write_with(out, "curve.csv", |w| curve.write_csv(w))?;
    write_json(out, "curve.json", curve)?;
    if curve.columns.len() == 2 {
        write_with(out, "sign_map.csv", |w| curve.write_sign_map(w))?;
    }
    Ok(())
}

pub fn cate_cmd(args: &CateArgs, cfg: &Config, seed: u64) -> CliResult<()> {
    let (data, report) = load_data(&args.data, cfg)?;
    let plan = plan_estimator(&data, &args.estimator, cfg)?;
    let out = cfg.out_dir(&args.out)?;
    let curve = plan.spec.run(&data, &plan.grid, seed)?;
    let (n0, n1) = arm_counts(&data)?;
    let flagged = curve.flags.iter().filter(|&&f| f).count();
    if flagged > 0 {
        log::warn!("{flagged} grid points needed a fallback or lie outside the control support");
    }
    write_curve(&out, &curve)?;
    write_json(
        &out,
        "summary.json",
        &json!({
            "estimator": plan.spec,
            "seed": seed,
            "n": data.n(),
            "n0": n0,
            "n1": n1,
            "load": report,
            "points": curve.len(),
            "flagged": flagged,
            "mean_estimate": curve.estimates.iter().sum::<f64>() / curve.len() as f64,
        }),
    )
}

pub fn bootstrap_cmd(args: &BootstrapArgs, cfg: &Config, seed: u64) -> CliResult<()> {
    let (data, _) = load_data(&args.data, cfg)?;
    let plan = plan_estimator(&data, &args.estimator, cfg)?;
    let out = cfg.out_dir(&args.out)?;
    let resample = ResamplePlan {
        mode: ResampleMode::Bootstrap,
        replicates: cfg.parsed(args.replicates, "replicates")?.unwrap_or(200),
        size: cfg.parsed(args.size, "size")?,
        seed,
        level: cfg.parsed(args.level, "level")?.unwrap_or(0.95),
    };
    let (n0, n1) = arm_counts(&data)?;
    eprintln!(
        "bootstrap: {} replicates, stratified on n0 = {n0}, n1 = {n1}",
        resample.replicates
    );
    let result = bootstrap_curve(&data, &plan.spec, &plan.grid, &resample)?;
    for a in &result.audit {
        eprintln!("replicate {}: n0 = {}, n1 = {}", a.replicate, a.n0, a.n1);
    }
    eprintln!(
        "bootstrap: done, {} of {} replicates failed",
        result.failed, result.replicates
    );
    write_with(&out, "bands.csv", |w| result.curve.write_csv(w))?;
    write_json(&out, "bootstrap.json", &result)
}

pub fn stability_cmd(args: &StabilityArgs, cfg: &Config, seed: u64) -> CliResult<()> {
    let (data, _) = load_data(&args.data, cfg)?;
    let plan = plan_estimator(&data, &args.estimator, cfg)?;
    let out = cfg.out_dir(&args.out)?;
    let n = data.n();
    let sizes: Vec<usize> = match cfg.string(&args.sizes, "sizes") {
        Some(s) => split_list(&s)
            .iter()
            .map(|v| v.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::usage(format!("bad --sizes {s:?}")))?,
        None => [n / 8, n / 4, n / 2, n]
            .into_iter()
            .filter(|&s| s >= 2)
            .collect(),
    };
    let replicates = cfg.parsed(args.replicates, "replicates")?.unwrap_or(20);
    let table = subsample_stability(&data, &plan.spec, &plan.grid, &sizes, replicates, seed)?;
    write_with(&out, "stability.csv", |w| table.write_csv(w))
}
