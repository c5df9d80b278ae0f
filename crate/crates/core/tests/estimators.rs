mod common;

use common::{dataset, dataset_1d, normal, rng};
use otcf::data::{split_by_treatment, ObservationalDataset, Role};
use otcf::discrete::CostKind;
use otcf::estimators::{
    cate_ipw_kernel, cate_ipw_knn, couple_outcomes, linspace, match_greedy, match_greedy_ordered,
    match_optimal, qcate, sate_ipw, scate_coupled, scate_gaussian, scate_matched, scate_quantile,
    scate_quantile_gaussian, ArmSmoothers, ConstantPropensity, EstimatorSpec,
};
use otcf::gaussian::GaussianTransport;
use otcf::points::Points;
use otcf::sem::{simulate, SemParams};
use otcf::smoothers::{
    Bandwidth, LogisticOptions, PropensityFeatures, PropensityModel, SmootherSpec,
};
use otcf::Error;

fn kernel(h: f64) -> SmootherSpec {
    SmootherSpec::Kernel {
        bandwidth: Bandwidth::Scalar(h),
    }
}

fn max_abs_error(curve: &[f64], truth: impl Fn(usize) -> f64) -> f64 {
    curve
        .iter()
        .enumerate()
        .map(|(i, v)| (v - truth(i)).abs())
        .fold(0.0, f64::max)
}

fn balanced_random(seed: u64, n: usize) -> ObservationalDataset {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let y: Vec<f64> = x
        .iter()
        .zip(&t)
        .map(|(v, &t)| v + f64::from(t) + normal(&mut r))
        .collect();
    dataset_1d(y, t, x)
}

#[test]
fn ipw_with_half_propensity_is_difference_in_means() {
    let data = balanced_random(51, 400);
    let (g0, g1) = split_by_treatment(&data).unwrap();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let dm = mean(g1.outcomes(&data)) - mean(g0.outcomes(&data));
    let est = sate_ipw(&data, &ConstantPropensity(0.5)).unwrap();
    assert!((est.estimate - dm).abs() < 1e-12);
    assert!((est.ess_control - 200.0).abs() < 1e-9);
}

#[test]
fn ipw_needs_both_arms() {
    let data = dataset_1d(vec![1.0, 2.0], vec![1, 1], vec![0.0, 1.0]);
    assert!(sate_ipw(&data, &ConstantPropensity(0.5)).is_err());
}

#[test]
fn ipw_on_sem_recovers_ate() {
    let sample = simulate(&SemParams::reference(0.4), 60_000, 52).unwrap();
    let data = &sample.data;
    let prop = PropensityModel::fit(
        data,
        &data.collider_columns(),
        PropensityFeatures::Linear,
        &LogisticOptions::default(),
    )
    .unwrap();
    let est = sate_ipw(data, &prop).unwrap();
    assert!((est.estimate - 3.0).abs() < 0.1, "{}", est.estimate);
}

#[test]
fn ipw_kernel_is_flat_without_heterogeneity() {
    let sample = simulate(&SemParams::homogeneous(0.4), 100_000, 53).unwrap();
    let grid = linspace(-1.5, 1.5, 7);
    let curve = cate_ipw_kernel(&sample.data, &ConstantPropensity(0.5), 0, &grid, 0.3).unwrap();
    let err = max_abs_error(&curve.estimates, |_| 1.0);
    assert!(err < 0.15, "{:?}", curve.estimates);
}

#[test]
fn ipw_smoothers_collapse_to_sate() {
    let data = balanced_random(54, 300);
    let prop = ConstantPropensity(0.4);
    let sate = sate_ipw(&data, &prop).unwrap().estimate;
    let grid = [-0.5, 0.0, 0.5];
    let wide = cate_ipw_kernel(&data, &prop, 0, &grid, 1e8).unwrap();
    assert!(wide.estimates.iter().all(|v| (v - sate).abs() < 1e-6));
    let all = cate_ipw_knn(&data, &prop, 0, &grid, 300).unwrap();
    assert!(all.estimates.iter().all(|v| (v - sate).abs() < 1e-9));
    let x = data.column(0);
    let nearest = (0..300)
        .min_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()))
        .unwrap();
    let y = data.outcomes()[nearest];
    let term = if data.treatments()[nearest] == 1 {
        y / 0.4
    } else {
        -y / 0.6
    };
    let one = cate_ipw_knn(&data, &prop, 0, &[0.0], 1).unwrap();
    assert!((one.estimates[0] - term).abs() < 1e-12);
}

#[test]
fn ipw_grid_must_lie_in_range() {
    let data = balanced_random(55, 50);
    assert!(cate_ipw_kernel(&data, &ConstantPropensity(0.5), 0, &[100.0], 0.5).is_err());
}

#[test]
fn greedy_result_depends_on_visiting_order() {
    let data = dataset_1d(
        vec![0.0, 0.0, 5.0, 7.0],
        vec![0, 0, 1, 1],
        vec![0.0, 1.0, 1.0, 100.0],
    );
    let first = match_greedy_ordered(&data, &[0], &[0, 1], &[2, 3]).unwrap();
    assert_eq!((first.pairs[0].treated, first.pairs[1].treated), (2, 3));
    let second = match_greedy_ordered(&data, &[0], &[1, 0], &[2, 3]).unwrap();
    assert_eq!((second.pairs[0].treated, second.pairs[1].treated), (2, 3));
    assert_eq!(second.pairs[0].control, 1);
    let optimal = match_optimal(&data, &[0], CostKind::SquaredEuclidean, false).unwrap();
    let sq = |m: &otcf::estimators::MatchedPairs| -> f64 {
        m.pairs
            .iter()
            .map(|p| (data.row(p.control)[0] - data.row(p.treated)[0]).powi(2))
            .sum()
    };
    assert!(sq(&optimal) <= sq(&first));
    assert_eq!(sq(&first), 1.0 + 99.0 * 99.0);
}

#[test]
fn identical_arms_match_at_zero_distance() {
    let mut r = rng(56);
    let xs: Vec<Vec<f64>> = (0..40)
        .map(|_| vec![normal(&mut r), normal(&mut r)])
        .collect();
    let mut rows = xs.clone();
    rows.extend(xs.iter().rev().cloned());
    let t: Vec<u8> = (0..80).map(|i| u8::from(i >= 40)).collect();
    let data = dataset(vec![0.0; 80], t, rows);
    for cols in [vec![0], vec![0, 1]] {
        let m = match_greedy(&data, &cols, 3).unwrap();
        assert_eq!(m.total_distance(&data, &cols), 0.0);
    }
}

#[test]
fn matching_refuses_colliders() {
    let data = balanced_random(57, 20)
        .with_roles(vec![Role::Collider])
        .unwrap();
    assert!(matches!(
        match_greedy(&data, &[0], 0),
        Err(Error::ColliderTransport(0))
    ));
    assert!(match_optimal(&data, &[0], CostKind::SquaredEuclidean, true).is_err());
}

#[test]
fn matched_curve_neighborhood_limits() {
    let data = balanced_random(58, 200);
    let pairs = match_greedy(&data, &[0], 9).unwrap();
    let grid = Points::from_column(vec![-1.0, 0.0, 1.0]);
    let all = scate_matched(&data, &pairs, &[0], 100, &grid).unwrap();
    let mean = pairs.mean_difference();
    assert!(all.estimates.iter().all(|v| (v - mean).abs() < 1e-12));
    let one = scate_matched(&data, &pairs, &[0], 1, &grid).unwrap();
    for (g, est) in [-1.0, 0.0, 1.0].iter().zip(&one.estimates) {
        let p = pairs
            .pairs
            .iter()
            .min_by(|a, b| {
                let da = (data.row(a.control)[0] - g).abs();
                let db = (data.row(b.control)[0] - g).abs();
                da.total_cmp(&db).then(a.control.cmp(&b.control))
            })
            .unwrap();
        assert_eq!(*est, p.difference);
    }
}

#[test]
fn greedy_pairs_on_sem_average_to_ate() {
    let sample = simulate(&SemParams::reference(0.4), 100_000, 59).unwrap();
    let pairs = match_greedy(&sample.data, &[0], 59).unwrap();
    assert!((pairs.mean_difference() - 3.0).abs() < 0.1);
}

#[test]
#[ignore = "greedy matching with a shuffled visiting order does not converge to the transport map"]
fn matched_on_sem_tracks_mutatis_mutandis_cate() {
    let params = SemParams::reference(0.4);
    let sample = simulate(&params, 100_000, 59).unwrap();
    let pairs = match_greedy(&sample.data, &[0], 59).unwrap();
    let grid = linspace(-1.5, 1.5, 7);
    let k = (pairs.len() as f64).sqrt() as usize;
    let curve = scate_matched(
        &sample.data,
        &pairs,
        &[0],
        k,
        &Points::from_column(grid.clone()),
    )
    .unwrap();
    let err = max_abs_error(&curve.estimates, |i| params.analytic_cate_mm(grid[i]));
    assert!(err < 0.3, "{err}");
}

#[test]
fn permutation_coupling_reproduces_optimal_matching() {
    let data = balanced_random(60, 60);
    let coupled = couple_outcomes(&data, &[0], CostKind::SquaredEuclidean, false).unwrap();
    let matched = match_optimal(&data, &[0], CostKind::SquaredEuclidean, false).unwrap();
    for (i, c) in coupled.control.iter().enumerate() {
        let p = matched.pairs.iter().find(|p| p.control == *c).unwrap();
        assert!((coupled.differences[i] - p.difference).abs() < 1e-12);
    }
}

#[test]
fn unequal_arms_split_mass() {
    let data = dataset_1d(vec![0.0, 1.0, 10.0], vec![0, 0, 1], vec![0.0, 1.0, 0.5]);
    let coupled = couple_outcomes(&data, &[0], CostKind::SquaredEuclidean, false).unwrap();
    assert_eq!(coupled.counterfactual, vec![10.0, 10.0]);
    assert_eq!(coupled.differences, vec![10.0, 9.0]);
}

#[test]
fn coupled_on_sem_tracks_mutatis_mutandis_cate() {
    let params = SemParams::reference(0.4);
    let sample = simulate(&params, 4000, 61).unwrap();
    let coupled = couple_outcomes(&sample.data, &[0], CostKind::SquaredEuclidean, false).unwrap();
    let grid = linspace(-1.5, 1.5, 7);
    let curve = scate_coupled(
        &sample.data,
        &coupled,
        &[0],
        300,
        &Points::from_column(grid.clone()),
    )
    .unwrap();
    let err = max_abs_error(&curve.estimates, |i| params.analytic_cate_mm(grid[i]));
    assert!(err < 0.5, "{err}");
}

fn identical_groups(seed: u64) -> ObservationalDataset {
    let mut r = rng(seed);
    let xs: Vec<f64> = (0..150).map(|_| normal(&mut r)).collect();
    let mut x = xs.clone();
    x.extend(&xs);
    let t: Vec<u8> = (0..300).map(|i| u8::from(i >= 150)).collect();
    let y: Vec<f64> = x
        .iter()
        .zip(&t)
        .map(|(v, &t)| v * v + 2.0 * f64::from(t) + normal(&mut r))
        .collect();
    dataset_1d(y, t, x)
}

#[test]
fn identical_groups_make_mutatis_equal_ceteris() {
    let data = identical_groups(62);
    let models = ArmSmoothers::fit(&data, &[0], &kernel(0.3)).unwrap();
    let grid: Vec<f64> = data.column(0)[..150].to_vec();
    let q = scate_quantile(&data, &models, &grid).unwrap();
    assert_eq!(Some(q.estimates.clone()), q.cp_estimates);
    let g = scate_gaussian(
        &data,
        &GaussianTransport::fit_columns(&data, &[0]).unwrap(),
        &models,
        &Points::from_column(grid),
    )
    .unwrap();
    let cp = g.cp_estimates.unwrap();
    assert!(g
        .estimates
        .iter()
        .zip(&cp)
        .all(|(a, b)| (a - b).abs() < 1e-9));
}

#[test]
fn quantile_curve_composes_with_control_cdf() {
    let data = balanced_random(63, 301);
    let models = ArmSmoothers::fit(&data, &[0], &SmootherSpec::Knn { k: 15 }).unwrap();
    let (g0, _) = split_by_treatment(&data).unwrap();
    let mut x0 = g0.column(&data, 0);
    x0.sort_by(f64::total_cmp);
    let n0 = x0.len();
    let levels: Vec<f64> = (1..=n0)
        .map(|i| i as f64 / n0 as f64)
        .filter(|&u| u < 1.0)
        .collect();
    let qc = qcate(&data, &models, &levels).unwrap();
    let sc = scate_quantile(&data, &models, &x0[..levels.len()]).unwrap();
    assert_eq!(qc.estimates, sc.estimates);
}

#[test]
fn one_mediator_gaussian_matches_affine_curve() {
    let data = balanced_random(64, 500);
    let models = ArmSmoothers::fit(&data, &[0], &kernel(0.4)).unwrap();
    let grid = linspace(-1.5, 1.5, 13);
    let t = GaussianTransport::fit_columns(&data, &[0]).unwrap();
    let a = scate_gaussian(&data, &t, &models, &Points::from_column(grid.clone())).unwrap();
    let b = scate_quantile_gaussian(&data, &models, &grid).unwrap();
    assert!(a
        .estimates
        .iter()
        .zip(&b.estimates)
        .all(|(x, y)| (x - y).abs() <= 1e-10));
}

#[test]
fn quantile_estimator_needs_one_column() {
    let sample = simulate(&SemParams::reference(0.4), 500, 65).unwrap();
    let models = ArmSmoothers::fit(&sample.data, &[0, 1], &kernel(0.5)).unwrap();
    assert!(matches!(
        scate_quantile(&sample.data, &models, &[0.0]),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn scate_quantile_on_sem() {
    let params = SemParams::reference(0.4);
    let sample = simulate(&params, 40_000, 66).unwrap();
    let spec = EstimatorSpec::ScateQuantile {
        column: 0,
        smoother: SmootherSpec::default(),
    };
    let grid = linspace(-1.5, 1.5, 7);
    let curve = spec
        .run(&sample.data, &Points::from_column(grid.clone()), 0)
        .unwrap();
    let err = max_abs_error(&curve.estimates, |i| params.analytic_cate_mm(grid[i]));
    assert!(err < 0.2, "{err}");
    let cp = curve.cp_estimates.unwrap();
    let cp_err = max_abs_error(&cp, |i| params.analytic_cate_cp(grid[i]));
    assert!(cp_err < 0.2, "{cp_err}");
}

#[test]
fn estimators_are_seed_deterministic() {
    let sample = simulate(&SemParams::reference(0.4), 3000, 67).unwrap();
    let spec = EstimatorSpec::Matched {
        columns: vec![0, 1],
        k: 50,
        pairing: Default::default(),
    };
    let grid = Points::from_rows(&[[0.0, 0.0], [1.0, -0.5]]).unwrap();
    let a = spec.run(&sample.data, &grid, 4).unwrap();
    let b = spec.run(&sample.data, &grid, 4).unwrap();
    assert_eq!(a, b);
}
