//! Treatment-effect estimators: IPW averages, matching, couplings and
//! transport-based mutatis mutandis CATE.

mod curve;
mod ipw;
mod matching;
mod spec;
mod transport;

pub use curve::{default_grid, linspace, Bands, CateCurve, Method};
pub use ipw::{
    cate_ipw_kernel, cate_ipw_knn, sate_ipw, ConstantPropensity, Propensity, SateEstimate,
};
pub use matching::{
    couple_outcomes, match_greedy, match_greedy_ordered, match_optimal, scate_coupled,
    scate_matched, CoupledOutcomes, MatchedPairs, Pair,
};
pub use spec::{EstimatorSpec, Pairing, PropensityFeatureSpec};
pub use transport::{
    gauss_hermite, qcate, scate_gaussian, scate_gaussian_marginal, scate_quantile,
    scate_quantile_gaussian, ArmSmoothers,
};
