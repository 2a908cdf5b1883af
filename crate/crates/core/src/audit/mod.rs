//! Attribute-confounding audit: an equalized-odds attribute oracle and the
//! fraction of exemplars whose oracle attribute flips.

mod metric;
mod oracle;

pub use metric::{confounding_metric, overall_table_csv, stratified_table_csv, ConfoundingReport, Stratum};
pub use oracle::{
    equalized_odds_rules, rates_from_scores, recalibrate_equalized_odds, GroupRates, GroupRule, OracleRates, ProxyOracle, Recalibration, GRID_STEP,
};
