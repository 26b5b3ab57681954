//! Scores, taxonomy views and paired significance tests over prediction files.

mod aggregate;
mod chi2;
mod metrics;
mod significance;

pub use aggregate::{aggregate, group_order, AggregateReport, ExclusionPolicy, EXCLUDED_GROUP};
pub use chi2::{chi_square_sf, gamma_q, ln_gamma};
pub use metrics::{
    f1_report, f1_report_masked, read_predictions, report_predictions, write_f1_csv, write_predictions, ClassScore,
    ConfusionMatrix, F1Report, Prediction,
};
pub use significance::{
    contingency, mcnemar, mcnemar_counts, pair_predictions, stuart_maxwell, stuart_maxwell_table, McNemar, Paired,
    StuartMaxwell,
};
