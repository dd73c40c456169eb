//! Biometric evaluation: ROC AUC, EER, TMR@FMR, the matching protocol and
//! the depth-sweep report.

mod protocol;
mod report;
mod scores;

pub use protocol::{build_match_protocol, match_scores, MatchProtocol};
pub use report::{
    aggregate, evaluate_suite, tmr_metric, Aggregate, EvalConfig, EvalInputs, EvalReport, Named, ReportRow, BASELINE,
};
pub use scores::{eer, quantile_sorted, roc_auc, roc_points, tmr_at_fmr, ScoreSet, TmrAtFmr};
