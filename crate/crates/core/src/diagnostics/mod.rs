//! Gradient-analysis instruments: finite-difference checks against a
//! double-double reference, per-class gradient-norm statistics, BCE/RankNet
//! direction and dominance audits, and loss-landscape slices.

mod audit;
mod dd;
mod gradcheck;
mod landscape;
mod stats;

pub use audit::{direction_audit, dominance_check, DirectionReport, DominanceReport};
pub use gradcheck::{finite_diff_check, finite_diff_check_against, finite_diff_grad, max_relative_error, reference_value, REL_ERROR_FLOOR};
pub use landscape::{filter_normalized_direction, landscape_slice, sample_loss, LandscapeSlice};
pub use stats::{
    grad_norm_report, grad_stats_header, hist_bin, write_grad_stats_csv, ClassStats, GradStats, HIST_BINS, HIST_DECADES, HIST_MAX,
    HIST_MIN,
};
