//! Sensitivity at fixed false-positive rates and per-stratum reports.

mod froc;
mod matching;
mod report;
mod strata;

pub use froc::{
    average_sensitivity, evaluate_matches, froc, froc_from_matches, Evaluation, FrocResult, ScoredDetection,
    DEFAULT_FP_POINTS,
};
pub use matching::{match_detections, MatchResult};
pub use report::{
    froc_svg, read_froc_curve, write_froc_curve, write_operating_points, write_strata, write_svg, FROC_FILE,
    OPERATING_POINTS_FILE, PLOT_FILE, STRATA_FILE,
};
pub use strata::{stratified_report, SizeBin, SizeBins, StratifiedReport, Stratum, StratumKind};
