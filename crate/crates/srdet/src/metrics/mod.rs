//! Evaluation: detection matching, precision/recall/accuracy, average
//! precision, PSNR, and the ablation report.

pub mod ap;
pub mod matching;
pub mod psnr;
pub mod report;

pub use ap::{average_precision, mean_average_precision};
pub use matching::{match_detections, prf_metrics, MatchResult, PrfMetrics};
pub use psnr::{psnr, Psnr};
pub use report::{build_report, write_report_csv, ReportRow};
