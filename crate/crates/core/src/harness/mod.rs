//! Per-subject training and evaluation, statistics and reporting.

mod eval;
mod manifest;
mod possim;
mod report;
mod run;
mod train;
mod wilcoxon;

pub use eval::{argmax, count_correct, evaluate, Evaluation, HeadAccuracy};
pub use manifest::RunManifest;
pub use possim::{position_similarity, render_csv, render_pgm, write_heatmap};
pub use report::{
    compare, mean_std, primary_head, read_metrics, render_comparisons, render_report, summarize,
    write_metrics, Comparison, MetricRow, Summary, METRICS_HEADER,
};
pub use run::{
    evaluate_run, load_model, mean_similarity, metric_rows, run_training, train_all, write_possim,
    RunDir, SubjectResult,
};
pub use train::{subject_seed, train_subject, EpochStats, TrainOutcome};
pub use wilcoxon::{
    average_ranks, wilcoxon_signed_rank, wilcoxon_with, Marker, WilcoxonOptions, WilcoxonResult,
};
