//! Few-shot entity typing on gold spans: a logistic classifier over mention
//! features, micro-F1 metrics, selection baselines and the benchmark that
//! compares them with SuperCD.

mod baselines;
mod benchmark;
mod classifier;
mod metrics;

pub use baselines::{
    baseline_select, binary_entropy, kmeans_select, random_select, sentence_feature, BaselineContext, Strategy,
};
pub use benchmark::{
    benchmark_task, coverage, illustrative_closure_union, plan_from_selection, run_benchmark, summarize,
    train_retriever, unseen_metrics, BenchmarkConfig, BenchmarkReport, BenchmarkRow, StrategySummary, TaskParams,
    World, WorldConfig,
};
pub use classifier::{classifier_objective, train_classifier, ClassifierParams, SpanClassifier};
pub use metrics::Metrics;
