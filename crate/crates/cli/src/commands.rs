//! Subcommand bodies. Every artifact lives under one data directory with
//! fixed file names, so the stages chain without path flags.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use supercd::extractor::{train_extractor, training_pairs, Backend, ConceptExtractor, LearnedExtractor};
use supercd::fsner::{benchmark_task, run_benchmark, BenchmarkReport, Strategy, World};
use supercd::ontology::Ontology;
use supercd::session::AnnotatorKind;
use supercd::sir::{self, RetrieverModel};
use supercd::synth::{default_task_specs, gen_corpus, gen_ontology, Corpus};
use supercd_service::{SessionRequest, SessionStore, StartReply};

use crate::config::Config;
use crate::error::CliError;

pub const ONTOLOGY: &str = "ontology.jsonl";
pub const CORPUS: &str = "corpus.jsonl";
pub const SIR_PAIRS: &str = "sir_pairs.jsonl";
pub const RETRIEVER: &str = "retriever.json";
pub const EXTRACTOR: &str = "extractor.json";
pub const REPORT_STEM: &str = "report";
pub const SESSIONS: &str = "sessions";
pub const TASKS: &str = "tasks";

/// Command-line overrides for `run-experiment`.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOverrides {
    pub annotator: Option<AnnotatorKind>,
    pub budget: Option<usize>,
    pub shots: Option<usize>,
    pub seeds: Option<usize>,
    pub strategies: Option<Vec<Strategy>>,
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn gen_ontology_cmd(cfg: &Config, data: &Path) -> Result<(), CliError> {
    ensure_dir(data)?;
    let ont = gen_ontology(&cfg.world.ontology)?;
    ont.save(&data.join(ONTOLOGY))?;
    log::info!("{} concepts, depth {}, written to {}", ont.len(), ont.max_depth(), data.join(ONTOLOGY).display());
    Ok(())
}

/// Samples the corpus and rewrites the ontology with the corpus frequencies.
pub fn gen_corpus_cmd(cfg: &Config, data: &Path) -> Result<(), CliError> {
    let ont = Ontology::load(&data.join(ONTOLOGY))?;
    let (ont, corpus) = gen_corpus(&ont, &cfg.world.corpus)?;
    corpus.save(&data.join(CORPUS))?;
    ont.save(&data.join(ONTOLOGY))?;
    log::info!("{} sentences written to {}", corpus.len(), data.join(CORPUS).display());
    Ok(())
}

pub fn build_sir_data_cmd(cfg: &Config, data: &Path) -> Result<(), CliError> {
    let ont = Ontology::load(&data.join(ONTOLOGY))?;
    let corpus = Corpus::load(&data.join(CORPUS))?;
    let ds = sir::build_dataset(&ont, &corpus, &cfg.world.sir_data)?;
    ds.save(&data.join(SIR_PAIRS))?;
    if ds.warnings() > 0 {
        log::warn!(
            "{} draws skipped, {} pairs short of negatives, {} of {} pairs missing",
            ds.skipped,
            ds.short_negatives,
            ds.missing(),
            ds.requested
        );
    }
    log::info!("{} training pairs written to {}", ds.pairs.len(), data.join(SIR_PAIRS).display());
    Ok(())
}

pub fn train_sir_cmd(cfg: &Config, data: &Path) -> Result<(), CliError> {
    let params = &cfg.world.sir_train;
    params.check()?;
    let ont = Ontology::load(&data.join(ONTOLOGY))?;
    let corpus = Corpus::load(&data.join(CORPUS))?;
    let pairs = sir::load_pairs(&data.join(SIR_PAIRS))?;
    let init = RetrieverModel::init(sir::vocabulary(&corpus, &ont), params.d, params.init_std, params.seed)?;
    let encoded = sir::encode_pairs(&init, &pairs, &corpus, &ont)?;
    let out = sir::train(init, &encoded, params.lr, params.epochs, params.seed)?;
    for (epoch, loss) in out.epoch_losses.iter().enumerate() {
        log::info!("epoch {epoch}: mean loss {loss:.4}");
    }
    out.model.save(&data.join(RETRIEVER))?;
    log::info!("retriever written to {}", data.join(RETRIEVER).display());
    Ok(())
}

pub fn train_ce_cmd(cfg: &Config, data: &Path) -> Result<(), CliError> {
    let ont = Ontology::load(&data.join(ONTOLOGY))?;
    let corpus = Corpus::load(&data.join(CORPUS))?;
    let pairs = training_pairs(corpus.instances(), &ont)?;
    let out = train_extractor(&pairs, &ont, &cfg.extractor_training)?;
    if let (Some(first), Some(last)) = (out.losses.first(), out.losses.last()) {
        log::info!("extractor objective {first:.4} -> {last:.4} over {} epochs", out.losses.len() - 1);
    }
    out.model.save(&data.join(EXTRACTOR))?;
    log::info!("extractor written to {}", data.join(EXTRACTOR).display());
    Ok(())
}

fn load_extractor(cfg: &Config, data: &Path) -> Result<ConceptExtractor, CliError> {
    let config = cfg.world.extractor.clone();
    config.check()?;
    Ok(match config.backend {
        Backend::Oracle => ConceptExtractor::oracle(config),
        Backend::Learned => ConceptExtractor::learned(config, LearnedExtractor::load(&data.join(EXTRACTOR))?),
    })
}

fn apply(cfg: &mut Config, overrides: &ExperimentOverrides) {
    let session = &mut cfg.benchmark.session;
    if let Some(a) = overrides.annotator {
        session.annotator = a;
    }
    if let Some(b) = overrides.budget {
        session.budget = b;
    }
    if let Some(k) = overrides.shots {
        session.shots = k;
    }
    if let Some(n) = overrides.seeds {
        cfg.benchmark.n_seeds = n;
    }
    if let Some(s) = &overrides.strategies {
        cfg.benchmark.strategies = s.clone();
    }
}

/// What `run-experiment` produced.
#[derive(Debug)]
pub enum Experiment {
    Benchmark(Box<BenchmarkReport>),
    /// Human mode: one session per target type, waiting for labels.
    Sessions(Vec<StartReply>),
}

pub fn run_experiment_cmd(cfg: &Config, data: &Path, overrides: &ExperimentOverrides) -> Result<Experiment, CliError> {
    let mut cfg = cfg.clone();
    apply(&mut cfg, overrides);
    match cfg.benchmark.session.annotator {
        AnnotatorKind::Oracle => {
            let world = World {
                ontology: Ontology::load(&data.join(ONTOLOGY))?,
                corpus: Corpus::load(&data.join(CORPUS))?,
                extractor: load_extractor(&cfg, data)?,
                retriever: RetrieverModel::load(&data.join(RETRIEVER))?,
                retriever_losses: Vec::new(),
            };
            let report = run_benchmark(&world, &cfg.benchmark)?;
            report.save(data, REPORT_STEM)?;
            log::info!("report written to {}", data.join(format!("{REPORT_STEM}.json")).display());
            Ok(Experiment::Benchmark(Box::new(report)))
        }
        AnnotatorKind::Human => start_human_sessions(&cfg, data).map(Experiment::Sessions),
    }
}

/// Writes the seed-0 task split of every target type and opens one session
/// per type in the data directory's session store, for `serve` to host.
fn start_human_sessions(cfg: &Config, data: &Path) -> Result<Vec<StartReply>, CliError> {
    let data = data.canonicalize().map_err(|e| CliError::io(data, e))?;
    let ont = Ontology::load(&data.join(ONTOLOGY))?;
    let corpus = Corpus::load(&data.join(CORPUS))?;
    let extractor = load_extractor(cfg, &data)?;
    let world = World {
        ontology: ont,
        corpus,
        extractor,
        retriever: RetrieverModel::load(&data.join(RETRIEVER))?,
        retriever_losses: Vec::new(),
    };
    let bench = &cfg.benchmark;
    bench.session.check()?;
    let specs = default_task_specs(
        &world.ontology,
        bench.session.n_types,
        bench.task.target_depth,
        bench.session.shots,
        bench.task.skew,
        bench.task.min_source_mentions,
    )?;
    ensure_dir(&data.join(TASKS))?;
    let store = SessionStore::open(data.join(SESSIONS))?;
    let mut replies = Vec::with_capacity(specs.len());
    for (t, spec) in specs.iter().enumerate() {
        let task = benchmark_task(&world, spec, bench, 0, t)?;
        let task_path = data.join(TASKS).join(format!("type-{t}.json"));
        task.save(&task_path)?;
        let reply = store.start(SessionRequest {
            ontology: data.join(ONTOLOGY),
            corpus: data.join(CORPUS),
            task: task_path,
            retriever: data.join(RETRIEVER),
            extractor: matches!(cfg.world.extractor.backend, Backend::Learned).then(|| data.join(EXTRACTOR)),
            extractor_config: cfg.world.extractor.clone(),
            config: bench.session.clone(),
        })?;
        log::info!("type {t}: session {} with {} sentences to label", reply.session_id, reply.pending.len());
        replies.push(reply);
    }
    Ok(replies)
}

/// Plain-text summary table of a saved benchmark report.
pub fn render_report(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    let s = &report.config.session;
    let _ = writeln!(
        out,
        "{} seeds, {} types, K = {}, M = {} per type",
        report.config.n_seeds,
        report.types.len(),
        s.shots,
        s.budget
    );
    let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>10} {:>9} {:>7}", "strategy", "F1", "std", "unseen F1", "coverage", "used");
    for row in &report.summary {
        let _ = writeln!(
            out,
            "{:<10} {:>8.4} {:>8.4} {:>10.4} {:>9.1} {:>7.1}",
            row.strategy.as_str(),
            row.mean_f1,
            row.std_f1,
            row.mean_unseen_f1,
            row.mean_coverage,
            row.mean_budget_used
        );
    }
    out
}

pub fn report_cmd(input: &Path) -> Result<String, CliError> {
    Ok(render_report(&BenchmarkReport::load_json(input)?))
}

pub fn default_report_path(data: &Path) -> PathBuf {
    data.join(format!("{REPORT_STEM}.json"))
}

pub fn serve_cmd(data: &Path, host: std::net::IpAddr, port: u16) -> Result<(), CliError> {
    let store = Arc::new(SessionStore::open(data.join(SESSIONS))?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io(data, e))?;
    runtime
        .block_on(supercd_service::serve(SocketAddr::new(host, port), store))
        .map_err(|e| CliError::io(data, e))
}
