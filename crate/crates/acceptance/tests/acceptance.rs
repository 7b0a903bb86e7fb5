//! Exit criteria of the selection engine. Each check prints one line; the
//! process fails if any criterion does.
//!
//! Run alone with `cargo test -p supercd-acceptance --test acceptance`.

use std::collections::BTreeSet;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use supercd::extractor::{
    train_extractor, training_pairs, CommonConceptSet, ConceptExtractor, ExtractorConfig, ExtractorTrainParams,
};
use supercd::fsner::{benchmark_task, run_benchmark, BenchmarkConfig, BenchmarkReport, Strategy, World, WorldConfig};
use supercd::ontology::SuperpositionQuery;
use supercd::rng::stage_rng;
use supercd::session::{run_session, AnnotatorKind, SessionConfig};
use supercd::sir::{self, CorpusIndex, DatasetParams, EncodedPair, EncodedPool, RetrieverModel};
use supercd::superposition::{build_queries, build_sets, flatten_queries};
use supercd::synth::{default_task_specs, gen_corpus, gen_ontology, Corpus, CorpusParams, Instance, Mention};
use supercd_acceptance::{run, verdict, Outcome};
use supercd_service::{SessionRequest, SessionStatus, SessionStore, Submission, SubmittedRecord};

const SEEDS: usize = 10;

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

// ---------------------------------------------------------------------------
// numerical criteria

fn random_model<R: Rng>(rng: &mut R, vocab: usize, d: usize, std: f64) -> RetrieverModel {
    let seed = rng.random();
    RetrieverModel::init((0..vocab).map(|i| format!("t{i}")), d, std, seed).unwrap()
}

fn random_tokens<R: Rng>(rng: &mut R, vocab: usize, len: std::ops::Range<usize>) -> Vec<String> {
    let len = rng.random_range(len);
    (0..len).map(|_| format!("t{}", rng.random_range(0..vocab))).collect()
}

fn gradient_correctness() -> Result<String, String> {
    let mut rng = stage_rng(1, "acceptance-gradient");
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let vocab = rng.random_range(5..30);
        let d = rng.random_range(2..9);
        let mut model = random_model(&mut rng, vocab, d, 0.5);
        // the query mixes included and excluded (marked) tokens
        let mut query = random_tokens(&mut rng, vocab, 1..5);
        for t in random_tokens(&mut rng, vocab, 0..3) {
            query.push(format!("!{t}"));
        }
        let positive = random_tokens(&mut rng, vocab, 1..8);
        let negatives: Vec<Vec<String>> = (0..rng.random_range(1..6))
            .map(|_| random_tokens(&mut rng, vocab, 1..8))
            .collect();
        let pair = EncodedPair {
            query: model.token_ids(&query),
            positive: model.token_ids(&positive),
            negatives: negatives.iter().map(|n| model.token_ids(n)).collect(),
        };
        let (_, sparse) = sir::loss_gradient(&model, &pair).unwrap();
        let mut analytic = vec![0.0; model.table().len()];
        for (row, g) in &sparse {
            analytic[row * d..(row + 1) * d].copy_from_slice(g);
        }
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = model.table()[i];
            model.table_mut()[i] = orig + h;
            let up = sir::pair_loss(&model, &pair).unwrap();
            model.table_mut()[i] = orig - h;
            let down = sir::pair_loss(&model, &pair).unwrap();
            model.table_mut()[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic).max(norm(&numeric)).max(1e-12);
        worst = worst.max(norm(&diff) / scale);
    }
    verdict(worst < 1e-4, format!("20 configurations, worst relative error {worst:.2e} (< 1e-4)"))
}

fn loss_closed_forms() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for n in [1usize, 10, 200] {
        for s in [-3.0, 0.0, 2.5, 40.0] {
            let l = sir::loss(s, &vec![s; n]).unwrap();
            worst = worst.max((l - (1.0 + n as f64).ln()).abs());
        }
    }
    let mut rng = stage_rng(2, "acceptance-loss");
    let mut min_loss = f64::INFINITY;
    for i in 0..1000 {
        let spread = if i % 10 == 0 { 700.0 } else { 50.0 };
        let s_pos = rng.random_range(-spread..spread);
        let negs: Vec<f64> = (0..rng.random_range(1..=200)).map(|_| rng.random_range(-spread..spread)).collect();
        let l = sir::loss(s_pos, &negs).unwrap();
        if !l.is_finite() {
            return Err(format!("non-finite loss at fuzz case {i}"));
        }
        min_loss = min_loss.min(l);
    }
    verdict(
        worst <= 1e-12 && min_loss >= 0.0,
        format!("|L - ln(1+N)| max {worst:.1e} over N in {{1,10,200}}; min fuzzed loss {min_loss:.3e} over 1000 cases"),
    )
}

fn retrieval_exactness() -> Result<String, String> {
    let mut rng = stage_rng(3, "acceptance-retrieval");
    for trial in 0..50 {
        let vocab = rng.random_range(3..60);
        let d = rng.random_range(1..17);
        let model = random_model(&mut rng, vocab, d, 1.0);
        let n = rng.random_range(1..=500);
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let mut pool: Vec<Instance> = Vec::with_capacity(n);
        for (pos, id) in ids.into_iter().enumerate() {
            // every fifth text copies an earlier one, so tied scores occur
            let tokens = if pos > 0 && pos % 5 == 0 {
                pool[rng.random_range(0..pos)].tokens.clone()
            } else {
                let mut t = random_tokens(&mut rng, vocab, 1..12);
                if rng.random_bool(0.1) {
                    t.push("never-seen".into());
                }
                t
            };
            pool.push(Instance {
                id: format!("s{id:04}"),
                tokens,
                mentions: vec![Mention { span: (0, 1), concepts: vec![], feature: vec![] }],
            });
        }
        let refs: Vec<&Instance> = pool.iter().collect();
        let query = random_tokens(&mut rng, vocab, 1..6);

        let got = sir::retrieve(&model, &query, &refs, n).unwrap();
        let got: Vec<(String, u64)> = got.into_iter().map(|(id, s)| (id, s.to_bits())).collect();

        // brute force: mean of rows, inner product, full sort
        let mean = |tokens: &[String]| -> Vec<f64> {
            let mut v = vec![0.0; d];
            for t in tokens {
                for (a, b) in v.iter_mut().zip(model.row(model.token_id(t))) {
                    *a += b;
                }
            }
            v.iter().map(|x| x / tokens.len() as f64).collect()
        };
        let q = mean(&query);
        let mut all: Vec<(f64, String)> = pool
            .iter()
            .map(|inst| (mean(&inst.tokens).iter().zip(&q).map(|(a, b)| a * b).sum::<f64>(), inst.id.clone()))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let want: Vec<(String, u64)> = all.into_iter().map(|(s, id)| (id, s.to_bits())).collect();
        if got != want {
            return Err(format!("trial {trial}: ranking differs from brute force (pool {n}, d {d})"));
        }
    }
    Ok("50 random (model, pool <= 500, query) triples, rankings byte-identical to brute force".into())
}

fn elimination_combinatorics() -> Result<String, String> {
    for m in 2..=8usize {
        let common = CommonConceptSet {
            concepts: (0..m).map(|i| format!("C{i}")).collect(),
            counts: (0..m).map(|i| m - i).collect(),
        };
        let sets = build_sets(&common).map_err(|e| e.to_string())?;
        let queries = build_queries(&sets);
        let back = flatten_queries(&queries);
        let distinct: BTreeSet<_> = sets.iter().collect();
        let ok = sets.len() == m * (m - 1)
            && distinct.len() == sets.len()
            && queries.len() == m
            && queries.iter().all(|q| q.included.len() == m - 1)
            && back.iter().collect::<BTreeSet<_>>() == distinct
            && back.len() == sets.len();
        if !ok {
            return Err(format!("m = {m}: {} sets, {} queries", sets.len(), queries.len()));
        }
    }
    Ok("m = 2..8: m(m-1) sets, m queries, exact pair recovery".into())
}

// ---------------------------------------------------------------------------
// retriever dataset and training

fn base_corpus() -> (supercd::ontology::Ontology, Corpus) {
    let cfg = WorldConfig::default();
    let ont = gen_ontology(&cfg.ontology).unwrap();
    gen_corpus(&ont, &cfg.corpus).unwrap()
}

fn dataset_soundness(ont: &supercd::ontology::Ontology, corpus: &Corpus) -> Result<String, String> {
    let params = DatasetParams { n_pairs: 10_000, ..DatasetParams::default() };
    let ds = sir::build_dataset(ont, corpus, &params).map_err(|e| e.to_string())?;
    let index = CorpusIndex::new(ont, corpus).map_err(|e| e.to_string())?;
    let failures: Vec<String> = ds
        .pairs
        .iter()
        .filter_map(|p| sir::check_pair(&index, p).err().map(|e| e.to_string()))
        .collect();
    let negs: usize = ds.pairs.iter().map(|p| p.negatives.len()).sum();
    verdict(
        failures.is_empty() && ds.pairs.len() == 10_000,
        format!(
            "{} pairs, {negs} negatives re-checked, {} failures{}",
            ds.pairs.len(),
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn query_key(q: &SuperpositionQuery) -> (String, BTreeSet<String>) {
    (q.excluded.clone(), q.included.iter().cloned().collect())
}

/// Precision@10 of the untrained and trained retriever on queries that never
/// occur in its training data.
fn learning_effect_for_seed(ont: &supercd::ontology::Ontology, corpus: &Corpus, seed: u64) -> (f64, f64) {
    let defaults = WorldConfig::default();
    let train_params = DatasetParams { seed: 100 + seed, ..defaults.sir_data.clone() };
    let train_set = sir::build_dataset(ont, corpus, &train_params).unwrap();
    let seen: BTreeSet<_> = train_set.pairs.iter().map(|p| query_key(&p.query)).collect();
    let probe = sir::build_dataset(ont, corpus, &DatasetParams { n_pairs: 1000, seed: 10_000 + seed, ..train_params }).unwrap();
    let mut held_out: Vec<SuperpositionQuery> = Vec::new();
    let mut keys = BTreeSet::new();
    for p in probe.pairs {
        let key = query_key(&p.query);
        if !seen.contains(&key) && keys.insert(key) {
            held_out.push(p.query);
        }
        if held_out.len() == 200 {
            break;
        }
    }

    let sp = &defaults.sir_train;
    let init = RetrieverModel::init(sir::vocabulary(corpus, ont), sp.d, sp.init_std, seed).unwrap();
    let pairs = sir::encode_pairs(&init, &train_set.pairs, corpus, ont).unwrap();
    let trained = sir::train(init.clone(), &pairs, sp.lr, sp.epochs, seed).unwrap().model;

    let index = CorpusIndex::new(ont, corpus).unwrap();
    let everything: Vec<&Instance> = corpus.instances().iter().collect();
    let p_at_10 = |m: &RetrieverModel| {
        let pool = EncodedPool::new(m, &everything).unwrap();
        sir::precision_at_k(m, &held_out, &index, &pool, 10).unwrap()
    };
    (p_at_10(&init), p_at_10(&trained))
}

fn learning_effect(ont: &supercd::ontology::Ontology, corpus: &Corpus) -> Result<String, String> {
    let results: Vec<(f64, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..5u64).map(|seed| s.spawn(move || learning_effect_for_seed(ont, corpus, seed))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let before = results.iter().map(|r| r.0).sum::<f64>() / 5.0;
    let after = results.iter().map(|r| r.1).sum::<f64>() / 5.0;
    verdict(
        after - before > 0.05,
        format!("held-out precision@10 over 5 seeds: untrained {before:.3}, trained {after:.3}, margin {:.3} (> 0.05)", after - before),
    )
}

// ---------------------------------------------------------------------------
// benchmark properties

fn benchmark(world: &World, budget: usize, strategies: Vec<Strategy>) -> BenchmarkReport {
    let mut config = BenchmarkConfig { n_seeds: SEEDS, strategies, ..BenchmarkConfig::default() };
    config.session.budget = budget;
    run_benchmark(world, &config).unwrap()
}

fn mean_f1(report: &BenchmarkReport, s: Strategy) -> f64 {
    report.summary_of(s).unwrap().mean_f1
}

fn end_to_end(world: &mut Option<World>, report: &mut Option<BenchmarkReport>) -> Result<String, String> {
    let w = World::generate(&WorldConfig::default()).map_err(|e| e.to_string())?;
    let r = benchmark(&w, 5, vec![Strategy::Vanilla, Strategy::Random, Strategy::Supercd]);
    let (sup, rnd, van) = (mean_f1(&r, Strategy::Supercd), mean_f1(&r, Strategy::Random), mean_f1(&r, Strategy::Vanilla));
    *world = Some(w);
    *report = Some(r);
    verdict(
        sup > rnd && rnd > van && sup - van > 0.0 && sup - rnd >= 0.0,
        format!("mean micro-F1 over {SEEDS} seeds: supercd {sup:.4}, random {rnd:.4}, vanilla {van:.4}"),
    )
}

fn unseen_concepts(report: Option<&BenchmarkReport>) -> Result<String, String> {
    let r = report.ok_or("benchmark unavailable")?;
    let van = r.summary_of(Strategy::Vanilla).unwrap();
    let sup = r.summary_of(Strategy::Supercd).unwrap();
    verdict(
        van.mean_unseen_f1 < van.mean_f1 && sup.mean_unseen_f1 - van.mean_unseen_f1 > 0.0,
        format!(
            "vanilla unseen F1 {:.4} vs overall {:.4}; supercd unseen F1 {:.4} (margin {:+.4})",
            van.mean_unseen_f1,
            van.mean_f1,
            sup.mean_unseen_f1,
            sup.mean_unseen_f1 - van.mean_unseen_f1
        ),
    )
}

fn concept_coverage(report: Option<&BenchmarkReport>) -> Result<String, String> {
    let r = report.ok_or("benchmark unavailable")?;
    let sup = r.summary_of(Strategy::Supercd).unwrap().mean_coverage;
    let rnd = r.summary_of(Strategy::Random).unwrap().mean_coverage;
    verdict(
        sup >= rnd,
        format!("mean distinct out-of-illustrative concepts: supercd {sup:.1}, random {rnd:.1}"),
    )
}

fn budget_sweep(world: Option<&World>, at_five: Option<&BenchmarkReport>) -> Result<String, String> {
    let (world, at_five) = (world.ok_or("world unavailable")?, at_five.ok_or("benchmark unavailable")?);
    let mut f1 = vec![mean_f1(at_five, Strategy::Supercd)];
    for budget in [10, 20] {
        f1.push(mean_f1(&benchmark(world, budget, vec![Strategy::Supercd]), Strategy::Supercd));
    }
    verdict(
        f1.windows(2).all(|w| w[1] >= w[0]),
        format!("supercd mean F1 at budget 5 / 10 / 20: {:.4} / {:.4} / {:.4}", f1[0], f1[1], f1[2]),
    )
}

// ---------------------------------------------------------------------------
// determinism and service parity

fn small_world_config() -> WorldConfig {
    let mut cfg = WorldConfig::default();
    cfg.corpus = CorpusParams { n_sentences: 3000, ..CorpusParams::default() };
    cfg.sir_data.n_pairs = 500;
    cfg.sir_train.epochs = 2;
    cfg
}

/// Every seeded stage, serialized.
fn stage_artifacts() -> Vec<(&'static str, Vec<u8>)> {
    let cfg = small_world_config();
    let ont = gen_ontology(&cfg.ontology).unwrap();
    let (ont, corpus) = gen_corpus(&ont, &cfg.corpus).unwrap();
    let ds = sir::build_dataset(&ont, &corpus, &cfg.sir_data).unwrap();
    let init = RetrieverModel::init(sir::vocabulary(&corpus, &ont), cfg.sir_train.d, cfg.sir_train.init_std, cfg.sir_train.seed).unwrap();
    let pairs = sir::encode_pairs(&init, &ds.pairs, &corpus, &ont).unwrap();
    let retriever = sir::train(init, &pairs, cfg.sir_train.lr, cfg.sir_train.epochs, cfg.sir_train.seed).unwrap().model;
    let ce_pairs = training_pairs(&corpus.instances()[..400], &ont).unwrap();
    let learned = train_extractor(&ce_pairs, &ont, &ExtractorTrainParams { epochs: 5, lr: None }).unwrap().model;

    let world = World {
        ontology: ont,
        corpus,
        extractor: ConceptExtractor::oracle(ExtractorConfig::default()),
        retriever,
        retriever_losses: Vec::new(),
    };
    let bench = BenchmarkConfig { n_seeds: 2, strategies: Strategy::ALL.to_vec(), ..BenchmarkConfig::default() };
    let mut session = bench.session.clone();
    session.n_types = 1;
    let spec = default_task_specs(&world.ontology, 1, 2, session.shots, 1.0, 20).unwrap().remove(0);
    let task = benchmark_task(&world, &spec, &bench, 0, 0).unwrap();
    let result = run_session(&task, &session, world.components()).unwrap();
    let report = run_benchmark(&world, &BenchmarkConfig { task: supercd::fsner::TaskParams { target_depth: 2, ..Default::default() }, ..bench }).unwrap();

    vec![
        ("ontology", world.ontology.to_jsonl().into_bytes()),
        ("corpus", world.corpus.to_jsonl().into_bytes()),
        ("retriever pairs", ds.to_jsonl().unwrap().into_bytes()),
        ("retriever", world.retriever.to_json().unwrap().into_bytes()),
        ("learned extractor", learned.to_json().unwrap().into_bytes()),
        ("task split", supercd::io::to_json_pretty(&task).unwrap().into_bytes()),
        ("session result", supercd::io::to_json_pretty(&result).unwrap().into_bytes()),
        ("benchmark report", report.to_json().unwrap().into_bytes()),
        ("benchmark rows", report.to_csv().unwrap().into_bytes()),
    ]
}

fn determinism() -> Result<String, String> {
    let (a, b) = (stage_artifacts(), stage_artifacts());
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0).collect();
    let names: Vec<&str> = a.iter().map(|x| x.0).collect();
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} stages byte-identical across two runs ({})", names.len(), names.join(", "))
        } else {
            format!("stages differ: {}", differing.join(", "))
        },
    )
}

fn service_parity() -> Result<String, String> {
    let world = World::generate(&small_world_config()).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |name: &str| dir.path().join(name);
    world.ontology.save(&path("ontology.jsonl")).unwrap();
    world.corpus.save(&path("corpus.jsonl")).unwrap();
    world.retriever.save(&path("retriever.json")).unwrap();
    let specs = default_task_specs(&world.ontology, 2, 2, 5, 1.0, 20).unwrap();
    let store = SessionStore::open(path("sessions")).unwrap();
    let bench = BenchmarkConfig::default();

    let mut compared = 0;
    for (t, spec) in specs.iter().enumerate() {
        for seed in 0..3u64 {
            let task = benchmark_task(&world, spec, &bench, seed, t).unwrap();
            let task_path = path(&format!("task-{t}-{seed}.json"));
            task.save(&task_path).unwrap();
            let config = |annotator| SessionConfig { n_types: 1, seed, annotator, ..SessionConfig::default() };
            let request = |annotator| SessionRequest {
                ontology: path("ontology.jsonl"),
                corpus: path("corpus.jsonl"),
                task: task_path.clone(),
                retriever: path("retriever.json"),
                extractor: None,
                extractor_config: ExtractorConfig::default(),
                config: config(annotator),
            };
            let oracle = store.start(request(AnnotatorKind::Oracle)).map_err(|e| e.to_string())?;
            let human = store.start(request(AnnotatorKind::Human)).map_err(|e| e.to_string())?;
            let target = task.target_idx(&world.ontology).unwrap();
            let records = human
                .pending
                .iter()
                .map(|p| {
                    let inst = world.corpus.get(&p.instance_id).unwrap();
                    let rec = supercd::session::annotate_oracle(inst, &target, &world.ontology).unwrap();
                    SubmittedRecord { instance_id: rec.instance_id, decisions: rec.decisions, annotator: Some("operator".into()) }
                })
                .collect();
            let state = store.submit(&human.session_id, Submission { records }).map_err(|e| e.to_string())?;
            if state.status != SessionStatus::Complete {
                return Err(format!("type {t}, seed {seed}: human session left {}", state.status));
            }
            let a = store.result(&oracle.session_id).unwrap().without_provenance();
            let b = store.result(&human.session_id).unwrap().without_provenance();
            let direct = run_session(&task, &config(AnnotatorKind::Oracle), world.components()).unwrap();
            if a != b || a != direct.without_provenance() {
                return Err(format!("type {t}, seed {seed}: human-mode result differs from oracle mode"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} (type, seed) sessions: human mode with oracle labels equals oracle mode field by field"))
}

fn main() {
    let mut outcomes: Vec<Outcome> = Vec::new();
    outcomes.push(run("gradient-correctness", secs(5), gradient_correctness));
    outcomes.push(run("loss-closed-forms", None, loss_closed_forms));
    outcomes.push(run("retrieval-exactness", secs(10), retrieval_exactness));
    outcomes.push(run("elimination-combinatorics", None, elimination_combinatorics));

    let (ont, corpus) = base_corpus();
    outcomes.push(run("sir-dataset-soundness", secs(60), || dataset_soundness(&ont, &corpus)));
    outcomes.push(run("sir-learning-effect", secs(300), || learning_effect(&ont, &corpus)));

    let (mut world, mut report) = (None, None);
    outcomes.push(run("end-to-end-ordering", secs(600), || end_to_end(&mut world, &mut report)));
    outcomes.push(run("unseen-concept-gain", None, || unseen_concepts(report.as_ref())));
    outcomes.push(run("concept-coverage", None, || concept_coverage(report.as_ref())));
    outcomes.push(run("budget-monotonicity", None, || budget_sweep(world.as_ref(), report.as_ref())));

    outcomes.push(run("determinism", None, determinism));
    outcomes.push(run("service-parity", None, service_parity));

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    println!("\n{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
