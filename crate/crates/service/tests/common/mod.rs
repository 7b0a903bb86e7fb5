use std::path::PathBuf;
use std::sync::OnceLock;

use supercd::fsner::{benchmark_task, BenchmarkConfig, World, WorldConfig};
use supercd::session::{annotate_oracle, SessionConfig};
use supercd::synth::{default_task_specs, TaskSplit};
use supercd_service::{SessionRequest, SessionState, Submission, SubmittedRecord};

/// A small world written to disk once per test binary.
pub struct Fixture {
    _dir: tempfile::TempDir,
    pub world: World,
    pub task: TaskSplit,
    pub ontology: PathBuf,
    pub corpus: PathBuf,
    pub task_path: PathBuf,
    pub retriever: PathBuf,
}

pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let mut wc = WorldConfig::default();
        wc.corpus.n_sentences = 3000;
        wc.sir_data.n_pairs = 500;
        wc.sir_train.epochs = 1;
        let world = World::generate(&wc).unwrap();
        let bc = BenchmarkConfig::default();
        let spec = default_task_specs(&world.ontology, 1, 2, 5, 1.0, 20).unwrap().remove(0);
        let task = benchmark_task(&world, &spec, &bc, 0, 0).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let ontology = dir.path().join("ontology.jsonl");
        let corpus = dir.path().join("corpus.jsonl");
        let task_path = dir.path().join("task.json");
        let retriever = dir.path().join("sir.json");
        world.ontology.save(&ontology).unwrap();
        world.corpus.save(&corpus).unwrap();
        task.save(&task_path).unwrap();
        world.retriever.save(&retriever).unwrap();
        Fixture { _dir: dir, world, task, ontology, corpus, task_path, retriever }
    })
}

impl Fixture {
    pub fn request(&self, config: SessionConfig) -> SessionRequest {
        SessionRequest {
            ontology: self.ontology.clone(),
            corpus: self.corpus.clone(),
            task: self.task_path.clone(),
            retriever: self.retriever.clone(),
            extractor: None,
            extractor_config: Default::default(),
            config,
        }
    }

    /// Oracle labels for the given pending instances, as a submission.
    pub fn oracle_submission(&self, state: &SessionState, ids: &[String]) -> Submission {
        let target = self.task.target_idx(&self.world.ontology).unwrap();
        let records = ids
            .iter()
            .map(|id| {
                assert!(state.pending.iter().any(|p| &p.instance_id == id));
                let rec = annotate_oracle(self.world.corpus.get(id).unwrap(), &target, &self.world.ontology).unwrap();
                SubmittedRecord { instance_id: rec.instance_id, decisions: rec.decisions, annotator: None }
            })
            .collect();
        Submission { records }
    }
}

pub fn human(budget: usize) -> SessionConfig {
    SessionConfig {
        budget,
        n_types: 1,
        annotator: supercd::session::AnnotatorKind::Human,
        ..SessionConfig::default()
    }
}

pub fn oracle(budget: usize) -> SessionConfig {
    SessionConfig { annotator: supercd::session::AnnotatorKind::Oracle, ..human(budget) }
}
