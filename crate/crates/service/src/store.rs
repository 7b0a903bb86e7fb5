use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use supercd::extractor::{ConceptExtractor, ExtractorConfig, LearnedExtractor};
use supercd::io::{read_json, to_json_pretty, write_atomic};
use supercd::ontology::Ontology;
use supercd::session::{
    finalize_session, oracle_records, plan_session, AnnotationRecord, AnnotatorKind, Components, PendingItem,
    SessionConfig, SessionPlan, SessionResult, SessionTrace,
};
use supercd::sir::RetrieverModel;
use supercd::synth::{Corpus, TaskSplit};

use crate::error::{Result, ServiceError};

const STATE_FILE: &str = "state.json";
const TRACE_FILE: &str = "trace.json";
const RESULT_FILE: &str = "result.json";

/// Everything needed to start a session: artifact paths plus configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub ontology: PathBuf,
    pub corpus: PathBuf,
    pub task: PathBuf,
    pub retriever: PathBuf,
    /// Learned extractor weights; the oracle extractor is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extractor: Option<PathBuf>,
    #[serde(default)]
    pub extractor_config: ExtractorConfig,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingAnnotation,
    Complete,
    Failed,
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionStatus::AwaitingAnnotation => "awaiting_annotation",
            SessionStatus::Complete => "complete",
            SessionStatus::Failed => "failed",
        })
    }
}

/// Persistent state of one session. `planned` keeps every selected instance
/// in selection order; `pending` is the part still waiting for labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub status: SessionStatus,
    pub request: SessionRequest,
    pub planned: Vec<PendingItem>,
    pub pending: Vec<PendingItem>,
    pub records: Vec<AnnotationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Present once the session is complete; stored in its own file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<SessionResult>,
}

/// Reply to a session start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartReply {
    pub session_id: String,
    pub status: SessionStatus,
    pub pending: Vec<PendingItem>,
}

/// One line of the session listing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub status: SessionStatus,
    pub annotated: usize,
    pub total: usize,
}

/// Labels for one pending instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmittedRecord {
    pub instance_id: String,
    pub decisions: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub records: Vec<SubmittedRecord>,
}

/// Loaded pipeline inputs of a session.
struct Artifacts {
    ontology: Ontology,
    corpus: Corpus,
    task: TaskSplit,
    extractor: ConceptExtractor,
    retriever: RetrieverModel,
}

impl Artifacts {
    fn load(req: &SessionRequest) -> Result<Artifacts> {
        let mut paths = vec![&req.ontology, &req.corpus, &req.task, &req.retriever];
        paths.extend(&req.extractor);
        if let Some(missing) = paths.into_iter().find(|p| !p.is_file()) {
            return Err(ServiceError::MissingArtifact(missing.clone()));
        }
        let extractor = match &req.extractor {
            Some(path) => ConceptExtractor::learned(req.extractor_config.clone(), LearnedExtractor::load(path)?),
            None => ConceptExtractor::oracle(req.extractor_config.clone()),
        };
        Ok(Artifacts {
            ontology: Ontology::load(&req.ontology)?,
            corpus: Corpus::load(&req.corpus)?,
            task: TaskSplit::load(&req.task)?,
            extractor,
            retriever: RetrieverModel::load(&req.retriever)?,
        })
    }

    fn components(&self) -> Components<'_> {
        Components {
            ontology: &self.ontology,
            corpus: &self.corpus,
            extractor: &self.extractor,
            retriever: &self.retriever,
        }
    }
}

struct Slot {
    state: SessionState,
    trace: SessionTrace,
    /// Loaded lazily after a restart.
    artifacts: Option<Arc<Artifacts>>,
}

/// Sessions kept in memory and mirrored to one directory each under `root`.
/// Every session sits behind its own lock, so requests to one session are
/// serialized while different sessions proceed in parallel.
pub struct SessionStore {
    root: PathBuf,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Slot>>>>,
}

fn invalid_request(req: &SessionRequest) -> Vec<String> {
    let mut problems = req.config.problems();
    if let Err(e) = req.extractor_config.check() {
        problems.push(format!("extractor_config: {e}"));
    }
    problems
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl SessionStore {
    /// Opens (creating if needed) the store at `root` and recovers every
    /// session directory found there.
    pub fn open(root: impl Into<PathBuf>) -> Result<SessionStore> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| supercd::Error::io(&root, e))?;
        let mut sessions = BTreeMap::new();
        let entries = fs::read_dir(&root).map_err(|e| supercd::Error::io(&root, e))?;
        for entry in entries {
            let dir = entry.map_err(|e| supercd::Error::io(&root, e))?.path();
            if !dir.join(STATE_FILE).is_file() {
                continue;
            }
            match recover(&dir) {
                Ok(slot) => {
                    sessions.insert(slot.state.session_id.clone(), Arc::new(Mutex::new(slot)));
                }
                Err(e) => log::warn!("skipping unreadable session directory {}: {e}", dir.display()),
            }
        }
        log::info!("session store {} holds {} sessions", root.display(), sessions.len());
        Ok(SessionStore { root, sessions: RwLock::new(sessions) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))
    }

    /// Runs the pipeline up to candidate selection and persists the new
    /// session. Oracle sessions are annotated and finalized immediately.
    pub fn start(&self, request: SessionRequest) -> Result<StartReply> {
        let problems = invalid_request(&request);
        if !problems.is_empty() {
            return Err(ServiceError::InvalidConfig(problems));
        }
        let artifacts = Arc::new(Artifacts::load(&request)?);
        let plan = plan_session(&artifacts.task, &request.config, artifacts.components())?;

        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let mut slot = Slot {
            state: SessionState {
                session_id: session_id.clone(),
                status: SessionStatus::AwaitingAnnotation,
                request,
                planned: plan.pending.clone(),
                pending: plan.pending.clone(),
                records: Vec::new(),
                error: None,
                result: None,
            },
            trace: plan.trace.clone(),
            artifacts: Some(artifacts.clone()),
        };
        if slot.state.request.config.annotator == AnnotatorKind::Oracle {
            slot.state.records = oracle_records(&plan, &artifacts.task, artifacts.components())?;
            slot.state.pending.clear();
        }
        self.persist(&slot, true)?;
        if slot.state.pending.is_empty() {
            self.finalize(&mut slot)?;
        }
        log::info!("session {session_id} started: {}", slot.state.status);
        let reply = StartReply {
            session_id: session_id.clone(),
            status: slot.state.status,
            pending: slot.state.pending.clone(),
        };
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(session_id, Arc::new(Mutex::new(slot)));
        Ok(reply)
    }

    pub fn get(&self, id: &str) -> Result<SessionState> {
        let slot = self.slot(id)?;
        let guard = slot.lock().unwrap_or_else(|e| e.into_inner());
        Ok(guard.state.clone())
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let slots: Vec<_> = self.sessions.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
        slots
            .iter()
            .map(|s| {
                let g = s.lock().unwrap_or_else(|e| e.into_inner());
                SessionSummary {
                    session_id: g.state.session_id.clone(),
                    status: g.state.status,
                    annotated: g.state.planned.len() - g.state.pending.len(),
                    total: g.state.planned.len(),
                }
            })
            .collect()
    }

    pub fn trace(&self, id: &str) -> Result<SessionTrace> {
        let slot = self.slot(id)?;
        let guard = slot.lock().unwrap_or_else(|e| e.into_inner());
        Ok(guard.trace.clone())
    }

    pub fn result(&self, id: &str) -> Result<SessionResult> {
        let slot = self.slot(id)?;
        let guard = slot.lock().unwrap_or_else(|e| e.into_inner());
        guard.state.result.clone().ok_or_else(|| ServiceError::NoResult(id.to_string()))
    }

    /// Validates and stores annotations. The whole submission is rejected if
    /// any record is invalid; when nothing is left pending the session is
    /// finalized.
    pub fn submit(&self, id: &str, submission: Submission) -> Result<SessionState> {
        let slot = self.slot(id)?;
        let mut guard = slot.lock().unwrap_or_else(|e| e.into_inner());
        let slot = &mut *guard;
        if slot.state.status != SessionStatus::AwaitingAnnotation {
            return Err(ServiceError::WrongState { id: id.to_string(), status: slot.state.status.to_string() });
        }

        let planned: BTreeMap<&str, &PendingItem> =
            slot.state.planned.iter().map(|p| (p.instance_id.as_str(), p)).collect();
        let mut unknown = Vec::new();
        let mut incomplete = Vec::new();
        for rec in &submission.records {
            match planned.get(rec.instance_id.as_str()) {
                None => unknown.extend(rec.decisions.keys().cloned()),
                Some(item) => {
                    let expected: BTreeSet<&String> = item.mention_keys.iter().collect();
                    unknown.extend(rec.decisions.keys().filter(|k| !expected.contains(k)).cloned());
                    incomplete.extend(
                        item.mention_keys.iter().filter(|k| !rec.decisions.contains_key(*k)).cloned(),
                    );
                }
            }
            if rec.decisions.is_empty() && !planned.contains_key(rec.instance_id.as_str()) {
                unknown.push(rec.instance_id.clone());
            }
        }
        if !unknown.is_empty() {
            return Err(ServiceError::UnknownKeys(unknown));
        }

        let done: BTreeSet<&str> = slot.state.records.iter().map(|r| r.instance_id.as_str()).collect();
        let mut seen = BTreeSet::new();
        let mut repeated = Vec::new();
        for rec in &submission.records {
            if done.contains(rec.instance_id.as_str()) || !seen.insert(rec.instance_id.as_str()) {
                repeated.extend(rec.decisions.keys().cloned());
            }
        }
        if !repeated.is_empty() {
            return Err(ServiceError::AlreadyAnnotated(repeated));
        }
        if !incomplete.is_empty() {
            return Err(ServiceError::Incomplete(incomplete));
        }

        let stamp = now();
        for rec in submission.records {
            slot.state.pending.retain(|p| p.instance_id != rec.instance_id);
            slot.state.records.push(AnnotationRecord {
                instance_id: rec.instance_id,
                decisions: rec.decisions,
                annotator: rec.annotator.unwrap_or_else(|| "human".to_string()),
                timestamp: Some(stamp),
            });
        }
        self.persist(slot, false)?;
        if slot.state.pending.is_empty() {
            self.finalize(slot)?;
        }
        Ok(slot.state.clone())
    }

    /// Trains and evaluates on the collected records. Pipeline failures mark
    /// the session failed rather than surfacing as request errors.
    fn finalize(&self, slot: &mut Slot) -> Result<()> {
        let artifacts = match &slot.artifacts {
            Some(a) => a.clone(),
            None => {
                let a = Arc::new(Artifacts::load(&slot.state.request)?);
                slot.artifacts = Some(a.clone());
                a
            }
        };
        let plan = SessionPlan {
            selected: slot.state.planned.iter().map(|p| p.instance_id.clone()).collect(),
            pending: slot.state.planned.clone(),
            trace: slot.trace.clone(),
        };
        let outcome = finalize_session(
            plan,
            slot.state.records.clone(),
            &artifacts.task,
            &slot.state.request.config,
            &artifacts.corpus,
        );
        match outcome {
            Ok(result) => {
                slot.state.records = result.records.clone();
                slot.state.status = SessionStatus::Complete;
                slot.state.result = Some(result);
            }
            Err(e) => {
                log::error!("session {} failed to finalize: {e}", slot.state.session_id);
                slot.state.status = SessionStatus::Failed;
                slot.state.error = Some(e.to_string());
            }
        }
        self.persist(slot, false)
    }

    fn persist(&self, slot: &Slot, with_trace: bool) -> Result<()> {
        let dir = self.root.join(&slot.state.session_id);
        if with_trace {
            write_atomic(&dir.join(TRACE_FILE), to_json_pretty(&slot.trace)?.as_bytes())?;
        }
        if let Some(result) = &slot.state.result {
            write_atomic(&dir.join(RESULT_FILE), to_json_pretty(result)?.as_bytes())?;
        }
        let state = SessionState { result: None, ..slot.state.clone() };
        write_atomic(&dir.join(STATE_FILE), to_json_pretty(&state)?.as_bytes())?;
        Ok(())
    }
}

fn recover(dir: &Path) -> Result<Slot> {
    let mut state: SessionState = read_json(&dir.join(STATE_FILE))?;
    let trace: SessionTrace = read_json(&dir.join(TRACE_FILE))?;
    if state.status == SessionStatus::Complete {
        state.result = Some(read_json(&dir.join(RESULT_FILE))?);
    }
    Ok(Slot { state, trace, artifacts: None })
}
