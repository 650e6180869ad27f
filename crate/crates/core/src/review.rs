//! Human review sessions: seeded assignment, verdict capture with an
//! append-only log, correctness, and the HTTP API the review UI consumes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::FunctionPair;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown reviewer {0:?}")]
    UnknownReviewer(String),
    #[error("pair {pair_id} is not assigned to {reviewer}")]
    NotAssigned { pair_id: String, reviewer: String },
    #[error("{reviewer} already reviewed {pair_id}")]
    DuplicateVerdict { pair_id: String, reviewer: String },
    #[error("no verdicts")]
    NoVerdicts,
    #[error("unknown pair {0:?}")]
    UnknownPair(String),
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("verdict log {path}: {message}")]
    Log { path: PathBuf, message: String },
}

/// A reviewer's judgment of one pair. All three criteria must hold for the
/// pair to count as correct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub pair_id: String,
    pub reviewer: String,
    pub genuine: bool,
    pub self_contained: bool,
    pub cwe_correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub timestamp: DateTime<Utc>,
}

impl ReviewVerdict {
    pub fn is_correct(&self) -> bool {
        self.genuine && self.self_contained && self.cwe_correct
    }
}

/// Request body of `POST /api/verdicts`; the server assigns the timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictInput {
    pub pair_id: String,
    pub reviewer: String,
    pub genuine: bool,
    pub self_contained: bool,
    pub cwe_correct: bool,
    #[serde(default)]
    pub notes: Option<String>,
}

/// Fraction of verdicts meeting all three criteria.
pub fn correctness(verdicts: &[ReviewVerdict]) -> Result<f64, ReviewError> {
    if verdicts.is_empty() {
        return Err(ReviewError::NoVerdicts);
    }
    let ok = verdicts.iter().filter(|v| v.is_correct()).count();
    Ok(ok as f64 / verdicts.len() as f64)
}

/// Everything needed to rebuild assignments deterministically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub pool: Vec<String>,
    pub seed: u64,
    pub reviewers: Vec<String>,
    #[serde(default = "one")]
    pub reviews_per_pair: usize,
    /// Review only this many pairs drawn from the shuffled pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
}

fn one() -> usize {
    1
}

impl SessionManifest {
    pub fn validate(&self) -> Result<(), ReviewError> {
        let bad = |m: &str| Err(ReviewError::InvalidSession(m.to_string()));
        if self.reviewers.is_empty() {
            return bad("no reviewers");
        }
        if self.reviewers.iter().collect::<HashSet<_>>().len() != self.reviewers.len() {
            return bad("duplicate reviewer ids");
        }
        if self.pool.iter().collect::<HashSet<_>>().len() != self.pool.len() {
            return bad("duplicate pair ids in pool");
        }
        if self.reviews_per_pair == 0 || self.reviews_per_pair > self.reviewers.len() {
            return bad("reviews per pair must be between 1 and the number of reviewers");
        }
        Ok(())
    }

    /// Seeded shuffle of the pool, then round-robin: each sampled pair goes
    /// to `reviews_per_pair` consecutive (hence distinct) reviewers.
    pub fn assignments(&self) -> BTreeMap<String, Vec<String>> {
        let mut order = self.pool.clone();
        order.shuffle(&mut ChaCha20Rng::seed_from_u64(self.seed));
        order.truncate(self.sample_size.unwrap_or(order.len()));
        let mut out: BTreeMap<String, Vec<String>> = self.reviewers.iter().map(|r| (r.clone(), Vec::new())).collect();
        let m = self.reviewers.len();
        let r = self.reviews_per_pair;
        for (i, id) in order.into_iter().enumerate() {
            for j in 0..r {
                let reviewer = &self.reviewers[(i * r + j) % m];
                out.get_mut(reviewer).expect("reviewer present").push(id.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReviewState {
    pub pool: Vec<String>,
    pub assigned: BTreeMap<String, Vec<String>>,
    pub verdicts: Vec<ReviewVerdict>,
    #[serde(skip)]
    done: HashSet<(String, String)>,
}

impl ReviewState {
    pub fn new(manifest: &SessionManifest) -> Result<Self, ReviewError> {
        manifest.validate()?;
        Ok(ReviewState {
            pool: manifest.pool.clone(),
            assigned: manifest.assignments(),
            verdicts: Vec::new(),
            done: HashSet::new(),
        })
    }

    /// Rebuilds the state a session reaches after accepting `log` in order.
    pub fn replay(manifest: &SessionManifest, log: &[ReviewVerdict]) -> Result<Self, ReviewError> {
        let mut state = Self::new(manifest)?;
        for v in log {
            state.apply(v.clone())?;
        }
        Ok(state)
    }

    pub fn check(&self, pair_id: &str, reviewer: &str) -> Result<(), ReviewError> {
        let queue = self.assigned.get(reviewer).ok_or_else(|| ReviewError::NotAssigned {
            pair_id: pair_id.to_string(),
            reviewer: reviewer.to_string(),
        })?;
        if !queue.iter().any(|id| id == pair_id) {
            return Err(ReviewError::NotAssigned {
                pair_id: pair_id.to_string(),
                reviewer: reviewer.to_string(),
            });
        }
        if self.done.contains(&(pair_id.to_string(), reviewer.to_string())) {
            return Err(ReviewError::DuplicateVerdict {
                pair_id: pair_id.to_string(),
                reviewer: reviewer.to_string(),
            });
        }
        Ok(())
    }

    pub fn apply(&mut self, v: ReviewVerdict) -> Result<(), ReviewError> {
        self.check(&v.pair_id, &v.reviewer)?;
        self.done.insert((v.pair_id.clone(), v.reviewer.clone()));
        self.verdicts.push(v);
        Ok(())
    }

    pub fn next_for(&self, reviewer: &str) -> Result<Option<&str>, ReviewError> {
        let queue = self
            .assigned
            .get(reviewer)
            .ok_or_else(|| ReviewError::UnknownReviewer(reviewer.to_string()))?;
        Ok(queue
            .iter()
            .find(|id| !self.done.contains(&(id.to_string(), reviewer.to_string())))
            .map(String::as_str))
    }

    pub fn progress(&self) -> Progress {
        let reviewers = self
            .assigned
            .iter()
            .map(|(r, q)| {
                let completed = q.iter().filter(|id| self.done.contains(&(id.to_string(), r.clone()))).count();
                (
                    r.clone(),
                    ReviewerProgress {
                        assigned: q.len(),
                        completed,
                        pending: q.len() - completed,
                    },
                )
            })
            .collect();
        Progress {
            assigned: self.assigned.values().map(Vec::len).sum(),
            completed: self.verdicts.len(),
            correctness: correctness(&self.verdicts).ok(),
            reviewers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewerProgress {
    pub assigned: usize,
    pub completed: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub assigned: usize,
    pub completed: usize,
    pub correctness: Option<f64>,
    pub reviewers: BTreeMap<String, ReviewerProgress>,
}

/// A live session: pool contents, state, and the durable verdict log.
pub struct ReviewSession {
    manifest: SessionManifest,
    pairs: HashMap<String, FunctionPair>,
    state: RwLock<ReviewState>,
    log: Mutex<Option<(PathBuf, File)>>,
}

impl ReviewSession {
    /// Session without persistence.
    pub fn in_memory(manifest: SessionManifest, pairs: Vec<FunctionPair>) -> Result<Self, ReviewError> {
        let state = ReviewState::new(&manifest)?;
        Self::build(manifest, pairs, state, None)
    }

    /// Opens (or resumes) a session whose verdicts are appended to
    /// `log_path`. Existing verdicts are replayed first.
    pub fn open(manifest: SessionManifest, pairs: Vec<FunctionPair>, log_path: &Path) -> Result<Self, ReviewError> {
        let log_err = |message: String| ReviewError::Log {
            path: log_path.to_path_buf(),
            message,
        };
        let existing: Vec<ReviewVerdict> = if log_path.exists() {
            crate::jsonl::read(log_path).map_err(|e| log_err(e.to_string()))?
        } else {
            Vec::new()
        };
        let state = ReviewState::replay(&manifest, &existing)?;
        if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| log_err(e.to_string()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log_path)
            .map_err(|e| log_err(e.to_string()))?;
        Self::build(manifest, pairs, state, Some((log_path.to_path_buf(), file)))
    }

    fn build(
        manifest: SessionManifest,
        pairs: Vec<FunctionPair>,
        state: ReviewState,
        log: Option<(PathBuf, File)>,
    ) -> Result<Self, ReviewError> {
        let pairs: HashMap<String, FunctionPair> = pairs.into_iter().map(|p| (p.id().to_string(), p)).collect();
        if let Some(missing) = manifest.pool.iter().find(|id| !pairs.contains_key(*id)) {
            return Err(ReviewError::InvalidSession(format!("pool id {missing} has no pair record")));
        }
        Ok(ReviewSession {
            manifest,
            pairs,
            state: RwLock::new(state),
            log: Mutex::new(log),
        })
    }

    pub fn manifest(&self) -> &SessionManifest {
        &self.manifest
    }

    pub fn snapshot(&self) -> ReviewState {
        self.state.read().unwrap().clone()
    }

    pub fn pair(&self, id: &str) -> Option<&FunctionPair> {
        self.pairs.get(id)
    }

    pub fn next_assignment(&self, reviewer: &str) -> Result<Option<FunctionPair>, ReviewError> {
        let state = self.state.read().unwrap();
        Ok(state.next_for(reviewer)?.and_then(|id| self.pairs.get(id)).cloned())
    }

    /// Validates, stamps, persists and applies a verdict. The log lock is
    /// held throughout, so appends and timestamps are serialized.
    pub fn submit_verdict(&self, input: VerdictInput) -> Result<ReviewVerdict, ReviewError> {
        let mut log = self.log.lock().unwrap();
        let mut state = self.state.write().unwrap();
        state.check(&input.pair_id, &input.reviewer)?;
        let floor = state.verdicts.last().map(|v| v.timestamp + chrono::Duration::microseconds(1));
        let now = Utc::now();
        let timestamp = match floor {
            Some(f) if f > now => f,
            _ => now,
        };
        let verdict = ReviewVerdict {
            pair_id: input.pair_id,
            reviewer: input.reviewer,
            genuine: input.genuine,
            self_contained: input.self_contained,
            cwe_correct: input.cwe_correct,
            notes: input.notes.filter(|n| !n.trim().is_empty()),
            timestamp,
        };
        if let Some((path, file)) = log.as_mut() {
            let line = serde_json::to_string(&verdict).expect("verdict serializes");
            writeln!(file, "{line}")
                .and_then(|_| file.sync_data())
                .map_err(|e| ReviewError::Log {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
        }
        state.apply(verdict.clone())?;
        Ok(verdict)
    }

    pub fn progress(&self) -> Progress {
        self.state.read().unwrap().progress()
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    kind: &'static str,
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            ReviewError::UnknownReviewer(_) => (StatusCode::NOT_FOUND, "unknown_reviewer"),
            ReviewError::UnknownPair(_) => (StatusCode::NOT_FOUND, "unknown_pair"),
            ReviewError::NotAssigned { .. } => (StatusCode::FORBIDDEN, "not_assigned"),
            ReviewError::DuplicateVerdict { .. } => (StatusCode::CONFLICT, "duplicate_verdict"),
            ReviewError::NoVerdicts => (StatusCode::UNPROCESSABLE_ENTITY, "no_verdicts"),
            ReviewError::InvalidSession(_) => (StatusCode::INTERNAL_SERVER_ERROR, "invalid_session"),
            ReviewError::Log { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "log"),
        };
        (
            status,
            Json(ErrorBody {
                error: self.to_string(),
                kind,
            }),
        )
            .into_response()
    }
}

#[derive(Deserialize)]
struct NextQuery {
    reviewer: String,
}

async fn next_pair(State(s): State<Arc<ReviewSession>>, Query(q): Query<NextQuery>) -> Result<Response, ReviewError> {
    Ok(match s.next_assignment(&q.reviewer)? {
        Some(pair) => Json(pair).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(State(s): State<Arc<ReviewSession>>, Json(input): Json<VerdictInput>) -> Result<Response, ReviewError> {
    let verdict = s.submit_verdict(input)?;
    Ok((StatusCode::CREATED, Json(verdict)).into_response())
}

async fn progress(State(s): State<Arc<ReviewSession>>) -> Json<Progress> {
    Json(s.progress())
}

async fn pair_detail(State(s): State<Arc<ReviewSession>>, UrlPath(id): UrlPath<String>) -> Result<Json<FunctionPair>, ReviewError> {
    s.pair(&id).cloned().map(Json).ok_or(ReviewError::UnknownPair(id))
}

/// API routes, with `static_dir` (the built UI) served as a fallback.
pub fn router(session: Arc<ReviewSession>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/pairs/next", get(next_pair))
        .route("/api/pairs/{id}", get(pair_detail))
        .route("/api/verdicts", post(submit))
        .route("/api/progress", get(progress))
        .with_state(session);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until Ctrl-C.
pub async fn serve(session: Arc<ReviewSession>, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let app = router(session, static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
