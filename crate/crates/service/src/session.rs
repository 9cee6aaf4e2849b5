//! In-memory sessions and their fit jobs.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use tonefit::optimize::fit_with_observer;
use tonefit::{FitConfig, Image, SolutionSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Idle,
    Running,
    Done,
    Error,
}

/// Latest published state of a session's fit job.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitStatus {
    pub state: JobState,
    pub progress: f64,
    /// `null` until the first report.
    pub loss: Option<f64>,
    /// `null` until the first report, or when the images match exactly.
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Default for FitStatus {
    fn default() -> Self {
        FitStatus {
            state: JobState::Idle,
            progress: 0.0,
            loss: None,
            psnr: None,
            error: None,
        }
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// A rendered preview and what it was rendered from.
pub struct CachedPreview {
    pub key: Vec<u64>,
    pub revision: u64,
    pub png: Arc<Vec<u8>>,
}

#[derive(Default)]
pub struct Published {
    pub status: FitStatus,
    pub set: Option<Arc<SolutionSet>>,
    /// Bumped whenever `set` changes.
    pub revision: u64,
}

pub struct Session {
    pub source: Arc<Image>,
    published: RwLock<Published>,
    last_access: Mutex<Instant>,
    pub preview: Mutex<Option<CachedPreview>>,
}

/// Why a session mutation was refused.
#[derive(Debug, PartialEq, Eq)]
pub enum Busy {
    JobRunning,
}

impl Session {
    fn new(source: Image) -> Self {
        Session {
            source: Arc::new(source),
            published: RwLock::new(Published::default()),
            last_access: Mutex::new(Instant::now()),
            preview: Mutex::new(None),
        }
    }

    pub fn touch(&self) {
        *self.last_access.lock() = Instant::now();
    }

    pub fn status(&self) -> FitStatus {
        self.published.read().status.clone()
    }

    /// The fitted set and its revision, if a fit has completed.
    pub fn fitted(&self) -> Option<(Arc<SolutionSet>, u64)> {
        let p = self.published.read();
        p.set.clone().map(|s| (s, p.revision))
    }

    pub fn is_running(&self) -> bool {
        self.published.read().status.state == JobState::Running
    }

    /// Replace the fitted set unless a job is running.
    pub fn replace_set(&self, set: SolutionSet) -> Result<(), Busy> {
        let mut p = self.published.write();
        if p.status.state == JobState::Running {
            return Err(Busy::JobRunning);
        }
        p.set = Some(Arc::new(set));
        p.revision += 1;
        Ok(())
    }

    /// Mark a job as running, refusing if one already is.
    fn begin_job(&self) -> Result<(), Busy> {
        let mut p = self.published.write();
        if p.status.state == JobState::Running {
            return Err(Busy::JobRunning);
        }
        p.status = FitStatus {
            state: JobState::Running,
            ..FitStatus::default()
        };
        Ok(())
    }

    fn report(&self, progress: f64, loss: f64, psnr: f64) {
        let mut p = self.published.write();
        let s = &mut p.status;
        s.progress = s.progress.max(progress.clamp(0.0, 1.0));
        s.loss = finite(loss);
        s.psnr = finite(psnr);
    }

    fn finish(&self, result: tonefit::Result<(SolutionSet, tonefit::FitTrace)>) {
        let mut p = self.published.write();
        match result {
            Ok((set, trace)) => {
                p.status.state = JobState::Done;
                p.status.progress = 1.0;
                p.status.loss = trace.final_loss().and_then(finite);
                p.status.psnr = trace.report.and_then(|r| finite(r.psnr));
                p.set = Some(Arc::new(set));
                p.revision += 1;
            }
            Err(e) => {
                p.status.state = JobState::Error;
                p.status.error = Some(e.to_string());
            }
        }
    }

    fn idle_since(&self) -> Instant {
        *self.last_access.lock()
    }
}

/// Run a fit on a blocking worker, publishing progress snapshots.
pub fn start_fit(
    session: &Arc<Session>,
    reference: Image,
    config: FitConfig,
) -> Result<tokio::task::JoinHandle<()>, Busy> {
    session.begin_job()?;
    let session = Arc::clone(session);
    Ok(tokio::task::spawn_blocking(move || {
        let source = Arc::clone(&session.source);
        let result = fit_with_observer(&source, &reference, &config, false, &mut |p| {
            session.report(p.fraction(), p.loss, p.psnr)
        });
        session.finish(result);
    }))
}

pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    ttl: Duration,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        SessionStore {
            sessions: RwLock::new(HashMap::new()),
            ttl,
        }
    }

    /// Store a new session under a fresh 128-bit random id.
    pub fn create(&self, source: Image) -> (String, Arc<Session>) {
        let session = Arc::new(Session::new(source));
        let mut map = self.sessions.write();
        loop {
            let id = format!("{:032x}", rand::random::<u128>());
            if !map.contains_key(&id) {
                map.insert(id.clone(), Arc::clone(&session));
                return (id, session);
            }
        }
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        let s = self.sessions.read().get(id).cloned()?;
        s.touch();
        Some(s)
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop sessions idle for longer than the store's TTL as of `now`.
    /// Sessions with a running job are kept. Returns how many were removed.
    pub fn evict_idle(&self, now: Instant) -> usize {
        let mut map = self.sessions.write();
        let before = map.len();
        map.retain(|_, s| s.is_running() || now.saturating_duration_since(s.idle_since()) <= self.ttl);
        before - map.len()
    }
}
