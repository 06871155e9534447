//! In-memory session registry. Each session sits behind its own lock, so
//! requests for one session are serialized while distinct sessions proceed
//! independently.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use crate::error::{ServiceError, ServiceResult};
use crate::journal::{self, Journal, JournalEvent};
use crate::session::{CreateSession, Session, StateView, TraceView};

#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    journal: Option<Mutex<Journal>>,
}

fn poisoned<T>(_: T) -> ServiceError {
    ServiceError::Internal("lock poisoned".into())
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds the sessions recorded in `path` (if it exists) and appends
    /// new events to it.
    pub fn with_journal(path: &Path) -> ServiceResult<Self> {
        let mut store = if path.exists() { Self::replay(path)? } else { Self::new() };
        store.journal = Some(Mutex::new(Journal::open(path)?));
        Ok(store)
    }

    /// Applies a journal to a fresh in-memory store.
    pub fn replay(path: &Path) -> ServiceResult<Self> {
        let store = Self::new();
        for (i, event) in journal::read_events(path)?.into_iter().enumerate() {
            let fail = |e: ServiceError| ServiceError::Journal {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            };
            match event {
                JournalEvent::Created { session_id, request } => {
                    let seed = request.seed.ok_or_else(|| fail(ServiceError::Malformed("missing seed".into())))?;
                    let session = Session::create(session_id.clone(), request, seed).map_err(fail)?;
                    store.insert(session_id, session).map_err(fail)?;
                }
                JournalEvent::Labeled {
                    session_id,
                    point_index,
                    class,
                } => {
                    let s = store.get(&session_id).map_err(fail)?;
                    let mut s = s.lock().map_err(poisoned)?;
                    s.submit_label(point_index, class).map_err(fail)?;
                }
            }
        }
        Ok(store)
    }

    fn insert(&self, id: String, session: Session) -> ServiceResult<()> {
        let mut map = self.sessions.write().map_err(poisoned)?;
        if map.contains_key(&id) {
            return Err(ServiceError::Conflict(format!("session {id} already exists")));
        }
        map.insert(id, Arc::new(Mutex::new(session)));
        Ok(())
    }

    fn get(&self, id: &str) -> ServiceResult<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .map_err(poisoned)?
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    fn log(&self, event: &JournalEvent) -> ServiceResult<()> {
        match &self.journal {
            Some(j) => j.lock().map_err(poisoned)?.append(event),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.sessions.read().map(|m| m.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn create(&self, request: CreateSession) -> ServiceResult<StateView> {
        let random = uuid::Uuid::new_v4();
        let id = random.simple().to_string();
        let fallback_seed = random.as_u64_pair().1;
        let session = Session::create(id.clone(), request, fallback_seed)?;
        self.log(&JournalEvent::Created {
            session_id: id.clone(),
            request: session.request().clone(),
        })?;
        let view = session.view();
        self.insert(id, session)?;
        Ok(view)
    }

    pub fn submit_label(&self, id: &str, point_index: usize, class: usize) -> ServiceResult<StateView> {
        let handle = self.get(id)?;
        let mut session = handle.lock().map_err(poisoned)?;
        // Work on a copy so a failed journal write leaves the session as is.
        let mut next = session.clone();
        next.submit_label(point_index, class)?;
        self.log(&JournalEvent::Labeled {
            session_id: id.to_string(),
            point_index,
            class,
        })?;
        *session = next;
        Ok(session.view())
    }

    pub fn state(&self, id: &str) -> ServiceResult<StateView> {
        let handle = self.get(id)?;
        let session = handle.lock().map_err(poisoned)?;
        Ok(session.view())
    }

    pub fn trace(&self, id: &str) -> ServiceResult<TraceView> {
        let handle = self.get(id)?;
        let session = handle.lock().map_err(poisoned)?;
        Ok(session.trace())
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().map(|m| m.keys().cloned().collect()).unwrap_or_default();
        ids.sort();
        ids
    }
}
