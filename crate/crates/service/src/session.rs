use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Serialize;
use tokio::time::Instant;

use crate::error::ServiceError;
use crate::model::Model;

pub const DEFAULT_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub concept_id: usize,
    pub delta: f64,
    pub propagate: bool,
    pub affected_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub sample: usize,
    pub row: Vec<f64>,
    pub history: Vec<HistoryEntry>,
}

impl Session {
    /// Apply one suppression to the working row and record it.
    pub fn intervene(
        &mut self,
        model: &Model,
        concept_id: usize,
        delta: f64,
        propagate: bool,
    ) -> Result<Vec<usize>, ServiceError> {
        let affected = model.propagation.apply(&mut self.row, concept_id, delta, propagate)?;
        self.history.push(HistoryEntry {
            concept_id,
            delta,
            propagate,
            affected_ids: affected.clone(),
        });
        Ok(affected)
    }

    pub fn reset(&mut self, model: &Model) {
        self.row = model.clean_row(self.sample);
        self.history.clear();
    }

    /// Rebuild the working row from the clean row and the history.
    pub fn replay(&self, model: &Model) -> Result<Vec<f64>, ServiceError> {
        let mut row = model.clean_row(self.sample);
        for h in &self.history {
            model.propagation.apply(&mut row, h.concept_id, h.delta, h.propagate)?;
        }
        Ok(row)
    }
}

struct Slot {
    session: Arc<tokio::sync::Mutex<Session>>,
    last_used: Instant,
}

/// In-memory sessions with idle eviction. The outer lock is only held for
/// map lookups; each session carries its own async lock so mutations on one
/// session are serialized without blocking the others.
pub struct SessionStore {
    ttl: Duration,
    slots: Mutex<HashMap<String, Slot>>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        SessionStore {
            ttl,
            slots: Mutex::new(HashMap::new()),
        }
    }

    pub fn insert(&self, session: Session) -> String {
        let id = session.id.clone();
        let mut slots = self.slots.lock().unwrap();
        slots.insert(
            id.clone(),
            Slot {
                session: Arc::new(tokio::sync::Mutex::new(session)),
                last_used: Instant::now(),
            },
        );
        id
    }

    pub fn get(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ServiceError> {
        let now = Instant::now();
        let mut slots = self.slots.lock().unwrap();
        match slots.get_mut(id) {
            Some(slot) if now.duration_since(slot.last_used) <= self.ttl => {
                slot.last_used = now;
                Ok(slot.session.clone())
            }
            Some(_) => {
                slots.remove(id);
                Err(ServiceError::NotFound(format!("session `{id}` (expired)")))
            }
            None => Err(ServiceError::NotFound(format!("session `{id}`"))),
        }
    }

    /// Drop every session idle for longer than the TTL; returns how many.
    pub fn evict_expired(&self) -> usize {
        let now = Instant::now();
        let mut slots = self.slots.lock().unwrap();
        let before = slots.len();
        slots.retain(|_, s| now.duration_since(s.last_used) <= self.ttl);
        before - slots.len()
    }

    pub fn len(&self) -> usize {
        self.slots.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }
}
