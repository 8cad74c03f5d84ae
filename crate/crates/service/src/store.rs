use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant, SystemTime};

use msm_core::analysis::{BindReport, Bound, Mapping, ModelKind};
use msm_core::data::Dataset;

/// A validated mapping together with the data it produced.
#[derive(Debug)]
pub struct Binding {
    pub mapping: Mapping,
    pub bound: Bound,
    pub report: BindReport,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub kind: ModelKind,
    pub dataset: Arc<Dataset>,
    pub binding: Option<Arc<Binding>>,
    pub created_at: SystemTime,
    last_access: Instant,
}

/// In-memory sessions with idle expiry.
#[derive(Debug)]
pub struct Store {
    sessions: RwLock<HashMap<String, Session>>,
    ttl: Duration,
}

impl Store {
    pub fn new(ttl: Duration) -> Store {
        Store {
            sessions: RwLock::new(HashMap::new()),
            ttl,
        }
    }

    pub fn insert(&self, kind: ModelKind, dataset: Dataset) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let s = Session {
            kind,
            dataset: Arc::new(dataset),
            binding: None,
            created_at: SystemTime::now(),
            last_access: Instant::now(),
        };
        self.sessions
            .write()
            .expect("session lock")
            .insert(id.clone(), s);
        id
    }

    /// Snapshot of a live session; refreshes its idle clock.
    pub fn get(&self, id: &str) -> Option<Session> {
        let mut map = self.sessions.write().expect("session lock");
        let expired = map.get(id).map(|s| s.last_access.elapsed() > self.ttl)?;
        if expired {
            map.remove(id);
            return None;
        }
        let s = map.get_mut(id)?;
        s.last_access = Instant::now();
        Some(s.clone())
    }

    /// Replaces the binding if the session still exists.
    pub fn set_binding(&self, id: &str, binding: Binding) -> bool {
        let mut map = self.sessions.write().expect("session lock");
        match map.get_mut(id) {
            Some(s) => {
                s.binding = Some(Arc::new(binding));
                s.last_access = Instant::now();
                true
            }
            None => false,
        }
    }

    pub fn remove(&self, id: &str) -> bool {
        self.sessions
            .write()
            .expect("session lock")
            .remove(id)
            .is_some()
    }

    /// Drops idle sessions; returns how many were removed.
    pub fn evict_expired(&self) -> usize {
        let mut map = self.sessions.write().expect("session lock");
        let before = map.len();
        map.retain(|_, s| s.last_access.elapsed() <= self.ttl);
        before - map.len()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset() -> Dataset {
        msm_core::data::parse_csv(b"time,status\n1,1\n", None).unwrap()
    }

    #[test]
    fn expiry() {
        let store = Store::new(Duration::from_millis(30));
        let id = store.insert(ModelKind::Survival, dataset());
        assert!(store.get(&id).is_some());
        std::thread::sleep(Duration::from_millis(60));
        assert_eq!(store.evict_expired(), 1);
        assert!(store.get(&id).is_none());
    }

    #[test]
    fn ids_are_unique() {
        let store = Store::new(Duration::from_secs(60));
        let a = store.insert(ModelKind::Survival, dataset());
        let b = store.insert(ModelKind::Survival, dataset());
        assert_ne!(a, b);
        assert_eq!(store.len(), 2);
    }
}
