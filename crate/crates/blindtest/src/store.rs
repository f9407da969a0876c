use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::session::{submit_response, Ack, BlindTestSession, Label};
use crate::{BlindTestError, Result};

/// One line of a session's append-only log.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Create { session: BlindTestSession },
    Response { item_id: String, label: Label },
}

/// A session plus its open log.
pub struct Entry {
    pub session: BlindTestSession,
    log: Option<File>,
}

impl Entry {
    fn append(&mut self, event: &Event) -> Result<()> {
        if let Some(f) = &mut self.log {
            let mut line = serde_json::to_vec(event)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        Ok(())
    }

    /// Record a response, logging it before it becomes visible.
    pub fn respond(&mut self, item_id: &str, label: Label) -> Result<Ack> {
        let mut probe = self.session.clone();
        let ack = submit_response(&mut probe, item_id, label)?;
        self.append(&Event::Response { item_id: item_id.to_string(), label })?;
        self.session = probe;
        Ok(ack)
    }
}

/// Sessions by id. Each session sits behind its own mutex, so writes to one
/// session are serialized while other sessions proceed independently.
#[derive(Default)]
pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Persist sessions as `<dir>/<session_id>.jsonl`, replaying any logs already there.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let store = Self { dir: Some(dir.to_path_buf()), sessions: RwLock::default() };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let (session, intact) = replay(&path)?;
            let log = OpenOptions::new().append(true).open(&path)?;
            log.set_len(intact)?;
            let id = session.session_id.clone();
            store.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(Entry { session, log: Some(log) })));
        }
        Ok(store)
    }

    pub fn insert(&self, session: BlindTestSession) -> Result<()> {
        let id = session.session_id.clone();
        let mut map = self.sessions.write().unwrap();
        if map.contains_key(&id) {
            return Err(BlindTestError::DuplicateSession(id));
        }
        let log = match &self.dir {
            Some(dir) => Some(OpenOptions::new().create_new(true).append(true).open(dir.join(format!("{id}.jsonl")))?),
            None => None,
        };
        let mut entry = Entry { session, log };
        let event = Event::Create { session: entry.session.clone() };
        entry.append(&event)?;
        map.insert(id, Arc::new(Mutex::new(entry)));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Entry>>> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| BlindTestError::UnknownSession(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rebuild a session from its log. A torn final line (crash mid-write) is
/// ignored; the second value is the byte length of the intact prefix.
pub fn replay(path: &Path) -> Result<(BlindTestSession, u64)> {
    let text = std::fs::read_to_string(path)?;
    let corrupt = || BlindTestError::CorruptLog(path.display().to_string());
    let mut session: Option<BlindTestSession> = None;
    let mut intact = 0usize;
    for line in text.split_inclusive('\n') {
        let event: Event = match serde_json::from_str(line.trim_end()) {
            Ok(e) => e,
            Err(_) if !line.ends_with('\n') => break,
            Err(e) => return Err(e.into()),
        };
        match (event, &mut session) {
            (Event::Create { session: s }, None) => session = Some(s),
            (Event::Response { item_id, label }, Some(s)) => {
                submit_response(s, &item_id, label)?;
            }
            _ => return Err(corrupt()),
        }
        intact += line.len();
    }
    Ok((session.ok_or_else(corrupt)?, intact as u64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{create_session, SessionConfig};
    use gist_core::corpus::generate_toy_corpus;

    #[test]
    fn log_replay_restores_responses() {
        let dir = tempfile::tempdir().unwrap();
        let pool = generate_toy_corpus(20, 32, 1, 1);
        let sess = create_session("s1", &pool, &pool, SessionConfig { n_real: 3, n_synth: 3, n_orientation: 2, seed: 4 }, 7).unwrap();
        let ids: Vec<String> = sess.items.iter().map(|i| i.item_id.clone()).collect();
        {
            let store = SessionStore::open(dir.path()).unwrap();
            store.insert(sess.clone()).unwrap();
            let entry = store.get("s1").unwrap();
            let mut e = entry.lock().unwrap();
            e.respond(&ids[0], Label::Real).unwrap();
            e.respond(&ids[1], Label::Synthetic).unwrap();
            assert!(e.respond(&ids[1], Label::Real).is_err());
            assert!(matches!(store.insert(sess.clone()), Err(BlindTestError::DuplicateSession(_))));
        }
        // simulate a crash mid-append
        let path = dir.path().join("s1.jsonl");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"event\":\"respo").unwrap();
        drop(f);
        let store = SessionStore::open(dir.path()).unwrap();
        let entry = store.get("s1").unwrap();
        let e = entry.lock().unwrap();
        assert_eq!(e.session.responses.len(), 2);
        assert_eq!(e.session.responses[&ids[1]], Label::Synthetic);
        assert_eq!(e.session.items, sess.items);
        drop(e);
        let ack = entry.lock().unwrap().respond(&ids[2], Label::Real).unwrap();
        assert_eq!(ack.remaining, 3);
        assert_eq!(replay(&path).unwrap().0.responses.len(), 3);
    }
}
