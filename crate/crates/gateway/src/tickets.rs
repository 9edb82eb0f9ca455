//! Hospital-side quarantine: tickets kept under their own storage root, one
//! JSON file per ticket, with a lock per ticket so edits never interleave.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use enclave_gate_core::quarantine::TicketSummary;
use enclave_gate_core::QuarantineTicket;

pub type TicketHandle = Arc<Mutex<QuarantineTicket>>;

pub struct TicketStore {
    dir: Option<PathBuf>,
    tickets: RwLock<BTreeMap<String, TicketHandle>>,
}

impl TicketStore {
    pub fn in_memory() -> Self {
        TicketStore { dir: None, tickets: RwLock::new(BTreeMap::new()) }
    }

    /// Opens `root/tickets`, loading any tickets already there.
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = root.into().join("tickets");
        fs::create_dir_all(&dir)?;
        let mut tickets = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let ticket: QuarantineTicket = serde_json::from_slice(&fs::read(&path)?)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
                tickets.insert(ticket.id.clone(), Arc::new(Mutex::new(ticket)));
            }
        }
        Ok(TicketStore { dir: Some(dir), tickets: RwLock::new(tickets) })
    }

    /// Writes a ticket's current state to disk (no-op in memory).
    pub fn persist(&self, ticket: &QuarantineTicket) -> io::Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(format!("{}.json", ticket.id));
        let tmp = dir.join(format!(".{}.tmp", ticket.id));
        fs::write(&tmp, serde_json::to_vec_pretty(ticket).expect("tickets serialize"))?;
        fs::rename(tmp, path)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.tickets.read().unwrap_or_else(|p| p.into_inner()).contains_key(id)
    }

    /// Stores a new ticket. An existing ticket with the same id (the same
    /// payload submitted again) is kept as it is. Returns whether it was new.
    pub fn insert(&self, ticket: QuarantineTicket) -> io::Result<bool> {
        let mut tickets = self.tickets.write().unwrap_or_else(|p| p.into_inner());
        if tickets.contains_key(&ticket.id) {
            return Ok(false);
        }
        self.persist(&ticket)?;
        tickets.insert(ticket.id.clone(), Arc::new(Mutex::new(ticket)));
        Ok(true)
    }

    pub fn get(&self, id: &str) -> Option<TicketHandle> {
        self.tickets.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    pub fn summaries(&self) -> Vec<TicketSummary> {
        let handles: Vec<TicketHandle> = self.tickets.read().unwrap_or_else(|p| p.into_inner()).values().cloned().collect();
        handles.iter().map(|h| h.lock().unwrap_or_else(|p| p.into_inner()).summary()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use enclave_gate_core::{deid, parse_resource, RuleSet};

    fn ticket() -> QuarantineTicket {
        let r = parse_resource(r#"{"resourceType":"DiagnosticReport","id":"d","conclusion":"call 030-555-1234"}"#, None).unwrap();
        let findings = deid::blocking_findings(&r, &RuleSet::standard());
        QuarantineTicket::new(r, findings)
    }

    #[test]
    fn tickets_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let t = ticket();
        {
            let store = TicketStore::open(dir.path()).unwrap();
            assert!(store.insert(t.clone()).unwrap());
            assert!(!store.insert(t.clone()).unwrap());
        }
        let store = TicketStore::open(dir.path()).unwrap();
        assert_eq!(*store.get(&t.id).unwrap().lock().unwrap(), t);
        assert_eq!(store.summaries().len(), 1);
    }
}
