use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::ir::MemOpId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemEvent {
    pub op: MemOpId,
    pub kind: AccessKind,
    pub addr: u32,
    pub data: i32,
    pub cycle: u64,
}

/// Memory events grouped by static memory operation, each list in
/// execution order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemTrace {
    pub ops: BTreeMap<MemOpId, Vec<MemEvent>>,
}

impl MemTrace {
    pub fn push(&mut self, ev: MemEvent) {
        self.ops.entry(ev.op).or_default().push(ev);
    }

    pub fn events(&self, op: MemOpId) -> &[MemEvent] {
        self.ops.get(&op).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.ops.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All events ordered by cycle, then op id.
    pub fn chronological(&self) -> Vec<MemEvent> {
        let mut all: Vec<MemEvent> = self.ops.values().flatten().copied().collect();
        all.sort_by_key(|e| (e.cycle, e.op));
        all
    }

    /// Cycles of the write events of one op.
    pub fn write_cycles(&self, op: MemOpId) -> Vec<u64> {
        self.events(op)
            .iter()
            .filter(|e| e.kind == AccessKind::Write)
            .map(|e| e.cycle)
            .collect()
    }

    /// One JSON object per line: `{"op","kind","addr","data","cycle"}`.
    pub fn write_json_lines(&self, mut out: impl Write) -> io::Result<()> {
        for e in self.chronological() {
            let line = serde_json::json!({
                "op": e.op.0,
                "kind": e.kind,
                "addr": e.addr,
                "data": e.data as u32,
                "cycle": e.cycle,
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}
