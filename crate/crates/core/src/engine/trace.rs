//! Timeline events and their CSV form.

use std::fmt;
use std::io::Write;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Resource {
    Loader,
    Bank(u32),
    /// Data controllers feeding A, B and draining C.
    CtrlA,
    CtrlB,
    CtrlC,
    PeArray,
    Writeback,
    Cpu,
    Vector,
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resource::Loader => f.write_str("loader"),
            Resource::Bank(i) => write!(f, "bank{i}"),
            Resource::CtrlA => f.write_str("ctrl_a"),
            Resource::CtrlB => f.write_str("ctrl_b"),
            Resource::CtrlC => f.write_str("ctrl_c"),
            Resource::PeArray => f.write_str("pe_array"),
            Resource::Writeback => f.write_str("writeback"),
            Resource::Cpu => f.write_str("cpu"),
            Resource::Vector => f.write_str("vector"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    Stop,
    Stall,
    Issue,
    Retire,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineEvent {
    pub cycle: u64,
    pub resource: Resource,
    pub kind: EventKind,
    /// Operation and tile, e.g. `op3:m0:n1`.
    pub tag: String,
}

#[derive(Serialize)]
struct Row<'a> {
    cycle: u64,
    resource: String,
    kind: EventKind,
    tag: &'a str,
}

/// Stable sort by cycle, then resource name.
pub fn sort_events(events: &mut [TimelineEvent]) {
    events.sort_by_cached_key(|e| (e.cycle, e.resource.to_string()));
}

/// Writes `events` as `cycle,resource,kind,tag` CSV in canonical order.
pub fn emit_trace<W: Write>(events: &[TimelineEvent], sink: W) -> Result<(), csv::Error> {
    let mut sorted = events.to_vec();
    sort_events(&mut sorted);
    let mut w = csv::Writer::from_writer(sink);
    if sorted.is_empty() {
        w.write_record(["cycle", "resource", "kind", "tag"])?;
    }
    for e in &sorted {
        w.serialize(Row {
            cycle: e.cycle,
            resource: e.resource.to_string(),
            kind: e.kind,
            tag: &e.tag,
        })?;
    }
    w.flush()?;
    Ok(())
}
