use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Aggregate result of a simulated interval.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub total_cycles: u64,
    pub pe_busy_cycles: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub mac_count: u64,
    /// `mac_count / (total_cycles * peak MACs per cycle)`.
    pub utilization: f64,
    /// Busy cycles over `total_cycles`, keyed by resource name.
    pub busy_fractions: BTreeMap<String, f64>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Running busy-cycle counters per resource.
#[derive(Debug, Clone, Default)]
pub(crate) struct BusyCounters {
    pub busy: BTreeMap<String, u64>,
}

impl BusyCounters {
    pub fn add(&mut self, resource: impl ToString, cycles: u64) {
        *self.busy.entry(resource.to_string()).or_default() += cycles;
    }

    pub fn fractions(&self, total: u64) -> BTreeMap<String, f64> {
        self.busy
            .iter()
            .map(|(k, &v)| {
                let f = if total == 0 { 0.0 } else { v as f64 / total as f64 };
                (k.clone(), f)
            })
            .collect()
    }
}
