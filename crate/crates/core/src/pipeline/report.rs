use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{OptOutcome, SampleOutcome};

/// Counts of one sample → optimize run. Timings are kept out of the
/// serialized report so reruns produce identical files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub attempted: usize,
    pub grammatical: usize,
    pub ungrammatical: BTreeMap<String, usize>,
    /// Grammatical samples that lost at least one edge to decoding or filtering.
    pub filter_modified: usize,
    pub removed_edges: usize,
    pub feasible: usize,
    pub degenerate_rejected: usize,
    /// Every rejection of a grammatical sample, by reason code.
    pub rejections: BTreeMap<String, usize>,
    pub with_overlaps: usize,
    pub with_holes: usize,
    pub dropped_descriptive: usize,
    pub artifacts: Vec<String>,
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn record_samples(&mut self, samples: &[SampleOutcome]) {
        for s in samples {
            self.attempted += 1;
            match s {
                SampleOutcome::Ok(_) => self.grammatical += 1,
                SampleOutcome::Ungrammatical { reason, .. } => {
                    *self.ungrammatical.entry(reason.clone()).or_default() += 1
                }
            }
        }
    }

    pub fn record_optimization(&mut self, outcomes: &[OptOutcome]) {
        for o in outcomes {
            match o {
                OptOutcome::Accepted {
                    modified,
                    removed_edges,
                    dropped_descriptive,
                    overlaps,
                    holes,
                    ..
                } => {
                    self.feasible += 1;
                    self.filter_modified += *modified as usize;
                    self.removed_edges += removed_edges;
                    self.dropped_descriptive += dropped_descriptive;
                    self.with_overlaps += *overlaps as usize;
                    self.with_holes += *holes as usize;
                }
                OptOutcome::Rejected {
                    code,
                    modified,
                    removed_edges,
                    ..
                } => {
                    self.filter_modified += *modified as usize;
                    self.removed_edges += removed_edges;
                    if code.starts_with("degenerate") {
                        self.degenerate_rejected += 1;
                    }
                    *self.rejections.entry(code.clone()).or_default() += 1;
                }
            }
        }
    }

    /// Checks that every sample is accounted for exactly once.
    pub fn check(&self) -> Result<(), String> {
        let ungrammatical: usize = self.ungrammatical.values().sum();
        if self.attempted != self.grammatical + ungrammatical {
            return Err(format!(
                "attempted {} != grammatical {} + ungrammatical {ungrammatical}",
                self.attempted, self.grammatical
            ));
        }
        let rejected: usize = self.rejections.values().sum();
        if self.grammatical != self.feasible + rejected {
            return Err(format!(
                "grammatical {} != feasible {} + rejected {rejected}",
                self.grammatical, self.feasible
            ));
        }
        let degenerate: usize = self
            .rejections
            .iter()
            .filter(|(k, _)| k.starts_with("degenerate"))
            .map(|(_, v)| v)
            .sum();
        if degenerate != self.degenerate_rejected {
            return Err(format!(
                "degenerate count {} != {degenerate}",
                self.degenerate_rejected
            ));
        }
        if self.filter_modified > self.grammatical {
            return Err("more modified samples than grammatical ones".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    pub fn timings_json(&self) -> String {
        serde_json::to_string_pretty(&self.timings).expect("timings serialize") + "\n"
    }
}
