//! Corpus statistics and the normalized ŝ comparison.

mod compute;

pub use compute::{align_stats, compute_stats, rnn_graph, shape_stats, topo_stats, RNN_RADIUS};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::LayoutMode;

/// Bins of every statistic histogram.
pub const BINS: usize = 32;
/// Ratio used when the reference distance is zero but ours is not.
pub const DEFAULT_CAP: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("histogram edges differ: [{0}, {1}]x{2} vs [{3}, {4}]x{5}")]
    Edges(f64, f64, usize, f64, f64, usize),
    #[error("scalar statistic lengths differ: {0} vs {1}")]
    Length(usize, usize),
    #[error("statistic {0} is a histogram in one set and scalar in the other")]
    Kind(String),
    #[error("statistic sets differ at position {index}: {a} vs {b}")]
    Names { index: usize, a: String, b: String },
    #[error("layout {0} does not match the corpus mode")]
    Mode(usize),
    #[error("layout {layout} uses type {elem_type} outside the schema")]
    Type { layout: usize, elem_type: usize },
}

/// Fixed-edge histogram. `sum` keeps the exact sum of the added samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<f64>,
    pub sum: f64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        assert!(hi > lo && bins > 0);
        Self {
            lo,
            hi,
            counts: vec![0.0; bins],
            sum: 0.0,
        }
    }

    /// The standard 32-bin schema over `[lo, hi]`.
    pub fn schema(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, BINS)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    /// Bin of `v`; values outside the range land in the end bins.
    pub fn bin_of(&self, v: f64) -> usize {
        let k = ((v - self.lo) / self.bin_width()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.bins() - 1)
        }
    }

    pub fn add(&mut self, v: f64) {
        let k = self.bin_of(v);
        self.counts[k] += 1.0;
        self.sum += v;
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn mean(&self) -> Option<f64> {
        let t = self.total();
        (t > 0.0).then(|| self.sum / t)
    }

    /// Unit-mass version of the counts; all zeros when empty.
    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total();
        if t == 0.0 {
            return vec![0.0; self.bins()];
        }
        self.counts.iter().map(|c| c / t).collect()
    }

    pub fn same_edges(&self, other: &Histogram) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.bins() == other.bins()
    }
}

/// Earth mover's distance of the normalized histograms: the integrated
/// absolute CDF difference. An empty histogram has an all-zero CDF.
pub fn emd(a: &Histogram, b: &Histogram) -> Result<f64, SchemaError> {
    if !a.same_edges(b) {
        return Err(SchemaError::Edges(
            a.lo,
            a.hi,
            a.bins(),
            b.lo,
            b.hi,
            b.bins(),
        ));
    }
    let (pa, pb) = (a.normalized(), b.normalized());
    let (mut ca, mut cb, mut d) = (0.0, 0.0, 0.0);
    for k in 0..pa.len() {
        ca += pa[k];
        cb += pb[k];
        d += (ca - cb).abs();
    }
    Ok(d * a.bin_width())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Topological,
    Shape,
    Alignment,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Topological, Family::Shape, Family::Alignment];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StatValue {
    Histogram(Histogram),
    /// Compared by Euclidean distance.
    Scalars(Vec<f64>),
}

impl StatValue {
    pub fn distance(&self, other: &StatValue, name: &str) -> Result<f64, SchemaError> {
        match (self, other) {
            (StatValue::Histogram(a), StatValue::Histogram(b)) => emd(a, b),
            (StatValue::Scalars(a), StatValue::Scalars(b)) => {
                if a.len() != b.len() {
                    return Err(SchemaError::Length(a.len(), b.len()));
                }
                Ok(a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt())
            }
            _ => Err(SchemaError::Kind(name.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub name: String,
    pub family: Family,
    pub value: StatValue,
}

/// Raw statistics of one corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatSet {
    pub mode: LayoutMode,
    pub n_layouts: usize,
    pub stats: Vec<Stat>,
}

impl StatSet {
    pub fn get(&self, name: &str) -> Option<&StatValue> {
        self.stats.iter().find(|s| s.name == name).map(|s| &s.value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub family: Family,
    /// Distance of the reference method to the ground truth.
    pub numerator: f64,
    /// Distance of our method to the ground truth.
    pub denominator: f64,
    pub ratio: f64,
    pub capped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub s_t: f64,
    pub s_r: f64,
    pub s_a: f64,
    pub s_avg: f64,
    pub cap: f64,
    pub capped: usize,
    pub terms: Vec<Term>,
}

impl Scores {
    pub fn family(&self, f: Family) -> f64 {
        match f {
            Family::Topological => self.s_t,
            Family::Shape => self.s_r,
            Family::Alignment => self.s_a,
        }
    }
}

/// Per statistic `d(theirs, gt) / d(ours, gt)`, averaged per family; the
/// overall score averages the three families. `0/0` counts as 1 and
/// `x/0` as `cap`.
pub fn aggregate(
    ours: &StatSet,
    theirs: &StatSet,
    gt: &StatSet,
    cap: f64,
) -> Result<Scores, SchemaError> {
    for other in [theirs, gt] {
        if other.stats.len() != ours.stats.len() {
            return Err(SchemaError::Length(ours.stats.len(), other.stats.len()));
        }
        for (index, (a, b)) in ours.stats.iter().zip(&other.stats).enumerate() {
            if a.name != b.name {
                return Err(SchemaError::Names {
                    index,
                    a: a.name.clone(),
                    b: b.name.clone(),
                });
            }
        }
    }
    let mut terms = Vec::with_capacity(ours.stats.len());
    for ((o, t), g) in ours.stats.iter().zip(&theirs.stats).zip(&gt.stats) {
        let numerator = t.value.distance(&g.value, &o.name)?;
        let denominator = o.value.distance(&g.value, &o.name)?;
        let (ratio, capped) = if denominator > 0.0 {
            (numerator / denominator, false)
        } else if numerator == 0.0 {
            (1.0, false)
        } else {
            (cap, true)
        };
        terms.push(Term {
            name: o.name.clone(),
            family: o.family,
            numerator,
            denominator,
            ratio,
            capped,
        });
    }
    let mean = |f: Family| {
        let r: Vec<f64> = terms
            .iter()
            .filter(|t| t.family == f)
            .map(|t| t.ratio)
            .collect();
        if r.is_empty() {
            1.0
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    };
    let (s_t, s_r, s_a) = (
        mean(Family::Topological),
        mean(Family::Shape),
        mean(Family::Alignment),
    );
    Ok(Scores {
        s_t,
        s_r,
        s_a,
        s_avg: (s_t + s_r + s_a) / 3.0,
        cap,
        capped: terms.iter().filter(|t| t.capped).count(),
        terms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub scores: Scores,
    pub ours: StatSet,
    pub theirs: StatSet,
    pub gt: StatSet,
}

impl StatReport {
    pub fn new(ours: StatSet, theirs: StatSet, gt: StatSet, cap: f64) -> Result<Self, SchemaError> {
        let scores = aggregate(&ours, &theirs, &gt, cap)?;
        Ok(Self {
            scores,
            ours,
            theirs,
            gt,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Plain-text table with the `ŝ_t ŝ_r ŝ_a ŝ_avg` columns.
    pub fn table(&self) -> String {
        let s = &self.scores;
        let mut out = String::new();
        let _ = writeln!(out, "{:>8} {:>8} {:>8} {:>8}", "s_t", "s_r", "s_a", "s_avg");
        let _ = writeln!(
            out,
            "{:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            s.s_t, s.s_r, s.s_a, s.s_avg
        );
        let d = |f: Family| {
            let d: Vec<f64> = s
                .terms
                .iter()
                .filter(|t| t.family == f)
                .map(|t| t.denominator)
                .collect();
            d.iter().sum::<f64>() / d.len().max(1) as f64
        };
        let _ = writeln!(
            out,
            "{:>8.4} {:>8.4} {:>8.4} {:>8} mean d(ours, gt)",
            d(Family::Topological),
            d(Family::Shape),
            d(Family::Alignment),
            ""
        );
        if s.capped > 0 {
            let _ = writeln!(out, "{} terms capped at {}", s.capped, s.cap);
        }
        out
    }
}
