//! Pattern JSONL and run reports.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::enumerate::{Counters, MiningRun, PatternSet, PhaseTimings};
use crate::error::{OdtError, Result};
use crate::model::{EvaluatedTriple, OdtTriple, RegionId, Slot, TimeRange};

/// One JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRecord {
    pub level: usize,
    #[serde(rename = "O")]
    pub origins: Vec<RegionId>,
    #[serde(rename = "D")]
    pub dests: Vec<RegionId>,
    #[serde(rename = "T")]
    pub time: [Slot; 2],
    pub cnt: u64,
    pub card: u64,
    pub ratio: f64,
}

impl From<&EvaluatedTriple> for PatternRecord {
    fn from(e: &EvaluatedTriple) -> Self {
        let t = e.triple.time();
        PatternRecord {
            level: e.level(),
            origins: e.triple.origins().to_vec(),
            dests: e.triple.dests().to_vec(),
            time: [t.start, t.end],
            cnt: e.cnt,
            card: e.card,
            ratio: e.ratio(),
        }
    }
}

impl PatternRecord {
    pub fn triple(&self) -> OdtTriple {
        OdtTriple::new(
            self.origins.clone(),
            self.dests.clone(),
            TimeRange::new(self.time[0], self.time[1]),
        )
    }
}

/// Writes records level by level, each level in canonical-key order.
pub fn write_patterns<'a, W, I>(mut w: W, patterns: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a EvaluatedTriple>,
{
    for e in patterns {
        serde_json::to_writer(&mut w, &PatternRecord::from(e))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_pattern_set<W: Write>(w: W, set: &PatternSet) -> Result<()> {
    write_patterns(w, set.iter())
}

pub fn read_patterns<R: BufRead>(r: R) -> Result<Vec<PatternRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| OdtError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Machine-readable summary of one mining run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub algorithm: String,
    pub s_a: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_r: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub minsup: u64,
    pub n_atomic_triples: usize,
    pub n_atomic_patterns: usize,
    /// Pattern count per level.
    pub levels: BTreeMap<usize, usize>,
    pub total_patterns: usize,
    pub counters: Counters,
    pub timings: PhaseTimings,
    pub mining_ms: f64,
    pub threads: usize,
}

impl RunReport {
    pub fn new(algorithm: impl Into<String>, s_a: String, run: &MiningRun, threads: usize) -> Self {
        RunReport {
            algorithm: algorithm.into(),
            s_a,
            s_r: None,
            k: None,
            minsup: run.minsup,
            n_atomic_triples: run.n_atomic_triples,
            n_atomic_patterns: run.n_atomic_patterns,
            levels: run
                .patterns
                .levels
                .iter()
                .map(|l| (l.level, l.patterns.len()))
                .collect(),
            total_patterns: run.patterns.total(),
            counters: run.counters,
            timings: run.timings,
            mining_ms: ms(run.timings.total()),
            threads,
        }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        Ok(serde_json::to_writer_pretty(w, self)?)
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_line_shape() {
        let e = EvaluatedTriple::new(OdtTriple::new(vec![0, 1], vec![3], TimeRange::single(18)), 2);
        let mut buf = Vec::new();
        write_patterns(&mut buf, [&e]).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            line,
            "{\"level\":4,\"O\":[0,1],\"D\":[3],\"T\":[18,18],\"cnt\":2,\"card\":2,\"ratio\":1.0}\n"
        );
        let back = read_patterns(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].triple(), e.triple);
    }

    #[test]
    fn bad_line_reports_its_number() {
        let err = read_patterns("\n{\"level\":3}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, OdtError::Parse { line: 2, .. }));
    }
}
