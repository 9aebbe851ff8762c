//! Line-record stats files.
//!
//! Layout:
//!
//! ```text
//! # idla-stats schema=1 version=0.1.0 seed=42 command=experiment
//! # created=1760000000
//! {"kind":"shape_stats",...}
//! ```
//!
//! The `created` line is the only one that differs between identical runs.

use std::io::{self, BufRead, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{
    AbelianComparison, ExitLawComparison, LemmaEstimate, OccupationComparison, ShapeStats,
};
use crate::idla::{Stage, StageTrace};
use crate::metric::ConditionReport;

pub const STATS_SCHEMA: u32 = 1;
const MAGIC: &str = "# idla-stats";
const CREATED: &str = "# created=";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    ShapeStats(ShapeStats),
    LemmaEstimate(LemmaEstimate),
    ConditionReport(ConditionReport),
    ExitLaw(ExitLawComparison),
    Abelian(AbelianComparison),
    Occupation(OccupationComparison),
    StageTrace(StageTrace),
    Stage(StageRow),
    Simulation(SimulationSummary),
}

/// Outcome of one simulated aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub replica: u64,
    pub staged: bool,
    pub released: usize,
    pub settled: usize,
    pub paused: usize,
    pub inradius: f64,
    pub outradius: f64,
}

/// One row of a stage trace: `(j, n_j, k_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub replica: u64,
    pub j: usize,
    pub radius: f64,
    pub paused: usize,
}

impl StageRow {
    pub fn from_stage(replica: u64, s: &Stage) -> Self {
        Self {
            replica,
            j: s.j,
            radius: s.radius,
            paused: s.paused,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsHeader {
    pub schema: u32,
    pub version: String,
    pub seed: u64,
    pub command: String,
}

impl StatsHeader {
    pub fn new(seed: u64, command: &str) -> Self {
        Self {
            schema: STATS_SCHEMA,
            version: crate::VERSION.to_string(),
            seed,
            command: command.to_string(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{MAGIC} schema={} version={} seed={} command={}",
            self.schema, self.version, self.seed, self.command
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let rest = line
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Parse(format!("not a stats header: {line:?}")))?;
        let mut schema = None;
        let mut version = None;
        let mut seed = None;
        let mut command = None;
        for field in rest.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field {field:?}")))?;
            match k {
                "schema" => schema = v.parse().ok(),
                "version" => version = Some(v.to_string()),
                "seed" => seed = v.parse().ok(),
                "command" => command = Some(v.to_string()),
                _ => {}
            }
        }
        match (schema, version, seed, command) {
            (Some(schema), Some(version), Some(seed), Some(command)) => Ok(Self {
                schema,
                version,
                seed,
                command,
            }),
            _ => Err(Error::Parse(format!("incomplete stats header: {line:?}"))),
        }
    }
}

/// Writes a header, then one JSON record per line.
pub struct StatsWriter<W: Write> {
    out: W,
}

impl<W: Write> StatsWriter<W> {
    pub fn new(out: W, header: &StatsHeader) -> io::Result<Self> {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self::with_timestamp(out, header, created)
    }

    pub fn with_timestamp(mut out: W, header: &StatsHeader, created: u64) -> io::Result<Self> {
        writeln!(out, "{}", header.line())?;
        writeln!(out, "{CREATED}{created}")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, record: &Record) -> io::Result<()> {
        let line = serde_json::to_string(record).map_err(io::Error::other)?;
        writeln!(self.out, "{line}")
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsFile {
    pub header: StatsHeader,
    pub created: Option<u64>,
    pub records: Vec<Record>,
}

pub fn read_stats<R: BufRead>(input: R) -> Result<StatsFile> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Parse("empty stats file".into()))?
        .map_err(|e| Error::Parse(e.to_string()))?;
    let header = StatsHeader::parse(&first)?;
    let mut created = None;
    let mut records = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::Parse(e.to_string()))?;
        if let Some(ts) = line.strip_prefix(CREATED) {
            created = ts.parse().ok();
        } else if !line.is_empty() && !line.starts_with('#') {
            records.push(serde_json::from_str(&line).map_err(|e| Error::Parse(e.to_string()))?);
        }
    }
    Ok(StatsFile {
        header,
        created,
        records,
    })
}

/// Every line except the timestamp, for reproducibility comparisons.
pub fn stable_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with(CREATED)).collect()
}
