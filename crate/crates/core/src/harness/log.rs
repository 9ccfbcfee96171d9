//! Line-delimited JSON interaction logs.
//!
//! The first line is a [`LogHeader`]; every following line is one
//! [`InteractionLogRecord`] with its fields in declaration order. Strings use
//! standard JSON escaping.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::LoggingPolicy;
use crate::error::{Error, Result};
use crate::eval::SessionRecord;
use crate::types::{Action, Context, ExposureState, Transition};

pub const LOG_FORMAT: &str = "liveroom-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub n_types: usize,
    pub sessions: u64,
    pub logging_policy: LoggingPolicy,
}

impl LogHeader {
    pub fn new(config_digest: String, seed: u64, n_types: usize, sessions: u64, logging_policy: LoggingPolicy) -> Self {
        Self {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            config_digest,
            seed,
            n_types,
            sessions,
            logging_policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionLogRecord {
    pub session_id: u64,
    pub step: u32,
    pub user_id: String,
    pub store_id: String,
    pub state: Vec<u32>,
    pub action: usize,
    pub reward: f64,
    pub deal: bool,
    pub next_state: Vec<u32>,
    pub done: bool,
    pub timestamp: u64,
}

impl InteractionLogRecord {
    pub fn new(session_id: u64, step: u32, t: &Transition, deal: bool) -> Self {
        Self {
            session_id,
            step,
            user_id: t.context.user_id.clone(),
            store_id: t.context.store_id.clone(),
            state: t.state.counts().to_vec(),
            action: t.action.index(),
            reward: t.reward,
            deal,
            next_state: t.next_state.counts().to_vec(),
            done: t.done,
            timestamp: t.timestamp,
        }
    }

    pub fn transition(&self) -> Result<Transition> {
        let t = Transition {
            context: Context::new(self.user_id.clone(), self.store_id.clone())?,
            state: ExposureState::from_counts(self.state.clone()),
            action: Action(self.action),
            reward: self.reward,
            next_state: ExposureState::from_counts(self.next_state.clone()),
            done: self.done,
            timestamp: self.timestamp,
        };
        t.validate()?;
        Ok(t)
    }

    /// Transition invariants plus: deals only follow clicks.
    pub fn validate(&self) -> Result<()> {
        self.transition()?;
        if self.deal && self.reward != 1.0 {
            return Err(Error::InvalidArgument("deal recorded without a click".into()));
        }
        Ok(())
    }
}

impl SessionRecord for InteractionLogRecord {
    fn session_id(&self) -> u64 {
        self.session_id
    }

    fn timestamp(&self) -> u64 {
        self.timestamp
    }
}

pub fn write_log(path: &Path, header: &LogHeader, records: &[InteractionLogRecord]) -> Result<()> {
    let wrap = |source| Error::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(wrap)?;
    let mut out = BufWriter::new(file);
    let mut write_line = |line: String| writeln!(out, "{line}").map_err(wrap);
    write_line(serde_json::to_string(header)?)?;
    for r in records {
        write_line(serde_json::to_string(r)?)?;
    }
    out.flush().map_err(wrap)
}

pub fn parse_log(text: &str) -> Result<(LogHeader, Vec<InteractionLogRecord>)> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())))
}

pub fn read_log(path: &Path) -> Result<(LogHeader, Vec<InteractionLogRecord>)> {
    let reader = BufReader::new(File::open(path)?);
    parse_lines(reader.lines().map(|l| l.map_err(Error::from)))
}

fn parse_lines(lines: impl Iterator<Item = Result<String>>) -> Result<(LogHeader, Vec<InteractionLogRecord>)> {
    let mut header: Option<LogHeader> = None;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 1;
        let err = |message: String| Error::LogParse { line: lineno, message };
        match &header {
            None => {
                let h: LogHeader = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
                if h.format != LOG_FORMAT || h.version != LOG_VERSION {
                    return Err(err(format!("unsupported log format {} v{}", h.format, h.version)));
                }
                header = Some(h);
            }
            Some(h) => {
                let r: InteractionLogRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
                if r.state.len() != h.n_types {
                    return Err(err(format!("state has {} types, header says {}", r.state.len(), h.n_types)));
                }
                r.validate().map_err(|e| err(e.to_string()))?;
                records.push(r);
            }
        }
    }
    let header = header.ok_or(Error::LogParse {
        line: 1,
        message: "missing header".into(),
    })?;
    Ok((header, records))
}
