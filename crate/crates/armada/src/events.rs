//! Durable event log: line-delimited JSON segments, one per UTC ingestion
//! day, named `events-<YYYY-MM-DD>.jsonl`. Closed segments may be rotated to
//! `.jsonl.gz`; readers accept both.
//!
//! Consumption is tracked by a cursor counting event lines across segments
//! in name order.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use armada_core::attribution::{InteractionEvent, ServedEvent};
use chrono::{DateTime, NaiveDate, Utc};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Served(ServedEvent),
    Interaction(InteractionEvent),
}

impl Event {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

/// Splits events into serves and interactions.
pub fn partition(events: Vec<Event>) -> (Vec<ServedEvent>, Vec<InteractionEvent>) {
    let mut served = Vec::new();
    let mut interactions = Vec::new();
    for e in events {
        match e {
            Event::Served(s) => served.push(s),
            Event::Interaction(i) => interactions.push(i),
        }
    }
    (served, interactions)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRejection {
    /// 1-based line number in the submitted batch.
    pub line: usize,
    pub reason: String,
}

/// Parses a JSONL body into `(line number, event)` pairs; blank lines are
/// skipped.
pub fn parse_lines(body: &str) -> (Vec<(usize, Event)>, Vec<LineRejection>) {
    let mut events = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str::<Event>(line) {
            Ok(e) => events.push((i + 1, e)),
            Err(err) => rejected.push(LineRejection { line: i + 1, reason: err.to_string() }),
        }
    }
    (events, rejected)
}

pub fn segment_name(date: NaiveDate) -> String {
    format!("events-{}.jsonl", date.format("%Y-%m-%d"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventSlice {
    pub events: Vec<Event>,
    /// Cursor after the slice.
    pub cursor: u64,
    pub malformed: u64,
}

#[derive(Debug, Clone)]
pub struct EventLog {
    dir: PathBuf,
}

impl EventLog {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends events to the segment for `now`'s UTC date and fsyncs.
    pub fn append(&self, events: &[Event], now: DateTime<Utc>) -> io::Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.dir.join(segment_name(now.date_naive()));
        let mut buf = String::new();
        for e in events {
            buf.push_str(&e.to_line());
            buf.push('\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(buf.as_bytes())?;
        f.sync_data()
    }

    /// Segment paths in consumption order. When a day exists both plain and
    /// compressed (a rotation interrupted before cleanup) the compressed copy
    /// wins.
    pub fn segments(&self) -> io::Result<Vec<PathBuf>> {
        let mut days: BTreeMap<String, PathBuf> = BTreeMap::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(stem) = name.strip_prefix("events-") else { continue };
            if let Some(day) = stem.strip_suffix(".jsonl.gz") {
                days.insert(day.to_string(), path);
            } else if let Some(day) = stem.strip_suffix(".jsonl") {
                days.entry(day.to_string()).or_insert(path);
            }
        }
        Ok(days.into_values().collect())
    }

    fn read_segment(path: &Path) -> io::Result<Vec<String>> {
        let file = File::open(path)?;
        let reader: Box<dyn Read> =
            if path.extension().is_some_and(|e| e == "gz") { Box::new(GzDecoder::new(file)) } else { Box::new(file) };
        let mut lines = Vec::new();
        for line in BufReader::new(reader).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                lines.push(line);
            }
        }
        Ok(lines)
    }

    /// Events after the first `cursor` lines. Lines that fail to parse are
    /// counted but skipped.
    pub fn read_from(&self, cursor: u64) -> io::Result<EventSlice> {
        let mut seen = 0u64;
        let mut events = Vec::new();
        let mut bad = 0u64;
        for seg in self.segments()? {
            for line in Self::read_segment(&seg)? {
                seen += 1;
                if seen <= cursor {
                    continue;
                }
                match serde_json::from_str::<Event>(&line) {
                    Ok(e) => events.push(e),
                    Err(_) => bad += 1,
                }
            }
        }
        Ok(EventSlice { events, cursor: seen.max(cursor), malformed: bad })
    }

    /// Compresses every plain segment older than `today`.
    pub fn rotate(&self, today: NaiveDate) -> io::Result<usize> {
        let current = segment_name(today);
        let mut rotated = 0;
        for seg in self.segments()? {
            let name = seg.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            if name.ends_with(".gz") || name >= current {
                continue;
            }
            let gz_path = seg.with_file_name(format!("{name}.gz"));
            let tmp = seg.with_file_name(format!("{name}.gz.tmp"));
            {
                let mut enc = GzEncoder::new(File::create(&tmp)?, Compression::default());
                io::copy(&mut File::open(&seg)?, &mut enc)?;
                enc.finish()?.sync_all()?;
            }
            fs::rename(&tmp, &gz_path)?;
            fs::remove_file(&seg)?;
            rotated += 1;
        }
        Ok(rotated)
    }
}
