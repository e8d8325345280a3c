use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled interval in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub class: usize,
    pub onset: f64,
    pub offset: f64,
}

impl Event {
    pub fn new(class: usize, onset: f64, offset: f64) -> Self {
        Self {
            class,
            onset,
            offset,
        }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset.is_finite() && self.offset.is_finite())
            || self.onset < 0.0
            || self.onset >= self.offset
        {
            return Err(Error::Data(format!(
                "malformed interval ({}, {}) for class {}",
                self.onset, self.offset, self.class
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventList {
    pub clip_id: String,
    pub events: Vec<Event>,
}

impl EventList {
    pub fn new(clip_id: impl Into<String>, events: Vec<Event>) -> Self {
        Self {
            clip_id: clip_id.into(),
            events,
        }
    }

    /// Every event well-formed and inside `[0, duration]`.
    pub fn validate(&self, duration: f64) -> Result<()> {
        for e in &self.events {
            e.validate()?;
            if e.offset > duration + 1e-9 {
                return Err(Error::Data(format!(
                    "{}: event ends at {} past clip end {duration}",
                    self.clip_id, e.offset
                )));
            }
        }
        Ok(())
    }

    /// Sorted, deduplicated classes present in the list.
    pub fn classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.events.iter().map(|e| e.class).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// Events grouped by clip id.
pub type EventTable = BTreeMap<String, Vec<Event>>;

const HEADER: &str = "clip_id\tonset\toffset\tclass";

/// Tab-separated `clip_id onset offset class` with a header row. Onsets and
/// offsets use the shortest round-trip decimal form.
pub fn format_events(table: &EventTable, class_names: &[String]) -> Result<String> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for (clip, events) in table {
        for e in events {
            let name = class_names
                .get(e.class)
                .ok_or_else(|| Error::Data(format!("class id {} out of range", e.class)))?;
            writeln!(out, "{clip}\t{}\t{}\t{name}", e.onset, e.offset).expect("string write");
        }
    }
    Ok(out)
}

pub fn parse_events(text: &str, class_names: &[String]) -> Result<EventTable> {
    let mut table = EventTable::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (n == 0 && line.starts_with("clip_id")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Data(format!(
                "line {}: expected 4 columns, got {}",
                n + 1,
                cols.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Data(format!("line {}: bad number {s:?}", n + 1)))
        };
        let class = class_names
            .iter()
            .position(|c| c == cols[3])
            .ok_or_else(|| Error::Data(format!("line {}: unknown class {:?}", n + 1, cols[3])))?;
        let e = Event::new(class, num(cols[1])?, num(cols[2])?);
        e.validate()?;
        table.entry(cols[0].to_owned()).or_default().push(e);
    }
    Ok(table)
}

pub fn read_events(path: impl AsRef<Path>, class_names: &[String]) -> Result<EventTable> {
    parse_events(&std::fs::read_to_string(path)?, class_names)
}

pub fn write_events(
    path: impl AsRef<Path>,
    table: &EventTable,
    class_names: &[String],
) -> Result<()> {
    std::fs::write(path, format_events(table, class_names)?)?;
    Ok(())
}

/// `clip_id class1,class2,...`, one clip per line. Clips without events get
/// an empty class field.
pub fn format_weak(labels: &BTreeMap<String, Vec<usize>>, class_names: &[String]) -> String {
    let mut out = String::new();
    for (clip, classes) in labels {
        let names: Vec<&str> = classes.iter().map(|&c| class_names[c].as_str()).collect();
        writeln!(out, "{clip}\t{}", names.join(",")).expect("string write");
    }
    out
}

pub fn parse_weak(text: &str, class_names: &[String]) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut labels = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (clip, rest) = line.split_once('\t').unwrap_or((line, ""));
        let mut classes = Vec::new();
        for name in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let c = class_names
                .iter()
                .position(|x| x == name)
                .ok_or_else(|| Error::Data(format!("line {}: unknown class {name:?}", n + 1)))?;
            classes.push(c);
        }
        classes.sort_unstable();
        classes.dedup();
        labels.insert(clip.to_owned(), classes);
    }
    Ok(labels)
}
