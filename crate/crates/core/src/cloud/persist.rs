//! Run-log persistence: the canonical line format, one event per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::event::{decode_event, encode_event, Event};

use super::CloudError;

/// Appends canonical lines to a file.
pub struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self, CloudError> {
        Ok(LogWriter { out: BufWriter::new(File::create(path)?) })
    }

    pub fn append_to(path: &Path) -> Result<Self, CloudError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(LogWriter { out: BufWriter::new(file) })
    }

    pub fn append(&mut self, event: &Event) -> Result<(), CloudError> {
        let line = encode_event(event).map_err(|e| CloudError::InvalidEvent(e.to_string()))?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CloudError> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_log(path: &Path, events: &[Event]) -> Result<(), CloudError> {
    let mut writer = LogWriter::create(path)?;
    for event in events {
        writer.append(event)?;
    }
    writer.finish()
}

pub fn encode_log(events: &[Event]) -> Result<String, CloudError> {
    let mut out = String::new();
    for event in events {
        out.push_str(&encode_event(event).map_err(|e| CloudError::InvalidEvent(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a whole log; errors carry the 1-based line number.
pub fn decode_log(text: &str) -> Result<Vec<Event>, CloudError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.is_empty())
        .map(|(i, line)| decode_event(line).map_err(|source| CloudError::Log { line: i + 1, source }))
        .collect()
}

pub fn read_log(path: &Path) -> Result<Vec<Event>, CloudError> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        events.push(decode_event(&line).map_err(|source| CloudError::Log { line: i + 1, source })?);
    }
    Ok(events)
}
