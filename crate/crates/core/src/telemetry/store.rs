//! Append-only record store.
//!
//! `records.jsonl`: one object per line with keys in this order:
//! `{"device_id":"gh01","tick":0,"channel":"air_temp","value":"21.3","recv_tick":0,"session":1}`.
//! `value` is the decimal text exactly as received.
//!
//! `rejects.log`: `recv_tick<TAB>reason<TAB>raw` per line, with `raw` escaped
//! (`\n`, `\r`, `\t`, `\\`, other bytes outside printable ASCII as `\xNN`).
//!
//! `records.csv`: header `device_id,tick,channel,value,recv_tick,session`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::frame::SensorFrame;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub device_id: String,
    pub tick: u64,
    pub channel: String,
    pub value: String,
    pub recv_tick: u64,
    pub session: u64,
}

impl StoredRecord {
    pub fn from_frame(f: SensorFrame, recv_tick: u64, session: u64) -> Self {
        Self {
            device_id: f.device_id,
            tick: f.tick,
            channel: f.channel,
            value: f.value,
            recv_tick,
            session,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub recv_tick: u64,
    pub session: u64,
    pub reason: String,
    pub raw: Vec<u8>,
}

pub fn escape_raw(raw: &[u8]) -> String {
    let mut s = String::with_capacity(raw.len());
    for &b in raw {
        match b {
            b'\n' => s.push_str("\\n"),
            b'\r' => s.push_str("\\r"),
            b'\t' => s.push_str("\\t"),
            b'\\' => s.push_str("\\\\"),
            0x20..=0x7e => s.push(b as char),
            _ => s.push_str(&format!("\\x{b:02x}")),
        }
    }
    s
}

/// In-memory log of records and rejects, optionally mirrored to files.
#[derive(Debug, Default)]
pub struct Store {
    records: Vec<StoredRecord>,
    rejects: Vec<Reject>,
    records_file: Option<BufWriter<File>>,
    rejects_file: Option<BufWriter<File>>,
}

impl Store {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Store mirrored to `dir/records.jsonl` and `dir/rejects.log`
    /// (both truncated).
    pub fn with_dir(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            records_file: Some(BufWriter::new(File::create(dir.join("records.jsonl"))?)),
            rejects_file: Some(BufWriter::new(File::create(dir.join("rejects.log"))?)),
            ..Self::default()
        })
    }

    pub fn append(&mut self, r: StoredRecord) -> io::Result<()> {
        if let Some(w) = &mut self.records_file {
            serde_json::to_writer(&mut *w, &r)?;
            w.write_all(b"\n")?;
        }
        self.records.push(r);
        Ok(())
    }

    pub fn append_reject(&mut self, r: Reject) -> io::Result<()> {
        if let Some(w) = &mut self.rejects_file {
            writeln!(w, "{}\t{}\t{}", r.recv_tick, r.reason, escape_raw(&r.raw))?;
        }
        self.rejects.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[StoredRecord] {
        &self.records
    }

    pub fn rejects(&self) -> &[Reject] {
        &self.rejects
    }

    pub fn flush(&mut self) -> io::Result<()> {
        for w in [&mut self.records_file, &mut self.rejects_file]
            .into_iter()
            .flatten()
        {
            w.flush()?;
        }
        Ok(())
    }

    pub fn export_csv(&self, path: &Path) -> io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "device_id",
            "tick",
            "channel",
            "value",
            "recv_tick",
            "session",
        ])?;
        for r in &self.records {
            w.serialize((
                &r.device_id,
                r.tick,
                &r.channel,
                &r.value,
                r.recv_tick,
                r.session,
            ))?;
        }
        w.flush()
    }
}

/// Reads a `records.jsonl` file back.
pub fn read_records(path: &Path) -> io::Result<Vec<StoredRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(io::Error::other))
        .collect()
}
