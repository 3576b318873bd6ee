//! CSV export and import for raw telemetry.
//!
//! The column set and order are a fixed external contract; absent optional
//! fields round-trip as empty cells, floats round-trip bit-exactly via the
//! shortest decimal representation.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

use super::TrafficRecordRaw;

/// Exact header line of every telemetry CSV.
pub const CSV_HEADER: &str = "Vehicle_ID,Frame_ID,Timestamp_ms,Lane_ID,Section_ID,Global_X,Global_Y,v_Vel,v_Acc,Space_Headway,Time_Headway,Weather";

/// Writes records with the fixed header; returns the number of data rows.
pub fn write_csv(records: &[TrafficRecordRaw], path: &Path) -> Result<u64> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    // Explicit header so even an empty export carries the contract line.
    w.write_record(CSV_HEADER.split(','))
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    for rec in records {
        w.serialize(rec)
            .map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len() as u64)
}

/// Reads a telemetry CSV written by [`write_csv`]. Malformed rows fail with
/// the 1-based line number.
pub fn read_csv(path: &Path) -> Result<Vec<TrafficRecordRaw>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let headers = r
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    let expected: Vec<&str> = CSV_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected header: {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for row in r.deserialize::<TrafficRecordRaw>() {
        match row {
            Ok(rec) => out.push(rec),
            Err(e) => {
                let line = e
                    .position()
                    .map(|p| p.line())
                    .unwrap_or(0);
                return Err(Error::Parse { line, msg: e.to_string() });
            }
        }
    }
    Ok(out)
}
