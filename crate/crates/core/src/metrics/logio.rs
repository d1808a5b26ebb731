use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EventLog, EventRecord};

pub const EVENT_LOG_HEADER: &str = "unit_id,task_id,node,slot,start_us,end_us";

#[derive(Debug, Error)]
pub enum LogParseError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("missing or wrong header, expected `{EVENT_LOG_HEADER}`")]
    Header,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Row {
    unit_id: u64,
    task_id: u64,
    node: u32,
    slot: u32,
    start_us: u64,
    end_us: u64,
}

pub fn write_event_log_csv<W: Write>(log: &EventLog, out: W) -> std::io::Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    // written explicitly so an empty log still carries the header
    writer.write_record(EVENT_LOG_HEADER.split(','))?;
    for r in &log.records {
        writer.serialize(Row {
            unit_id: r.unit_id,
            task_id: r.task_id,
            node: r.node_index,
            slot: r.slot_index,
            start_us: r.start_us,
            end_us: r.end_us,
        })?;
    }
    writer.flush()
}

/// Parses a log; errors carry the 1-based line number.
pub fn read_event_log_csv<R: Read>(input: R) -> Result<EventLog, LogParseError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = Vec::new();
    let mut rows = reader.records();
    match rows.next() {
        Some(Ok(header)) if header.iter().eq(EVENT_LOG_HEADER.split(',')) => {}
        Some(Err(e)) => return Err(malformed(&e)),
        _ => return Err(LogParseError::Header),
    }
    for row in rows {
        let row = row.map_err(|e| malformed(&e))?;
        let line = row.position().map_or(0, |p| p.line());
        let parsed: Row = row.deserialize(None).map_err(|e| LogParseError::Malformed {
            line,
            message: e.to_string(),
        })?;
        if parsed.end_us < parsed.start_us {
            return Err(LogParseError::Malformed {
                line,
                message: format!("end_us {} precedes start_us {}", parsed.end_us, parsed.start_us),
            });
        }
        records.push(EventRecord {
            unit_id: parsed.unit_id,
            task_id: parsed.task_id,
            node_index: parsed.node,
            slot_index: parsed.slot,
            start_us: parsed.start_us,
            end_us: parsed.end_us,
        });
    }
    Ok(EventLog::new(records, "read from csv"))
}

fn malformed(e: &csv::Error) -> LogParseError {
    LogParseError::Malformed {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventLog {
        EventLog::new(
            vec![
                EventRecord { unit_id: 0, task_id: 0, node_index: 0, slot_index: 0, start_us: 0, end_us: 5 },
                EventRecord { unit_id: 1, task_id: 1, node_index: 0, slot_index: 1, start_us: 2, end_us: 7 },
            ],
            "",
        )
    }

    #[test]
    fn round_trip() {
        let mut buf = Vec::new();
        write_event_log_csv(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, format!("{EVENT_LOG_HEADER}\n0,0,0,0,0,5\n1,1,0,1,2,7\n"));
        assert_eq!(read_event_log_csv(&buf[..]).unwrap().records, sample().records);
    }

    #[test]
    fn empty_log_keeps_header() {
        let mut buf = Vec::new();
        write_event_log_csv(&EventLog::default(), &mut buf).unwrap();
        assert_eq!(buf, format!("{EVENT_LOG_HEADER}\n").into_bytes());
        assert!(read_event_log_csv(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn errors_name_the_line() {
        let bad = format!("{EVENT_LOG_HEADER}\n0,0,0,0,0,5\n1,1,0,x,2,7\n");
        match read_event_log_csv(bad.as_bytes()) {
            Err(LogParseError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let backwards = format!("{EVENT_LOG_HEADER}\n0,0,0,0,9,5\n");
        assert!(matches!(
            read_event_log_csv(backwards.as_bytes()),
            Err(LogParseError::Malformed { line: 2, .. })
        ));
        let short = format!("{EVENT_LOG_HEADER}\n0,0,0\n");
        assert!(matches!(read_event_log_csv(short.as_bytes()), Err(LogParseError::Malformed { line: 2, .. })));
        assert!(matches!(read_event_log_csv(&b""[..]), Err(LogParseError::Header)));
        assert!(matches!(read_event_log_csv(&b"a,b\n"[..]), Err(LogParseError::Header)));
    }
}
