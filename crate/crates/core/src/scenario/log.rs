use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{Minutes, Schedule, ScheduleEntry, Stage};

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLogRecord {
    pub t: Minutes,
    pub seq: u64,
    pub kind: String,
    #[serde(default)]
    pub agent: Option<String>,
    #[serde(default)]
    pub conversation_id: Option<String>,
    pub payload: Value,
}

/// Append-only run log. Records are numbered in append order, which is also
/// dispatch order, so `(t, seq)` is sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    records: Vec<EventLogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        t: Minutes,
        kind: &str,
        agent: Option<String>,
        conversation_id: Option<String>,
        payload: Value,
    ) -> u64 {
        let seq = self.records.len() as u64;
        self.records.push(EventLogRecord {
            t,
            seq,
            kind: kind.to_string(),
            agent,
            conversation_id,
            payload,
        });
        seq
    }

    pub fn records(&self) -> &[EventLogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn since(&self, from: usize) -> &[EventLogRecord] {
        &self.records[from.min(self.records.len())..]
    }

    pub fn line(record: &EventLogRecord) -> String {
        serde_json::to_string(record).expect("record serializes")
    }

    /// JSON Lines text, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&Self::line(r));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<EventLogRecord>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }
}

pub const GANTT_HEADER: &str = "machine_id,job_id,op_id,stage,start_min,end_min,schedule_version";

/// Gantt rows sorted by machine, then start.
pub fn gantt_csv(schedule: &Schedule) -> String {
    let mut rows: Vec<&ScheduleEntry> = schedule.entries.iter().collect();
    rows.sort_by(|a, b| {
        (&a.machine_id, a.start, &a.op_id).cmp(&(&b.machine_id, b.start, &b.op_id))
    });
    let mut out = String::from(GANTT_HEADER);
    out.push('\n');
    for e in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.machine_id, e.job_id, e.op_id, e.stage, e.start, e.end, e.version
        ));
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GanttError {
    #[error("gantt header must be `{GANTT_HEADER}`")]
    Header,
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
}

/// Reads a Gantt export back into a schedule (without transports).
pub fn parse_gantt_csv(text: &str) -> Result<Schedule, GanttError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(GANTT_HEADER) {
        return Err(GanttError::Header);
    }
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let row_err = |message: String| GanttError::Row {
            line: line_no,
            message,
        };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 7 {
            return Err(row_err(format!("expected 7 columns, found {}", cols.len())));
        }
        let num = |s: &str, what: &str| {
            s.parse::<i64>()
                .map_err(|_| row_err(format!("{what} {s:?} is not an integer")))
        };
        let stage =
            Stage::parse(cols[3]).ok_or_else(|| row_err(format!("unknown stage {:?}", cols[3])))?;
        let version = num(cols[6], "schedule_version")?;
        entries.push(ScheduleEntry {
            machine_id: cols[0].to_string(),
            job_id: cols[1].to_string(),
            op_id: cols[2].to_string(),
            stage,
            start: num(cols[4], "start_min")?,
            end: num(cols[5], "end_min")?,
            version: version.max(0) as u64,
        });
    }
    let version = entries.iter().map(|e| e.version).max().unwrap_or(0);
    Ok(Schedule {
        version,
        entries,
        transports: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(op: &str, m: &str, s: Minutes, e: Minutes) -> ScheduleEntry {
        ScheduleEntry {
            op_id: op.into(),
            job_id: "A#1".into(),
            stage: Stage::Cutting,
            machine_id: m.into(),
            start: s,
            end: e,
            version: 2,
        }
    }

    #[test]
    fn gantt_round_trip() {
        let s = Schedule {
            version: 2,
            entries: vec![
                entry("A#1.cutting", "M2", 5, 9),
                entry("B#1.cutting", "M1", 0, 4),
            ],
            transports: vec![],
        };
        let text = gantt_csv(&s);
        assert!(text.starts_with(GANTT_HEADER));
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "M1,A#1,B#1.cutting,Cutting,0,4,2"
        );
        let back = parse_gantt_csv(&text).unwrap();
        assert_eq!(back.entries.len(), 2);
        assert_eq!(back.version, 2);
    }

    #[test]
    fn gantt_bad_header() {
        assert_eq!(parse_gantt_csv("a,b\n"), Err(GanttError::Header));
    }

    #[test]
    fn gantt_bad_row() {
        let text = format!("{GANTT_HEADER}\nM1,A#1,A#1.cutting,Cutting,zero,4,1\n");
        assert!(matches!(
            parse_gantt_csv(&text),
            Err(GanttError::Row { line: 2, .. })
        ));
    }

    #[test]
    fn log_lines_are_canonical() {
        let mut log = EventLog::new();
        log.push(
            3,
            "Warning",
            None,
            None,
            serde_json::json!({"b": 1, "a": "x"}),
        );
        assert_eq!(log.to_jsonl(), "{\"t\":3,\"seq\":0,\"kind\":\"Warning\",\"agent\":null,\"conversation_id\":null,\"payload\":{\"a\":\"x\",\"b\":1}}\n");
        assert_eq!(
            EventLog::parse_jsonl(&log.to_jsonl()).unwrap(),
            log.records()
        );
    }
}
