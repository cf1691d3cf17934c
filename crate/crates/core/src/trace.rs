//! Timestamped record of everything observable in a run. The oracle and
//! the metrics read it; protocols never do.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::protocol::{ControlEvent, MessageId, ProcessId, ProtocolKind};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: u64,
    pub process: ProcessId,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Broadcast {
        id: MessageId,
    },
    /// A payload copy put on the FIFO link to `to`.
    Send {
        id: MessageId,
        to: ProcessId,
        control_bytes: u32,
    },
    /// A payload copy taken off the FIFO link from `from`, duplicates included.
    Receive {
        id: MessageId,
        from: ProcessId,
    },
    Deliver {
        id: MessageId,
    },
    Topology {
        change: TopologyChange,
    },
    Control {
        detail: ControlEvent,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum TopologyChange {
    AddLink {
        peer: ProcessId,
    },
    RemoveLink {
        peer: ProcessId,
    },
    /// The process joined and took over the received set of `contact`.
    Join {
        contact: ProcessId,
    },
    Leave,
    Crash,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario: String,
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub processes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("trace has no header line")]
    MissingHeader,
}

impl Trace {
    /// JSON lines: the header first, then one event per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceError> {
        let mut lines = r
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
        let (_, first) = lines.next().ok_or(TraceError::MissingHeader)?;
        let header = serde_json::from_str(&first?).map_err(|source| TraceError::Parse { line: 1, source })?;
        let mut events = Vec::new();
        for (i, line) in lines {
            let line = line?;
            events.push(serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?);
        }
        Ok(Trace { header, events })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let id = MessageId::new(ProcessId(1), 2);
        let trace = Trace {
            header: TraceHeader {
                scenario: "t".into(),
                protocol: ProtocolKind::Pc,
                seed: 3,
                processes: 2,
            },
            events: vec![
                TraceEvent {
                    time: 0,
                    process: ProcessId(1),
                    kind: EventKind::Broadcast { id },
                },
                TraceEvent {
                    time: 0,
                    process: ProcessId(1),
                    kind: EventKind::Send {
                        id,
                        to: ProcessId(0),
                        control_bytes: 17,
                    },
                },
                TraceEvent {
                    time: 4,
                    process: ProcessId(0),
                    kind: EventKind::Topology {
                        change: TopologyChange::Join { contact: ProcessId(1) },
                    },
                },
                TraceEvent {
                    time: 5,
                    process: ProcessId(0),
                    kind: EventKind::Control {
                        detail: ControlEvent::PingSent {
                            peer: ProcessId(1),
                            phase: 1,
                        },
                    },
                },
            ],
        };
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().contains("\"kind\":\"broadcast\""));
        assert_eq!(Trace::read_jsonl(&buf[..]).unwrap(), trace);
    }

    #[test]
    fn garbage_is_reported_with_line() {
        let text = "{\"scenario\":\"x\",\"protocol\":\"pc\",\"seed\":1,\"processes\":1}\n{nope}\n";
        match Trace::read_jsonl(text.as_bytes()) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Trace::read_jsonl(&b""[..]), Err(TraceError::MissingHeader)));
    }
}
