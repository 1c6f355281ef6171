//! Binary trace of a session: inputs per tick plus a digest of every snapshot.
//!
//! Layout: the 8-byte magic `AVCTRACE`, a little-endian `u16` version, a
//! reserved `u16`, then records. Each record is a little-endian `u32` byte
//! length followed by one JSON-encoded [`Record`]. The first record is the
//! header, the last one is `end`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InputEvent, MetricsReport, Session, SessionSetup};
use crate::{Error, Result};

pub const TRACE_MAGIC: &[u8; 8] = b"AVCTRACE";
pub const TRACE_VERSION: u16 = 1;

/// Records above this size are treated as corruption.
const MAX_RECORD: u32 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u16,
    pub scenario: String,
    pub rng_seed: u64,
    pub dt: f64,
    /// Digest of the full [`SessionSetup`] the trace was recorded against.
    pub setup_digest: String,
}

impl TraceHeader {
    pub fn for_setup(setup: &SessionSetup) -> Self {
        Self {
            version: TRACE_VERSION,
            scenario: setup.name.clone(),
            rng_seed: setup.config.rng_seed,
            dt: setup.config.dt,
            setup_digest: setup.digest(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub tick: u64,
    pub event: InputEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickDigest {
    pub tick: u64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header(TraceHeader),
    Event(TimedEvent),
    Digest(TickDigest),
    End { ticks: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    /// Sorted by tick, in arrival order within a tick.
    pub events: Vec<TimedEvent>,
    /// One per tick, starting at tick 0.
    pub digests: Vec<TickDigest>,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Self { header, events: Vec::new(), digests: Vec::new() }
    }

    pub fn ticks(&self) -> u64 {
        self.digests.len() as u64
    }

    /// Events of each tick, in order.
    pub fn events_at(&self, tick: u64) -> impl Iterator<Item = &InputEvent> {
        let from = self.events.partition_point(|e| e.tick < tick);
        self.events[from..].iter().take_while(move |e| e.tick == tick).map(|e| &e.event)
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(TRACE_MAGIC)?;
        out.write_all(&TRACE_VERSION.to_le_bytes())?;
        out.write_all(&0u16.to_le_bytes())?;
        write_record(&mut out, &Record::Header(self.header.clone()))?;
        let mut events = self.events.iter().peekable();
        for d in &self.digests {
            while let Some(e) = events.next_if(|e| e.tick <= d.tick) {
                write_record(&mut out, &Record::Event(e.clone()))?;
            }
            write_record(&mut out, &Record::Digest(d.clone()))?;
        }
        for e in events {
            write_record(&mut out, &Record::Event(e.clone()))?;
        }
        write_record(&mut out, &Record::End { ticks: self.ticks() })?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| Error::Trace("truncated preamble".into()))?;
        if &magic != TRACE_MAGIC {
            return Err(Error::Trace("not a trace file".into()));
        }
        let mut word = [0u8; 2];
        input.read_exact(&mut word).map_err(|_| Error::Trace("truncated preamble".into()))?;
        let version = u16::from_le_bytes(word);
        if version != TRACE_VERSION {
            return Err(Error::Trace(format!("unsupported version {version}")));
        }
        input.read_exact(&mut word).map_err(|_| Error::Trace("truncated preamble".into()))?;

        let header = match read_record(&mut input)? {
            Some(Record::Header(h)) => h,
            _ => return Err(Error::Trace("missing header".into())),
        };
        let mut trace = Trace::new(header);
        loop {
            match read_record(&mut input)? {
                Some(Record::Event(e)) => {
                    if trace.events.last().is_some_and(|last| last.tick > e.tick) {
                        return Err(Error::Trace(format!("event at tick {} out of order", e.tick)));
                    }
                    trace.events.push(e);
                }
                Some(Record::Digest(d)) => {
                    if d.tick != trace.ticks() {
                        return Err(Error::Trace(format!("digest for tick {} out of sequence", d.tick)));
                    }
                    trace.digests.push(d);
                }
                Some(Record::End { ticks }) if ticks == trace.ticks() => return Ok(trace),
                Some(Record::End { ticks }) => {
                    return Err(Error::Trace(format!("end record claims {ticks} ticks, found {}", trace.ticks())))
                }
                Some(Record::Header(_)) => return Err(Error::Trace("duplicate header".into())),
                None => return Err(Error::Trace("missing end record".into())),
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn write_record(out: &mut impl Write, record: &Record) -> Result<()> {
    let body = serde_json::to_vec(record).map_err(|e| Error::Trace(e.to_string()))?;
    let len = u32::try_from(body.len()).map_err(|_| Error::Trace("record too large".into()))?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(&body)?;
    Ok(())
}

fn read_record(input: &mut impl Read) -> Result<Option<Record>> {
    let mut len = [0u8; 4];
    match input.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_RECORD {
        return Err(Error::Trace(format!("record of {len} bytes")));
    }
    let mut body = vec![0u8; len as usize];
    input.read_exact(&mut body).map_err(|_| Error::Trace("truncated record".into()))?;
    serde_json::from_slice(&body).map(Some).map_err(|e| Error::Trace(format!("bad record: {e}")))
}

/// Re-executes `trace` against `setup`, failing at the first tick whose
/// snapshot digest differs from the recorded one.
pub fn replay(trace: &Trace, setup: &SessionSetup) -> Result<MetricsReport> {
    if trace.header.setup_digest != setup.digest() {
        log::warn!("trace was recorded against a different setup; expect divergence at tick 0");
    }
    let mut session = Session::new(setup.clone())?;
    let mut inputs = Vec::new();
    for recorded in &trace.digests {
        inputs.clear();
        inputs.extend(trace.events_at(recorded.tick).cloned());
        let snapshot = session.step(&inputs)?;
        if snapshot.digest != recorded.digest {
            return Err(Error::DigestMismatch { tick: recorded.tick });
        }
    }
    Ok(session.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    fn sample() -> Trace {
        let mut t = Trace::new(TraceHeader {
            version: TRACE_VERSION,
            scenario: "t".into(),
            rng_seed: 7,
            dt: 0.01,
            setup_digest: "abc".into(),
        });
        t.events.push(TimedEvent { tick: 0, event: InputEvent::Marker { p: Vec3::new(1.0, 2.0, 3.0) } });
        t.events.push(TimedEvent { tick: 0, event: InputEvent::MarkerRelease });
        t.events.push(TimedEvent { tick: 2, event: InputEvent::ClearGoal });
        for tick in 0..3 {
            t.digests.push(TickDigest { tick, digest: format!("d{tick}") });
        }
        t
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], TRACE_MAGIC);
        assert_eq!(Trace::read_from(&buf[..]).unwrap(), t);
        assert_eq!(t.events_at(0).count(), 2);
        assert_eq!(t.events_at(1).count(), 0);
        assert_eq!(t.events_at(2).count(), 1);
    }

    #[test]
    fn corrupt_inputs() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        assert!(Trace::read_from(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Trace::read_from(&bad[..]).is_err());
        let mut bad = buf;
        bad[8] = 9;
        assert!(Trace::read_from(&bad[..]).is_err());
        assert!(Trace::read_from(&b""[..]).is_err());
    }
}
