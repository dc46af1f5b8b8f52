//! Execution traces and their line-oriented text format.
//!
//! ```text
//! event id=4 actor=ndp:0.1 kind=persist range=0:0x1000+8 po=2 stamp=3 shared=0 proc=2 tx=1 role=log of=-
//! edge from=1 to=4 kind=dispatch
//! rf read=20 write=4
//! ```
//!
//! Fields always appear in this order. `-` marks an absent optional value.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::translate::{DevRange, DeviceId, ThreadId};

pub type EventId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Actor {
    Cpu(ThreadId),
    Ndp { device: DeviceId, unit: usize },
    /// The host read/write queue of a device, draining buffered CPU accesses.
    Host(DeviceId),
    /// The multi-device handler of a device.
    Handler(DeviceId),
}

impl Actor {
    pub fn device(&self) -> Option<DeviceId> {
        match *self {
            Actor::Cpu(_) => None,
            Actor::Ndp { device, .. } | Actor::Host(device) | Actor::Handler(device) => Some(device),
        }
    }

    pub fn is_ndp_side(&self) -> bool {
        matches!(self, Actor::Ndp { .. } | Actor::Handler(_))
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Cpu(t) => write!(f, "cpu:{}", t.0),
            Actor::Ndp { device, unit } => write!(f, "ndp:{device}.{unit}"),
            Actor::Host(d) => write!(f, "host:{d}"),
            Actor::Handler(d) => write!(f, "handler:{d}"),
        }
    }
}

impl FromStr for Actor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| format!("bad actor {s:?}"))?;
        let num = |x: &str| x.parse::<usize>().map_err(|e| format!("bad actor {s:?}: {e}"));
        Ok(match kind {
            "cpu" => Actor::Cpu(ThreadId(num(rest)? as u16)),
            "ndp" => {
                let (d, u) = rest.split_once('.').ok_or_else(|| format!("bad actor {s:?}"))?;
                Actor::Ndp {
                    device: num(d)?,
                    unit: num(u)?,
                }
            }
            "host" => Actor::Host(num(rest)?),
            "handler" => Actor::Handler(num(rest)?),
            _ => return Err(format!("bad actor {s:?}")),
        })
    }
}

macro_rules! text_enum {
    ($name:ident { $($var:ident => $txt:literal),* $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($var),* }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$var => $txt),* })
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($txt => Ok($name::$var),)*
                    _ => Err(format!(concat!("unknown ", stringify!($name), " {:?}"), s)),
                }
            }
        }
    };
}

text_enum!(EventKind {
    Read => "read",
    Write => "write",
    Persist => "persist",
    SyncBegin => "sync-begin",
    SyncComplete => "sync-complete",
    Crash => "crash",
    RecoveryRead => "recovery-read",
});

text_enum!(Role {
    None => "none",
    Data => "data",
    Request => "request",
    Log => "log",
    Meta => "meta",
    Reset => "reset",
});

text_enum!(EdgeKind {
    Dispatch => "dispatch",
    Stall => "stall",
    Order => "order",
    Complete => "complete",
    Remote => "remote",
    Drain => "drain",
});

impl EventKind {
    /// Kinds that carry a persist stamp.
    pub fn is_durable(self) -> bool {
        matches!(self, EventKind::Persist | EventKind::SyncComplete)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub id: EventId,
    pub actor: Actor,
    pub kind: EventKind,
    pub range: Option<DevRange>,
    pub po_index: u64,
    pub persist_stamp: Option<u64>,
    pub shared: bool,
    /// NDP procedure (device sub-request) this event belongs to or submits.
    pub proc: Option<u64>,
    pub tx: Option<u64>,
    pub role: Role,
    /// For a CPU persist, the store it makes durable; for a host write, the persist it drains.
    pub of: Option<EventId>,
}

impl TraceEvent {
    pub fn is_write_like(&self) -> bool {
        matches!(self.kind, EventKind::Write | EventKind::Persist)
    }
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "event id={} actor={} kind={} range={} po={} stamp={} shared={} proc={} tx={} role={} of={}",
            self.id,
            self.actor,
            self.kind,
            opt(&self.range),
            self.po_index,
            opt(&self.persist_stamp),
            u8::from(self.shared),
            opt(&self.proc),
            opt(&self.tx),
            self.role,
            opt(&self.of),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: EventId,
    pub to: EventId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub edges: Vec<Edge>,
    /// Recovery read -> the persisted write it observed.
    pub rf: Vec<(EventId, EventId)>,
}

impl Trace {
    pub fn event(&self, id: EventId) -> &TraceEvent {
        &self.events[id as usize]
    }

    pub fn crash_index(&self) -> Option<usize> {
        self.events.iter().position(|e| e.kind == EventKind::Crash)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# nearpm trace v1\n");
        for e in &self.events {
            s.push_str(&e.to_string());
            s.push('\n');
        }
        for e in &self.edges {
            s.push_str(&format!("edge from={} to={} kind={}\n", e.from, e.to, e.kind));
        }
        for (r, w) in &self.rf {
            s.push_str(&format!("rf read={r} write={w}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Trace::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let mut words = line.split_whitespace();
            let tag = words.next().unwrap_or_default();
            let fields: Vec<(&str, &str)> = words
                .map(|w| w.split_once('=').ok_or_else(|| err(format!("expected key=value, got {w:?}"))))
                .collect::<Result<_>>()?;
            let expect = |keys: &[&str]| -> Result<()> {
                let got: Vec<&str> = fields.iter().map(|(k, _)| *k).collect();
                if got != keys {
                    return Err(err(format!("expected fields {keys:?}, got {got:?}")));
                }
                Ok(())
            };
            let num = |v: &str| v.parse::<u64>().map_err(|e| err(format!("{v:?}: {e}")));
            let onum = |v: &str| if v == "-" { Ok(None) } else { num(v).map(Some) };
            match tag {
                "event" => {
                    expect(&[
                        "id", "actor", "kind", "range", "po", "stamp", "shared", "proc", "tx", "role", "of",
                    ])?;
                    let v: Vec<&str> = fields.iter().map(|(_, v)| *v).collect();
                    t.events.push(TraceEvent {
                        id: num(v[0])?,
                        actor: v[1].parse().map_err(err)?,
                        kind: v[2].parse().map_err(err)?,
                        range: if v[3] == "-" { None } else { Some(parse_range(v[3]).map_err(err)?) },
                        po_index: num(v[4])?,
                        persist_stamp: onum(v[5])?,
                        shared: match v[6] {
                            "1" => true,
                            "0" => false,
                            o => return Err(err(format!("shared must be 0 or 1, got {o:?}"))),
                        },
                        proc: onum(v[7])?,
                        tx: onum(v[8])?,
                        role: v[9].parse().map_err(err)?,
                        of: onum(v[10])?,
                    });
                }
                "edge" => {
                    expect(&["from", "to", "kind"])?;
                    t.edges.push(Edge {
                        from: num(fields[0].1)?,
                        to: num(fields[1].1)?,
                        kind: fields[2].1.parse().map_err(err)?,
                    });
                }
                "rf" => {
                    expect(&["read", "write"])?;
                    t.rf.push((num(fields[0].1)?, num(fields[1].1)?));
                }
                other => return Err(err(format!("unknown record {other:?}"))),
            }
        }
        Ok(t)
    }

    /// Structural checks shared by every consumer of a trace.
    pub fn validate(&self) -> Result<()> {
        let fault = |m: String| Err(Error::Checker(m));
        let mut last_po: HashMap<Actor, u64> = HashMap::new();
        for (i, e) in self.events.iter().enumerate() {
            if e.id != i as u64 {
                return fault(format!("event ids must be dense, found {} at position {i}", e.id));
            }
            if let Some(prev) = last_po.insert(e.actor, e.po_index) {
                if e.po_index <= prev {
                    return fault(format!("po_index of {} does not increase at event {}", e.actor, e.id));
                }
            }
            if e.persist_stamp.is_some() != e.kind.is_durable() {
                return fault(format!("event {} has a persist stamp mismatch for kind {}", e.id, e.kind));
            }
        }
        let n = self.events.len() as u64;
        for ed in &self.edges {
            if ed.from >= n || ed.to >= n || ed.from == ed.to {
                return fault(format!("edge {}->{} is invalid", ed.from, ed.to));
            }
        }
        let crash = self.crash_index();
        for &(r, w) in &self.rf {
            if r >= n || w >= n {
                return fault(format!("rf {r}->{w} references a missing event"));
            }
            let (re, we) = (self.event(r), self.event(w));
            if re.kind != EventKind::RecoveryRead || we.kind != EventKind::Persist {
                return fault(format!("rf {r}->{w} must link a recovery read to a persist"));
            }
            match (re.range, we.range) {
                (Some(a), Some(b)) if a.overlaps(&b) => {}
                _ => return fault(format!("rf {r}->{w} ranges do not overlap")),
            }
            if crash.map_or(true, |c| w as usize > c) {
                return fault(format!("rf target {w} was not persisted before the crash"));
            }
        }
        Ok(())
    }
}

fn parse_range(s: &str) -> Result<DevRange, String> {
    let (dev, rest) = s.split_once(':').ok_or_else(|| format!("bad range {s:?}"))?;
    let (start, len) = rest.split_once('+').ok_or_else(|| format!("bad range {s:?}"))?;
    let start = start.strip_prefix("0x").ok_or_else(|| format!("bad range start {s:?}"))?;
    Ok(DevRange::new(
        dev.parse().map_err(|e| format!("{s:?}: {e}"))?,
        u64::from_str_radix(start, 16).map_err(|e| format!("{s:?}: {e}"))?,
        len.parse().map_err(|e| format!("{s:?}: {e}"))?,
    ))
}

/// Appends events with per-actor program order.
#[derive(Debug, Clone, Default)]
pub struct TraceBuilder {
    trace: Trace,
    po: HashMap<Actor, u64>,
    enabled: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct EventSpec {
    pub actor: Actor,
    pub kind: EventKind,
    pub range: Option<DevRange>,
    pub stamp: Option<u64>,
    pub shared: bool,
    pub proc: Option<u64>,
    pub tx: Option<u64>,
    pub role: Role,
    pub of: Option<EventId>,
}

impl EventSpec {
    pub fn new(actor: Actor, kind: EventKind) -> Self {
        Self {
            actor,
            kind,
            range: None,
            stamp: None,
            shared: false,
            proc: None,
            tx: None,
            role: Role::None,
            of: None,
        }
    }

    pub fn range(mut self, r: DevRange) -> Self {
        self.range = Some(r);
        self
    }

    pub fn stamp(mut self, s: u64) -> Self {
        self.stamp = Some(s);
        self
    }

    pub fn shared(mut self, s: bool) -> Self {
        self.shared = s;
        self
    }

    pub fn proc(mut self, p: u64) -> Self {
        self.proc = Some(p);
        self
    }

    pub fn tx(mut self, t: Option<u64>) -> Self {
        self.tx = t;
        self
    }

    pub fn role(mut self, r: Role) -> Self {
        self.role = r;
        self
    }

    pub fn of(mut self, e: EventId) -> Self {
        self.of = Some(e);
        self
    }
}

impl TraceBuilder {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            ..Self::default()
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn push(&mut self, spec: EventSpec) -> EventId {
        let id = self.trace.events.len() as u64;
        let po = self.po.entry(spec.actor).or_insert(0);
        let po_index = *po;
        *po += 1;
        self.trace.events.push(TraceEvent {
            id,
            actor: spec.actor,
            kind: spec.kind,
            range: spec.range,
            po_index,
            persist_stamp: spec.stamp,
            shared: spec.shared,
            proc: spec.proc,
            tx: spec.tx,
            role: spec.role,
            of: spec.of,
        });
        id
    }

    pub fn edge(&mut self, from: EventId, to: EventId, kind: EdgeKind) {
        if from != to {
            self.trace.edges.push(Edge { from, to, kind });
        }
    }

    pub fn rf(&mut self, read: EventId, write: EventId) {
        self.trace.rf.push((read, write));
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        let mut b = TraceBuilder::new(true);
        let w = b.push(
            EventSpec::new(Actor::Cpu(ThreadId(0)), EventKind::Write)
                .range(DevRange::new(0, 0x100, 8))
                .shared(true)
                .role(Role::Data),
        );
        let p = b.push(
            EventSpec::new(Actor::Ndp { device: 1, unit: 2 }, EventKind::Persist)
                .range(DevRange::new(1, 0x2000, 8))
                .stamp(0)
                .proc(3)
                .tx(Some(1))
                .role(Role::Log),
        );
        b.edge(w, p, EdgeKind::Dispatch);
        b.push(EventSpec::new(Actor::Cpu(ThreadId(0)), EventKind::Crash));
        let r = b.push(
            EventSpec::new(Actor::Handler(1), EventKind::RecoveryRead).range(DevRange::new(1, 0x2000, 8)),
        );
        b.rf(r, p);
        b.into_trace()
    }

    #[test]
    fn text_round_trip() {
        let t = sample();
        let text = t.to_text();
        assert!(text.contains("event id=1 actor=ndp:1.2 kind=persist range=1:0x2000+8 po=0 stamp=0"));
        assert_eq!(Trace::parse(&text).unwrap(), t);
        t.validate().unwrap();
    }

    #[test]
    fn field_order_is_enforced() {
        let bad = "event actor=cpu:0 id=0 kind=read range=- po=0 stamp=- shared=0 proc=- tx=- role=none of=-";
        assert!(matches!(Trace::parse(bad), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn validate_rejects_stamp_on_plain_write() {
        let mut t = sample();
        t.events[0].persist_stamp = Some(9);
        assert!(t.validate().is_err());
    }

    #[test]
    fn validate_rejects_rf_after_crash() {
        let mut t = sample();
        let e = t.events[1].clone();
        t.events.swap(1, 2);
        t.events[1].id = 1;
        t.events[2] = TraceEvent { id: 2, ..e };
        t.edges.clear();
        t.rf = vec![(3, 2)];
        assert!(t.validate().is_err());
    }
}
