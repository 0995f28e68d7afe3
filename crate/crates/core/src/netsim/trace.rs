//! JSON Lines event trace. The first line is a header, every further line one event.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::chaindag::{BlockId, BlockRecord, ForkRule};
use crate::config::Experiment;
use crate::entropy::ChainWeight;
use crate::minesim::MiningMode;
use crate::time::SimTime;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceNode {
    pub id: String,
    pub rule: ForkRule,
    pub honest: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_digest: String,
    pub seed: u64,
    pub rng: String,
    pub mining_stream: u64,
    pub network_stream: u64,
    pub experiment: Experiment,
    pub field_bits: u32,
    pub m_t: u32,
    pub m_d: u32,
    pub mining_mode: MiningMode,
    pub nodes: Vec<TraceNode>,
    /// Bound on first-delivery latency between two nodes; absent when unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_path_delay_ms: Option<f64>,
}

/// What a delivery did at the receiving node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    NewTip,
    SideBranch,
    /// Held until a linked block arrives.
    Buffered,
    Invalid,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Found {
        seq: u64,
        time: SimTime,
        node: u32,
        block: BlockRecord,
        poem_weight: ChainWeight,
        published: bool,
        tip: BlockId,
    },
    Delivered {
        seq: u64,
        time: SimTime,
        node: u32,
        id: BlockId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<u32>,
        delivery: Delivery,
        tip: BlockId,
        reorg_depth: u64,
    },
    Reveal {
        seq: u64,
        time: SimTime,
        node: u32,
        miner: u32,
        ids: Vec<BlockId>,
    },
}

impl TraceEvent {
    pub fn seq(&self) -> u64 {
        match self {
            TraceEvent::Found { seq, .. } | TraceEvent::Delivered { seq, .. } | TraceEvent::Reveal { seq, .. } => *seq,
        }
    }

    pub fn time(&self) -> SimTime {
        match self {
            TraceEvent::Found { time, .. } | TraceEvent::Delivered { time, .. } | TraceEvent::Reveal { time, .. } => *time,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = serde_json::to_value(&self.header)?;
        let map = header.as_object_mut().expect("header is an object");
        let mut line = serde_json::Map::with_capacity(map.len() + 1);
        line.insert("event".into(), "header".into());
        line.append(map);
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to memory");
        out
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Trace> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| bad("empty trace".into()))??;
        let mut value: serde_json::Value = serde_json::from_str(&first)?;
        let kind = value.as_object_mut().and_then(|m| m.remove("event"));
        if kind.as_ref().and_then(|k| k.as_str()) != Some("header") {
            return Err(bad("first trace line is not a header".into()));
        }
        let header: TraceHeader = serde_json::from_value(value)?;
        if header.schema_version != TRACE_SCHEMA_VERSION {
            return Err(bad(format!("unsupported trace schema {}", header.schema_version)));
        }
        let mut events = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                events.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Trace { header, events })
    }
}
