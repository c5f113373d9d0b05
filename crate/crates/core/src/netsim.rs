//! Single-threaded discrete-event network simulator.
//!
//! Nodes are [`Process`] implementations driven by message deliveries and
//! timers. Events run in `(time, insertion sequence)` order, and all
//! randomness comes from one seeded generator: stream 0 drives the network
//! (latency, drops), stream `i + 1` is handed to node `i`. The same config,
//! the same processes and the same fault directives always yield the same
//! trace.

use std::any::Any;
use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::types::Hash;

pub type NodeId = usize;

/// What the trace needs to know about a message.
pub trait SimMessage: Clone {
    fn kind(&self) -> &'static str;
    fn digest(&self) -> Hash;
}

pub trait Process<M>: Any {
    fn on_start(&mut self, _ctx: &mut Context<'_, M>) {}
    fn on_message(&mut self, ctx: &mut Context<'_, M>, from: NodeId, message: M);
    fn on_timer(&mut self, _ctx: &mut Context<'_, M>, _timer: u64) {}

    /// Switches the node to equivocating behaviour. Processes that have no
    /// such mode return `false`.
    fn make_equivocating(&mut self) -> bool {
        false
    }

    fn as_any(&self) -> &dyn Any;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown or unsupported fault directive: {0}")]
    UnknownDirective(String),
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
}

/// Messages between the two sides are lost while `start_ms <= now < end_ms`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub side_a: BTreeSet<NodeId>,
    pub side_b: BTreeSet<NodeId>,
    pub start_ms: u64,
    pub end_ms: u64,
}

impl Partition {
    pub fn blocks(&self, from: NodeId, to: NodeId, now_ms: u64) -> bool {
        if now_ms < self.start_ms || now_ms >= self.end_ms {
            return false;
        }
        (self.side_a.contains(&from) && self.side_b.contains(&to))
            || (self.side_b.contains(&from) && self.side_a.contains(&to))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    pub drop_rate: f64,
    pub partitions: Vec<Partition>,
    /// Keep per-event trace records. Off for long sweeps.
    pub record_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            latency_min_ms: 5,
            latency_max_ms: 50,
            drop_rate: 0.0,
            partitions: Vec::new(),
            record_trace: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.latency_min_ms > self.latency_max_ms {
            return Err(SimError::InvalidConfig("latency_min_ms > latency_max_ms"));
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(SimError::InvalidConfig("drop_rate outside [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultDirective {
    Crash { node: NodeId, at_ms: u64 },
    ByzantineEquivocate { node: NodeId },
    DelayAll { node: NodeId, extra_ms: u64 },
}

impl FaultDirective {
    pub fn node(&self) -> NodeId {
        match self {
            FaultDirective::Crash { node, .. }
            | FaultDirective::ByzantineEquivocate { node }
            | FaultDirective::DelayAll { node, .. } => *node,
        }
    }
}

impl fmt::Display for FaultDirective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultDirective::Crash { node, at_ms } => write!(f, "crash:{node}@{at_ms}"),
            FaultDirective::ByzantineEquivocate { node } => write!(f, "equivocate:{node}"),
            FaultDirective::DelayAll { node, extra_ms } => write!(f, "delay:{node}+{extra_ms}"),
        }
    }
}

/// Parses `crash:NODE@MS`, `equivocate:NODE` and `delay:NODE+MS`.
impl FromStr for FaultDirective {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SimError::UnknownDirective(s.to_string());
        let (name, rest) = s.split_once(':').ok_or_else(bad)?;
        let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
        match name.trim() {
            "crash" => {
                let (node, at) = rest.split_once('@').ok_or_else(bad)?;
                Ok(FaultDirective::Crash {
                    node: num(node)? as NodeId,
                    at_ms: num(at)?,
                })
            }
            "equivocate" => Ok(FaultDirective::ByzantineEquivocate {
                node: num(rest)? as NodeId,
            }),
            "delay" => {
                let (node, extra) = rest.split_once('+').ok_or_else(bad)?;
                Ok(FaultDirective::DelayAll {
                    node: num(node)? as NodeId,
                    extra_ms: num(extra)?,
                })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceKind {
    Deliver,
    Drop,
    Timer,
    /// Event addressed to a crashed node.
    Skip,
    Inject,
    /// The run stopped at its time limit.
    Limit,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Deliver => "deliver",
            TraceKind::Drop => "drop",
            TraceKind::Timer => "timer",
            TraceKind::Skip => "skip",
            TraceKind::Inject => "inject",
            TraceKind::Limit => "limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time_ms: u64,
    pub kind: TraceKind,
    pub from: Option<NodeId>,
    pub to: Option<NodeId>,
    /// Message kind, timer id or directive text.
    pub detail: String,
    pub hash: Option<Hash>,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let node = |n: Option<NodeId>| n.map_or_else(|| "-".to_string(), |n| n.to_string());
        write!(
            f,
            "{} {} {} {} {} {}",
            self.time_ms,
            self.kind.as_str(),
            node(self.from),
            node(self.to),
            if self.detail.is_empty() { "-" } else { &self.detail },
            self.hash.map_or_else(|| "-".to_string(), |h| h.to_string()),
        )
    }
}

pub fn render_trace(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// The predicate held when the run stopped.
    pub reached: bool,
    pub end_time_ms: u64,
    pub events_processed: u64,
    /// Records produced during this call (empty unless `record_trace`).
    pub trace: Vec<TraceRecord>,
}

enum EventKind<M> {
    Deliver { from: NodeId, to: NodeId, message: M },
    Timer { node: NodeId, id: u64 },
    Inject(FaultDirective),
}

struct Scheduled<M> {
    time: u64,
    seq: u64,
    kind: EventKind<M>,
}

impl<M> PartialEq for Scheduled<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<M> Eq for Scheduled<M> {}

impl<M> PartialOrd for Scheduled<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so BinaryHeap pops the earliest event first.
impl<M> Ord for Scheduled<M> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

enum Outgoing<M> {
    Message { to: NodeId, message: M },
    Timer { after_ms: u64, id: u64 },
}

/// A node's handle on the simulator during a callback.
pub struct Context<'a, M> {
    node: NodeId,
    node_count: usize,
    now_ms: u64,
    rng: &'a mut ChaCha8Rng,
    outbox: Vec<Outgoing<M>>,
}

impl<M> Context<'_, M> {
    pub fn id(&self) -> NodeId {
        self.node
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// This node's private random stream.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn send(&mut self, to: NodeId, message: M) -> Result<(), SimError> {
        if to >= self.node_count {
            return Err(SimError::UnknownNode(to));
        }
        self.outbox.push(Outgoing::Message { to, message });
        Ok(())
    }

    /// Fires `on_timer(id)` after the delay. Ids are chosen by the process.
    pub fn set_timer(&mut self, after_ms: u64, id: u64) {
        self.outbox.push(Outgoing::Timer { after_ms, id });
    }
}

struct Slot<M> {
    process: Box<dyn Process<M>>,
    rng: ChaCha8Rng,
    crashed: bool,
    extra_delay_ms: u64,
}

pub struct Simulation<M: SimMessage> {
    config: SimConfig,
    now_ms: u64,
    seq: u64,
    queue: BinaryHeap<Scheduled<M>>,
    nodes: Vec<Slot<M>>,
    net_rng: ChaCha8Rng,
    started: bool,
    trace: Vec<TraceRecord>,
    events_processed: u64,
    messages_dropped: u64,
}

impl<M: SimMessage + 'static> Simulation<M> {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut net_rng = ChaCha8Rng::seed_from_u64(config.seed);
        net_rng.set_stream(0);
        Ok(Simulation {
            config,
            now_ms: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes: Vec::new(),
            net_rng,
            started: false,
            trace: Vec::new(),
            events_processed: 0,
            messages_dropped: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Registers a node. Nodes added after the first run start immediately.
    pub fn add_node(&mut self, process: Box<dyn Process<M>>) -> NodeId {
        let id = self.nodes.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(id as u64 + 1);
        self.nodes.push(Slot {
            process,
            rng,
            crashed: false,
            extra_delay_ms: 0,
        });
        if self.started {
            self.start_node(id);
        }
        id
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn is_crashed(&self, node: NodeId) -> bool {
        self.nodes.get(node).is_some_and(|s| s.crashed)
    }

    pub fn messages_dropped(&self) -> u64 {
        self.messages_dropped
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    /// Downcasts a node's process for inspection.
    pub fn process<P: 'static>(&self, node: NodeId) -> Option<&P> {
        self.nodes.get(node)?.process.as_any().downcast_ref::<P>()
    }

    /// Schedules a delivery from `from` to `to`, subject to drops,
    /// partitions and the sender's extra delay.
    pub fn send(&mut self, from: NodeId, to: NodeId, message: M) -> Result<(), SimError> {
        if from >= self.nodes.len() {
            return Err(SimError::UnknownNode(from));
        }
        if to >= self.nodes.len() {
            return Err(SimError::UnknownNode(to));
        }
        let dropped = (self.config.drop_rate > 0.0 && self.net_rng.gen_bool(self.config.drop_rate))
            || self
                .config
                .partitions
                .iter()
                .any(|p| p.blocks(from, to, self.now_ms));
        if dropped {
            self.messages_dropped += 1;
            self.record(TraceKind::Drop, Some(from), Some(to), &message);
            return Ok(());
        }
        let latency = self
            .net_rng
            .gen_range(self.config.latency_min_ms..=self.config.latency_max_ms)
            + self.nodes[from].extra_delay_ms;
        self.push(self.now_ms + latency, EventKind::Deliver { from, to, message });
        Ok(())
    }

    /// Crashes are scheduled at their time; the other directives apply now.
    pub fn inject_fault(&mut self, directive: FaultDirective) -> Result<(), SimError> {
        let node = directive.node();
        if node >= self.nodes.len() {
            return Err(SimError::UnknownNode(node));
        }
        match directive {
            FaultDirective::Crash { at_ms, .. } => {
                self.push(at_ms.max(self.now_ms), EventKind::Inject(directive));
                Ok(())
            }
            _ => self.apply_fault(directive),
        }
    }

    fn apply_fault(&mut self, directive: FaultDirective) -> Result<(), SimError> {
        let text = directive.to_string();
        let slot = &mut self.nodes[directive.node()];
        match directive {
            FaultDirective::Crash { .. } => slot.crashed = true,
            FaultDirective::ByzantineEquivocate { .. } => {
                if !slot.process.make_equivocating() {
                    return Err(SimError::UnknownDirective(text));
                }
            }
            FaultDirective::DelayAll { extra_ms, .. } => slot.extra_delay_ms += extra_ms,
        }
        if self.config.record_trace {
            self.trace.push(TraceRecord {
                time_ms: self.now_ms,
                kind: TraceKind::Inject,
                from: None,
                to: Some(directive.node()),
                detail: text,
                hash: None,
            });
        }
        Ok(())
    }

    /// Runs until `done` holds (checked before the first event and after
    /// each one) or the next event lies beyond `time_limit_ms`.
    pub fn run_until<F>(&mut self, mut done: F, time_limit_ms: u64) -> RunOutcome
    where
        F: FnMut(&Simulation<M>) -> bool,
    {
        let first_event = self.events_processed;
        let first_record = self.trace.len();
        self.ensure_started();
        let mut reached = done(self);
        while !reached {
            let next_time = match self.queue.peek() {
                Some(ev) if ev.time <= time_limit_ms => ev.time,
                _ => break,
            };
            let ev = self.queue.pop().expect("peeked");
            self.now_ms = self.now_ms.max(next_time);
            self.events_processed += 1;
            self.dispatch(ev.kind);
            reached = done(self);
        }
        if !reached {
            self.now_ms = self.now_ms.max(time_limit_ms);
            if self.config.record_trace {
                self.trace.push(TraceRecord {
                    time_ms: self.now_ms,
                    kind: TraceKind::Limit,
                    from: None,
                    to: None,
                    detail: String::new(),
                    hash: None,
                });
            }
        }
        RunOutcome {
            reached,
            end_time_ms: self.now_ms,
            events_processed: self.events_processed - first_event,
            trace: self.trace.split_off(first_record),
        }
    }

    /// Runs every event up to and including `time_limit_ms`.
    pub fn run_for(&mut self, time_limit_ms: u64) -> RunOutcome {
        self.run_until(|_| false, time_limit_ms)
    }

    fn ensure_started(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        for id in 0..self.nodes.len() {
            self.start_node(id);
        }
    }

    fn start_node(&mut self, id: NodeId) {
        self.with_process(id, |p, ctx| p.on_start(ctx));
    }

    fn dispatch(&mut self, kind: EventKind<M>) {
        match kind {
            EventKind::Deliver { from, to, message } => {
                if self.nodes[to].crashed {
                    self.record(TraceKind::Skip, Some(from), Some(to), &message);
                    return;
                }
                self.record(TraceKind::Deliver, Some(from), Some(to), &message);
                self.with_process(to, |p, ctx| p.on_message(ctx, from, message));
            }
            EventKind::Timer { node, id } => {
                if self.nodes[node].crashed {
                    return;
                }
                if self.config.record_trace {
                    self.trace.push(TraceRecord {
                        time_ms: self.now_ms,
                        kind: TraceKind::Timer,
                        from: None,
                        to: Some(node),
                        detail: id.to_string(),
                        hash: None,
                    });
                }
                self.with_process(node, |p, ctx| p.on_timer(ctx, id));
            }
            EventKind::Inject(directive) => {
                // Node ids were checked when the directive was accepted.
                let _ = self.apply_fault(directive);
            }
        }
    }

    fn with_process<F>(&mut self, id: NodeId, f: F)
    where
        F: FnOnce(&mut dyn Process<M>, &mut Context<'_, M>),
    {
        let node_count = self.nodes.len();
        let now_ms = self.now_ms;
        let slot = &mut self.nodes[id];
        let mut ctx = Context {
            node: id,
            node_count,
            now_ms,
            rng: &mut slot.rng,
            outbox: Vec::new(),
        };
        f(slot.process.as_mut(), &mut ctx);
        let outbox = ctx.outbox;
        for out in outbox {
            match out {
                Outgoing::Message { to, message } => {
                    // Context::send already rejected unknown targets.
                    let _ = self.send(id, to, message);
                }
                Outgoing::Timer { after_ms, id: timer } => {
                    self.push(now_ms + after_ms, EventKind::Timer { node: id, id: timer });
                }
            }
        }
    }

    fn push(&mut self, time: u64, kind: EventKind<M>) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Scheduled { time, seq, kind });
    }

    fn record(&mut self, kind: TraceKind, from: Option<NodeId>, to: Option<NodeId>, message: &M) {
        if !self.config.record_trace {
            return;
        }
        self.trace.push(TraceRecord {
            time_ms: self.now_ms,
            kind,
            from,
            to,
            detail: message.kind().to_string(),
            hash: Some(message.digest()),
        });
    }
}
