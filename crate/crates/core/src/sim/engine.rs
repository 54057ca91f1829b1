use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{
    AccessKind, KernelInputs, MemEvent, MemTrace, SimConfig, SimError, SimResult, SimStats, Trap,
};
use crate::ir::{BinOp, ElasticNetlist, MemOpId, NetNodeKind, NodeId, PortRef};

const UNCONNECTED: usize = usize::MAX;
const STATE_SLOTS: u8 = 2;

#[derive(Clone, Copy, Debug, Default)]
struct Wire {
    valid: bool,
    ready: bool,
    data: i32,
}

impl Wire {
    fn fired(&self) -> bool {
        self.valid && self.ready
    }
}

/// Monotone signal updates used by the fixpoints: within one pass valids
/// only rise and readies only fall.
struct Signals<'a>(&'a mut [Wire]);

impl Signals<'_> {
    fn v(&self, c: usize) -> bool {
        self.0[c].valid
    }
    fn r(&self, c: usize) -> bool {
        self.0[c].ready
    }
    fn d(&self, c: usize) -> i32 {
        self.0[c].data
    }
    fn fired(&self, c: usize) -> bool {
        self.0[c].fired()
    }
    fn set_valid(&mut self, c: usize, data: i32) -> bool {
        let w = &mut self.0[c];
        if w.valid {
            return false;
        }
        w.valid = true;
        w.data = data;
        true
    }
    /// Readies start high and only fall.
    fn limit_ready(&mut self, c: usize, allowed: bool) -> bool {
        let w = &mut self.0[c];
        if w.ready && !allowed {
            w.ready = false;
            return true;
        }
        false
    }
}

#[derive(Clone, Debug)]
enum State {
    Stateless,
    Emitted(bool),
    Source(usize),
    Exit(Vec<Option<i32>>),
    Done(Vec<bool>),
    Queue(VecDeque<i32>),
    LoopBuf(Option<i32>),
    /// Tokens in the state-output register of a load or store. It has a
    /// skid slot, so issuing never waits on the consumer's ready.
    Held(u8),
    AddrQueue {
        entries: VecDeque<i32>,
        /// This cycle's check result, once decided.
        decided: Option<bool>,
        /// The waiting check address already passed in an earlier cycle.
        /// Stores enqueued since then are younger than the load.
        passed: bool,
    },
}

#[derive(Clone, Debug)]
struct SimNode {
    ins: Vec<usize>,
    outs: Vec<usize>,
    state: State,
    /// Memory unit and response slot of a load, or unit of a port node.
    unit: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
struct Port {
    op: MemOpId,
    store: bool,
    chans: Vec<usize>,
}

#[derive(Clone, Debug)]
struct MemUnit {
    array: usize,
    ports: Vec<Port>,
    /// Per load port: responses as (cycle they become visible, data).
    resp: Vec<VecDeque<(u64, i32)>>,
    granted: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Done,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSnapshot {
    pub src: PortRef,
    pub dst: PortRef,
    pub valid: bool,
    pub ready: bool,
    pub data: i32,
}

/// Signals of the last simulated cycle and buffer contents after it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Index of the cycle the signals belong to.
    pub cycle: u64,
    pub channels: Vec<ChannelSnapshot>,
    pub occupancy: Vec<(NodeId, usize)>,
}

impl Snapshot {
    pub fn fired(&self, src: NodeId, port: usize) -> Option<i32> {
        self.channels
            .iter()
            .find(|c| c.src.node == src && c.src.port == port && c.valid && c.ready)
            .map(|c| c.data)
    }

    pub fn occupancy_of(&self, node: NodeId) -> usize {
        self.occupancy
            .iter()
            .find(|(n, _)| *n == node)
            .map_or(0, |(_, k)| *k)
    }
}

/// A node holding tokens it cannot pass on, or waiting for missing inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StalledNode {
    pub node: NodeId,
    pub label: String,
    pub valid_inputs: Vec<usize>,
    pub blocked_outputs: Vec<usize>,
}

pub struct Simulator<'a> {
    net: &'a ElasticNetlist,
    cfg: SimConfig,
    args: Vec<i32>,
    memories: Vec<Vec<i32>>,
    wires: Vec<Wire>,
    nodes: Vec<SimNode>,
    order: Vec<usize>,
    units: Vec<MemUnit>,
    trace: MemTrace,
    cycle: u64,
    finished: Option<u64>,
    transfers: u64,
    peak: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(
        net: &'a ElasticNetlist,
        inputs: &KernelInputs,
        cfg: SimConfig,
    ) -> Result<Self, SimError> {
        if cfg.max_cycles == 0 {
            return Err(SimError::Inputs("max_cycles must be positive".into()));
        }
        if inputs.arrays.len() != net.arrays.len() {
            return Err(SimError::Inputs(format!(
                "expected {} arrays, got {}",
                net.arrays.len(),
                inputs.arrays.len()
            )));
        }
        for (info, data) in net.arrays.iter().zip(&inputs.arrays) {
            if data.len() != info.len as usize {
                return Err(SimError::Inputs(format!(
                    "array '{}' has length {}, got {} values",
                    info.name,
                    info.len,
                    data.len()
                )));
            }
        }
        let index: HashMap<NodeId, usize> = net
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect();
        let mut nodes: Vec<SimNode> = net
            .nodes
            .iter()
            .map(|n| SimNode {
                ins: vec![UNCONNECTED; n.n_inputs],
                outs: vec![UNCONNECTED; n.outputs.len()],
                state: initial_state(&n.kind, n.n_inputs, n.outputs.len()),
                unit: None,
            })
            .collect();
        for (c, ch) in net.channels.iter().enumerate() {
            let (Some(&s), Some(&d)) = (index.get(&ch.src.node), index.get(&ch.dst.node)) else {
                return Err(SimError::Netlist(format!(
                    "channel {c} references an unknown node"
                )));
            };
            let slot = nodes[s].outs.get_mut(ch.src.port);
            match slot {
                Some(x) if *x == UNCONNECTED => *x = c,
                _ => return Err(SimError::Netlist(format!("bad source port on channel {c}"))),
            }
            let slot = nodes[d].ins.get_mut(ch.dst.port);
            match slot {
                Some(x) if *x == UNCONNECTED => *x = c,
                _ => {
                    return Err(SimError::Netlist(format!(
                        "bad destination port on channel {c}"
                    )))
                }
            }
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.ins.iter().chain(&n.outs).any(|&c| c == UNCONNECTED) {
                return Err(SimError::Netlist(format!(
                    "node {} has an unconnected port",
                    net.nodes[i].id
                )));
            }
        }
        for n in &net.nodes {
            if let NetNodeKind::Arg { index } = n.kind {
                if index >= inputs.args.len() {
                    return Err(SimError::Inputs(format!("missing scalar argument {index}")));
                }
            }
        }

        let mut units = Vec::new();
        let mut unit_of_array: HashMap<u32, usize> = HashMap::new();
        for (i, n) in net.nodes.iter().enumerate() {
            let NetNodeKind::MemReq { array, ports } = &n.kind else {
                continue;
            };
            let Some(pos) = net.arrays.iter().position(|a| a.id == *array) else {
                return Err(SimError::Netlist(format!("unknown array {array}")));
            };
            let mut next = 0;
            let mut list = Vec::new();
            for p in ports {
                let k = if p.store { 2 } else { 1 };
                let chans = nodes[i].ins.get(next..next + k).map(<[usize]>::to_vec);
                let Some(chans) = chans else {
                    return Err(SimError::Netlist(format!("{} has too few inputs", n.id)));
                };
                next += k;
                list.push(Port {
                    op: p.op,
                    store: p.store,
                    chans,
                });
            }
            let loads = list.iter().filter(|p| !p.store).count();
            unit_of_array.insert(array.0, units.len());
            nodes[i].unit = Some((units.len(), 0));
            units.push(MemUnit {
                array: pos,
                granted: vec![false; list.len()],
                ports: list,
                resp: vec![VecDeque::new(); loads],
            });
        }
        for (i, n) in net.nodes.iter().enumerate() {
            match &n.kind {
                NetNodeKind::MemResp { array, .. } => {
                    let Some(&u) = unit_of_array.get(&array.0) else {
                        return Err(SimError::Netlist(format!("{} has no MEM-REQ", n.id)));
                    };
                    nodes[i].unit = Some((u, 0));
                }
                NetNodeKind::Load { .. } => {
                    let resp_ch = *nodes[i].ins.last().expect("load has inputs");
                    let src = net.channels[resp_ch].src;
                    let s = index[&src.node];
                    if !matches!(net.nodes[s].kind, NetNodeKind::MemResp { .. }) {
                        return Err(SimError::Netlist(format!(
                            "{} is not attached to a memory port",
                            n.id
                        )));
                    }
                    let NetNodeKind::MemResp { array, .. } = &net.nodes[s].kind else {
                        unreachable!()
                    };
                    let u = unit_of_array[&array.0];
                    nodes[i].unit = Some((u, src.port));
                }
                _ => {}
            }
        }

        let order = eval_order(net, &index);
        Ok(Simulator {
            net,
            cfg,
            args: inputs.args.clone(),
            memories: inputs.arrays.clone(),
            wires: vec![Wire::default(); net.channels.len()],
            nodes,
            order,
            units,
            trace: MemTrace::default(),
            cycle: 0,
            finished: None,
            transfers: 0,
            peak: 0,
        })
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn is_done(&self) -> bool {
        self.finished.is_some()
    }

    pub fn memories(&self) -> &[Vec<i32>] {
        &self.memories
    }

    pub fn trace(&self) -> &MemTrace {
        &self.trace
    }

    /// Advances exactly one cycle.
    pub fn step(&mut self) -> Result<Status, SimError> {
        if self.finished.is_some() {
            return Ok(Status::Done);
        }
        if self.cycle >= self.cfg.max_cycles {
            return Err(SimError::MaxCycles {
                limit: self.cfg.max_cycles,
            });
        }
        for w in &mut self.wires {
            *w = Wire::default();
        }
        for n in &mut self.nodes {
            if let State::AddrQueue {
                decided, passed, ..
            } = &mut n.state
            {
                *decided = passed.then_some(true);
            }
        }
        for u in &mut self.units {
            u.granted.iter_mut().for_each(|g| *g = false);
        }
        loop {
            self.settle();
            if self.decide_queues() {
                continue;
            }
            if self.arbitrate() {
                continue;
            }
            break;
        }
        let changed = self.commit()?;
        self.cycle += 1;
        if self.exit_complete() {
            self.finished = Some(self.cycle);
            return Ok(Status::Done);
        }
        if !changed && !self.time_dependent() {
            return Err(SimError::Deadlock {
                cycle: self.cycle,
                stalled: self.stalled(),
            });
        }
        Ok(Status::Running)
    }

    /// Runs until the result is produced.
    pub fn run(&mut self) -> Result<(), SimError> {
        while self.step()? == Status::Running {}
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            cycle: self.cycle.saturating_sub(1),
            channels: self
                .net
                .channels
                .iter()
                .zip(&self.wires)
                .map(|(c, w)| ChannelSnapshot {
                    src: c.src,
                    dst: c.dst,
                    valid: w.valid,
                    ready: w.ready,
                    data: w.data,
                })
                .collect(),
            occupancy: self
                .net
                .nodes
                .iter()
                .zip(&self.nodes)
                .filter_map(|(n, s)| occupancy(&s.state).map(|k| (n.id, k)))
                .collect(),
        }
    }

    pub fn into_result(self) -> SimResult {
        let cycles = self.finished.unwrap_or(self.cycle);
        let ret =
            self.net
                .nodes
                .iter()
                .zip(&self.nodes)
                .find_map(|(n, s)| match (&n.kind, &s.state) {
                    (NetNodeKind::Exit { returns: true }, State::Exit(got)) => {
                        got.first().copied().flatten()
                    }
                    _ => None,
                });
        SimResult {
            cycles,
            ret,
            memories: self.memories,
            trace: self.trace,
            stats: SimStats {
                cycles,
                census: self.net.census(),
                buffer_slots: self.net.buffer_slots(),
                peak_occupancy: self.peak,
                transfers: self.transfers,
            },
        }
    }

    /// Settles the combinational phase. Readies are the greatest fixpoint
    /// for the current valids (so a token ring whose every stage can move
    /// does move); valids are the least fixpoint for the current readies.
    /// The two alternate until the valids stop growing. Memory grants are
    /// fixed inputs to both.
    fn settle(&mut self) {
        let bound = 4 * self.nodes.len() + 8;
        for _ in 0..bound {
            for w in &mut self.wires {
                w.ready = true;
            }
            for u in &self.units {
                for (p, port) in u.ports.iter().enumerate() {
                    for &c in &port.chans {
                        self.wires[c].ready = u.granted[p];
                    }
                }
            }
            for _ in 0..bound {
                let mut changed = false;
                for k in (0..self.order.len()).rev() {
                    changed |= self.eval_ready(self.order[k]);
                }
                if !changed {
                    break;
                }
            }
            let mut grew = false;
            for _ in 0..bound {
                let mut changed = false;
                for k in 0..self.order.len() {
                    changed |= self.eval_valid(self.order[k]);
                }
                grew |= changed;
                if !changed {
                    break;
                }
            }
            if !grew {
                return;
            }
        }
        panic!("combinational phase did not converge");
    }

    fn eval_valid(&mut self, i: usize) -> bool {
        let kind = &self.net.nodes[i].kind;
        let node = &self.nodes[i];
        let (ins, outs) = (&node.ins, &node.outs);
        let mut s = Signals(&mut self.wires);
        let mut ch = false;
        match kind {
            NetNodeKind::Const { value, .. } => {
                if !matches!(node.state, State::Emitted(true)) {
                    ch |= s.set_valid(outs[0], *value);
                }
            }
            NetNodeKind::Arg { index } => {
                if matches!(node.state, State::Emitted(false)) {
                    ch |= s.set_valid(outs[0], self.args[*index]);
                }
            }
            NetNodeKind::StateEntry => {
                if matches!(node.state, State::Emitted(false)) {
                    ch |= s.set_valid(outs[0], 0);
                }
            }
            NetNodeKind::Source { tokens } => {
                if let State::Source(next) = node.state {
                    if let Some(&(at, v)) = tokens.get(next) {
                        if at <= self.cycle {
                            ch |= s.set_valid(outs[0], v as i32);
                        }
                    }
                }
            }
            NetNodeKind::Binary { bin } => {
                if s.v(ins[0]) && s.v(ins[1]) {
                    let value = bin.eval(s.d(ins[0]), s.d(ins[1])).unwrap_or(0);
                    ch |= s.set_valid(outs[0], value);
                }
            }
            NetNodeKind::Compare { cmp, .. } => {
                if s.v(ins[0]) && s.v(ins[1]) {
                    ch |= s.set_valid(outs[0], cmp.eval(s.d(ins[0]), s.d(ins[1])) as i32);
                }
            }
            NetNodeKind::Branch => {
                if s.v(ins[0]) && s.v(ins[1]) {
                    let o = outs[select(s.d(ins[0]), outs.len())];
                    ch |= s.set_valid(o, s.d(ins[1]));
                }
            }
            NetNodeKind::Ndmux => {
                if s.v(ins[0]) {
                    let src = ins[1 + select(s.d(ins[0]), ins.len() - 1)];
                    if s.v(src) {
                        ch |= s.set_valid(outs[0], s.d(src));
                    }
                }
            }
            NetNodeKind::Dmux => {
                if ins.iter().all(|&c| s.v(c)) {
                    let src = ins[1 + select(s.d(ins[0]), ins.len() - 1)];
                    ch |= s.set_valid(outs[0], s.d(src));
                }
            }
            NetNodeKind::Fork | NetNodeKind::StateGate { .. } => {
                let State::Done(done) = &node.state else {
                    unreachable!()
                };
                if ins.iter().all(|&c| s.v(c)) {
                    let gate = ins.len() > 1;
                    for (j, &o) in outs.iter().enumerate() {
                        if !done[j] {
                            ch |= s.set_valid(o, s.d(if gate { ins[j] } else { ins[0] }));
                        }
                    }
                }
            }
            NetNodeKind::Buffer { opaque, .. } => {
                let State::Queue(q) = &node.state else {
                    unreachable!()
                };
                if let Some(&front) = q.front() {
                    ch |= s.set_valid(outs[0], front);
                } else if !opaque && s.v(ins[0]) {
                    ch |= s.set_valid(outs[0], s.d(ins[0]));
                }
            }
            NetNodeKind::PredBuf => {
                if let State::Queue(q) = &node.state {
                    if let Some(&front) = q.front() {
                        ch |= s.set_valid(outs[0], front);
                    }
                }
            }
            NetNodeKind::LoopBuf => {
                let State::LoopBuf(stored) = &node.state else {
                    unreachable!()
                };
                if s.v(ins[0]) {
                    if s.d(ins[0]) == 0 {
                        if s.v(ins[1]) {
                            ch |= s.set_valid(outs[0], s.d(ins[1]));
                        }
                    } else if let Some(v) = stored {
                        ch |= s.set_valid(outs[0], *v);
                    }
                }
            }
            NetNodeKind::Load { stateful, .. } => {
                let State::Held(reg) = node.state else {
                    unreachable!()
                };
                let (addr, resp) = (ins[0], ins[ins.len() - 1]);
                let (data, req) = (outs[0], outs[outs.len() - 1]);
                if s.v(resp) {
                    ch |= s.set_valid(data, s.d(resp));
                }
                let (u, slot) = node.unit.expect("load is ported");
                let pending = self.units[u].resp[slot].len();
                let slot_free = pending == 0 || (pending == 1 && s.fired(resp));
                let state_ok = !*stateful || (s.v(ins[1]) && reg < STATE_SLOTS);
                if s.v(addr) && slot_free && state_ok {
                    ch |= s.set_valid(req, s.d(addr));
                }
                if *stateful && reg > 0 {
                    ch |= s.set_valid(outs[1], 0);
                }
            }
            NetNodeKind::Store { .. } => {
                let State::Held(reg) = node.state else {
                    unreachable!()
                };
                if ins.iter().all(|&c| s.v(c)) && reg < STATE_SLOTS {
                    ch |= s.set_valid(outs[1], s.d(ins[0]));
                    ch |= s.set_valid(outs[2], s.d(ins[1]));
                }
                if reg > 0 {
                    ch |= s.set_valid(outs[0], 0);
                }
            }
            NetNodeKind::MemResp { .. } => {
                let (u, _) = node.unit.expect("port is attached");
                for (k, &o) in outs.iter().enumerate() {
                    if let Some(&(at, v)) = self.units[u].resp[k].front() {
                        if at <= self.cycle {
                            ch |= s.set_valid(o, v);
                        }
                    }
                }
            }
            NetNodeKind::AddrQueue { .. } => {
                let State::AddrQueue { decided, .. } = &node.state else {
                    unreachable!()
                };
                if *decided == Some(true) && s.v(ins[2]) {
                    ch |= s.set_valid(outs[0], s.d(ins[2]));
                }
            }
            NetNodeKind::Exit { .. } | NetNodeKind::Sink | NetNodeKind::MemReq { .. } => {}
        }
        ch
    }

    /// Lowers the readies of node `i`'s inputs to what its firing rule
    /// allows.
    fn eval_ready(&mut self, i: usize) -> bool {
        let kind = &self.net.nodes[i].kind;
        let node = &self.nodes[i];
        let (ins, outs) = (&node.ins, &node.outs);
        let mut s = Signals(&mut self.wires);
        let mut ch = false;
        match kind {
            NetNodeKind::Exit { .. } => {
                if let State::Exit(got) = &node.state {
                    for (k, g) in got.iter().enumerate() {
                        ch |= s.limit_ready(ins[k], g.is_none());
                    }
                }
            }
            NetNodeKind::Binary { .. } | NetNodeKind::Compare { .. } => {
                let go = s.v(ins[0]) && s.v(ins[1]) && s.r(outs[0]);
                ch |= s.limit_ready(ins[0], go) | s.limit_ready(ins[1], go);
            }
            NetNodeKind::Branch => {
                let go = s.v(ins[0]) && s.v(ins[1]) && s.r(outs[select(s.d(ins[0]), outs.len())]);
                ch |= s.limit_ready(ins[0], go) | s.limit_ready(ins[1], go);
            }
            NetNodeKind::Ndmux => {
                let sel = s.v(ins[0]).then(|| 1 + select(s.d(ins[0]), ins.len() - 1));
                let go = sel.is_some_and(|k| s.v(ins[k]) && s.r(outs[0]));
                ch |= s.limit_ready(ins[0], go);
                for (k, &c) in ins.iter().enumerate().skip(1) {
                    ch |= s.limit_ready(c, go && sel == Some(k));
                }
            }
            NetNodeKind::Dmux => {
                let go = ins.iter().all(|&c| s.v(c)) && s.r(outs[0]);
                for &c in ins {
                    ch |= s.limit_ready(c, go);
                }
            }
            NetNodeKind::Fork | NetNodeKind::StateGate { .. } => {
                let State::Done(done) = &node.state else {
                    unreachable!()
                };
                let go = ins.iter().all(|&c| s.v(c))
                    && outs.iter().enumerate().all(|(j, &o)| done[j] || s.r(o));
                for &c in ins {
                    ch |= s.limit_ready(c, go);
                }
            }
            NetNodeKind::Sink => {}
            NetNodeKind::Buffer { capacity, .. } => {
                let State::Queue(q) = &node.state else {
                    unreachable!()
                };
                ch |= s.limit_ready(ins[0], q.len() < *capacity as usize || s.r(outs[0]));
            }
            NetNodeKind::PredBuf => {
                let State::Queue(q) = &node.state else {
                    unreachable!()
                };
                ch |= s.limit_ready(ins[0], q.is_empty() || s.r(outs[0]));
            }
            NetNodeKind::LoopBuf => {
                let pb = s.v(ins[0]);
                let reload = pb && s.d(ins[0]) == 0;
                let go = pb && s.v(outs[0]) && s.r(outs[0]);
                ch |= s.limit_ready(ins[0], go);
                ch |= s.limit_ready(ins[1], go && reload);
            }
            NetNodeKind::Load { stateful, .. } => {
                let (resp, data, req) = (ins[ins.len() - 1], outs[0], outs[outs.len() - 1]);
                ch |= s.limit_ready(resp, s.r(data));
                let go = s.fired(req);
                ch |= s.limit_ready(ins[0], go);
                if *stateful {
                    ch |= s.limit_ready(ins[1], go);
                }
            }
            NetNodeKind::Store { .. } => {
                let go = s.fired(outs[1]);
                for &c in ins {
                    ch |= s.limit_ready(c, go);
                }
            }
            NetNodeKind::AddrQueue { capacity, .. } => {
                let State::AddrQueue {
                    entries, decided, ..
                } = &node.state
                else {
                    unreachable!()
                };
                ch |= s.limit_ready(ins[0], entries.len() < *capacity as usize);
                ch |= s.limit_ready(ins[1], !entries.is_empty());
                let go = *decided == Some(true) && s.v(ins[2]) && s.r(outs[0]);
                ch |= s.limit_ready(ins[2], go);
            }
            NetNodeKind::Const { .. }
            | NetNodeKind::Arg { .. }
            | NetNodeKind::StateEntry
            | NetNodeKind::Source { .. }
            | NetNodeKind::MemReq { .. }
            | NetNodeKind::MemResp { .. } => {}
        }
        ch
    }

    /// Decides the check of every queue whose load address has arrived.
    /// The address is compared against the stored entries and, for a store
    /// earlier in program order, the enqueue token of this cycle.
    fn decide_queues(&mut self) -> bool {
        let mut any = false;
        for (i, n) in self.net.nodes.iter().enumerate() {
            let NetNodeKind::AddrQueue { store, load, .. } = n.kind else {
                continue;
            };
            let node = &mut self.nodes[i];
            let (enq, check) = (node.ins[0], node.ins[2]);
            let State::AddrQueue {
                entries, decided, ..
            } = &mut node.state
            else {
                unreachable!()
            };
            if decided.is_some() || !self.wires[check].valid {
                continue;
            }
            let addr = self.wires[check].data;
            let same_cycle = store < load && self.wires[enq].valid && self.wires[enq].data == addr;
            *decided = Some(!same_cycle && !entries.contains(&addr));
            any = true;
        }
        any
    }

    /// Grants pending requests, at most two per memory per cycle, stores
    /// first. A load is held back if a store to its address was granted in
    /// the same cycle. Grants are never revoked within a cycle.
    fn arbitrate(&mut self) -> bool {
        let mut any = false;
        for u in &mut self.units {
            let mut used = u.granted.iter().filter(|g| **g).count();
            for pass_stores in [true, false] {
                for p in 0..u.ports.len() {
                    let port = &u.ports[p];
                    if used >= 2 || u.granted[p] || port.store != pass_stores {
                        continue;
                    }
                    if !port.chans.iter().all(|&c| self.wires[c].valid) {
                        continue;
                    }
                    let addr = self.wires[port.chans[0]].data;
                    let clash = u.ports.iter().enumerate().any(|(q, other)| {
                        q != p
                            && u.granted[q]
                            && other.store != port.store
                            && self.wires[other.chans[0]].data == addr
                    });
                    if clash {
                        continue;
                    }
                    u.granted[p] = true;
                    for &c in &port.chans {
                        self.wires[c].ready = true;
                    }
                    used += 1;
                    any = true;
                }
            }
        }
        any
    }

    /// Sequential phase. Returns whether any state changed.
    fn commit(&mut self) -> Result<bool, SimError> {
        let cycle = self.cycle;
        let w = &self.wires;
        let fired = |c: usize| w[c].fired();
        self.transfers += w.iter().filter(|x| x.fired()).count() as u64;
        let mut changed = false;

        for unit in &mut self.units {
            let len = self.memories[unit.array].len();
            let mut resp_k = 0;
            for (p, port) in unit.ports.iter().enumerate() {
                let slot = resp_k;
                if !port.store {
                    resp_k += 1;
                }
                if !unit.granted[p] {
                    continue;
                }
                let raw = w[port.chans[0]].data;
                let addr = raw as u32 as usize;
                if raw < 0 || addr >= len {
                    return Err(SimError::Trap {
                        trap: Trap::OutOfBounds {
                            op: port.op,
                            array: self.net.arrays[unit.array].id,
                            addr: raw as i64,
                            len: len as u32,
                        },
                        cycle,
                    });
                }
                let data = if port.store {
                    let v = w[port.chans[1]].data;
                    self.memories[unit.array][addr] = v;
                    v
                } else {
                    let v = self.memories[unit.array][addr];
                    unit.resp[slot].push_back((cycle + self.cfg.mem_latency as u64, v));
                    v
                };
                self.trace.push(MemEvent {
                    op: port.op,
                    kind: if port.store {
                        AccessKind::Write
                    } else {
                        AccessKind::Read
                    },
                    addr: addr as u32,
                    data,
                    cycle,
                });
                changed = true;
            }
        }

        for (i, n) in self.net.nodes.iter().enumerate() {
            let node = &mut self.nodes[i];
            let (ins, outs) = (&node.ins, &node.outs);
            match (&n.kind, &mut node.state) {
                (
                    NetNodeKind::Binary {
                        bin: BinOp::Div | BinOp::Rem,
                    },
                    _,
                ) => {
                    if fired(outs[0]) && w[ins[1]].data == 0 {
                        return Err(SimError::Trap {
                            trap: Trap::DivisionByZero,
                            cycle,
                        });
                    }
                }
                (_, State::Emitted(e)) => {
                    if matches!(
                        n.kind,
                        NetNodeKind::Const {
                            one_shot: false,
                            ..
                        }
                    ) {
                        continue;
                    }
                    if fired(outs[0]) && !*e {
                        *e = true;
                        changed = true;
                    }
                }
                (_, State::Source(next)) => {
                    if fired(outs[0]) {
                        *next += 1;
                        changed = true;
                    }
                }
                (_, State::Exit(got)) => {
                    for (k, g) in got.iter_mut().enumerate() {
                        if g.is_none() && fired(ins[k]) {
                            *g = Some(w[ins[k]].data);
                            changed = true;
                        }
                    }
                }
                (_, State::Done(done)) => {
                    if ins.iter().all(|&c| fired(c)) {
                        if done.iter().any(|d| *d) {
                            changed = true;
                        }
                        done.iter_mut().for_each(|d| *d = false);
                    } else {
                        for (j, &o) in outs.iter().enumerate() {
                            if fired(o) && !done[j] {
                                done[j] = true;
                                changed = true;
                            }
                        }
                    }
                }
                (_, State::Queue(q)) => {
                    let popped = fired(outs[0]);
                    let pushed = fired(ins[0]);
                    // A bypass through an empty FIFO leaves it as it was.
                    changed |= (popped || pushed) && !(q.is_empty() && popped && pushed);
                    if pushed {
                        q.push_back(w[ins[0]].data);
                    }
                    if popped {
                        q.pop_front();
                    }
                    self.peak = self.peak.max(q.len());
                }
                (_, State::LoopBuf(stored)) => {
                    if fired(outs[0]) && w[ins[0]].data == 0 {
                        let v = Some(w[ins[1]].data);
                        changed |= *stored != v;
                        *stored = v;
                    }
                }
                (kind, State::Held(reg)) => {
                    let (state_out, req) = match kind {
                        NetNodeKind::Load { stateful: true, .. } => {
                            (Some(outs[1]), outs[outs.len() - 1])
                        }
                        NetNodeKind::Load { .. } => (None, outs[outs.len() - 1]),
                        _ => (Some(outs[0]), outs[1]),
                    };
                    let before = *reg;
                    if state_out.is_some_and(fired) {
                        *reg -= 1;
                    }
                    if state_out.is_some() && fired(req) {
                        *reg += 1;
                    }
                    changed |= before != *reg;
                }
                (
                    _,
                    State::AddrQueue {
                        entries,
                        decided,
                        passed,
                    },
                ) => {
                    let now = *decided == Some(true) && !fired(outs[0]);
                    changed |= *passed != now;
                    *passed = now;
                    if fired(ins[1]) {
                        entries.pop_front();
                        changed = true;
                    }
                    if fired(ins[0]) {
                        entries.push_back(w[ins[0]].data);
                        changed = true;
                    }
                    self.peak = self.peak.max(entries.len());
                }
                (NetNodeKind::MemResp { .. }, _) => {
                    let (u, _) = node.unit.expect("port is attached");
                    for (k, &o) in outs.iter().enumerate() {
                        if fired(o) {
                            self.units[u].resp[k].pop_front();
                            changed = true;
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(changed)
    }

    fn exit_complete(&self) -> bool {
        self.net.nodes.iter().zip(&self.nodes).any(|(n, s)| {
            matches!(n.kind, NetNodeKind::Exit { .. })
                && matches!(&s.state, State::Exit(got) if got.iter().all(Option::is_some))
        })
    }

    /// Whether the next cycle can differ from this one without any state
    /// change: pending memory responses and scripted tokens mature by time.
    fn time_dependent(&self) -> bool {
        let pending_resp = self
            .units
            .iter()
            .any(|u| u.resp.iter().flatten().any(|&(at, _)| at > self.cycle - 1));
        let pending_src = self.net.nodes.iter().zip(&self.nodes).any(|(n, s)| {
            matches!((&n.kind, &s.state), (NetNodeKind::Source { tokens }, State::Source(k))
                if tokens.get(*k).is_some_and(|t| t.0 >= self.cycle))
        });
        pending_resp || pending_src
    }

    fn stalled(&self) -> Vec<StalledNode> {
        let mut out = Vec::new();
        for (n, s) in self.net.nodes.iter().zip(&self.nodes) {
            let valid_inputs: Vec<usize> = (0..s.ins.len())
                .filter(|&k| self.wires[s.ins[k]].valid)
                .collect();
            let blocked_outputs: Vec<usize> = (0..s.outs.len())
                .filter(|&k| {
                    let w = self.wires[s.outs[k]];
                    w.valid && !w.ready
                })
                .collect();
            let waiting = !valid_inputs.is_empty() && valid_inputs.len() < s.ins.len();
            if waiting || !blocked_outputs.is_empty() {
                out.push(StalledNode {
                    node: n.id,
                    label: n.kind.label(),
                    valid_inputs,
                    blocked_outputs,
                });
            }
        }
        out
    }
}

/// Runs a netlist to completion.
pub fn simulate(
    net: &ElasticNetlist,
    inputs: &KernelInputs,
    cfg: SimConfig,
) -> Result<SimResult, SimError> {
    let mut sim = Simulator::new(net, inputs, cfg)?;
    sim.run()?;
    Ok(sim.into_result())
}

fn initial_state(kind: &NetNodeKind, n_in: usize, n_out: usize) -> State {
    match kind {
        NetNodeKind::Const { .. } | NetNodeKind::Arg { .. } | NetNodeKind::StateEntry => {
            State::Emitted(false)
        }
        NetNodeKind::Source { .. } => State::Source(0),
        NetNodeKind::Exit { .. } => State::Exit(vec![None; n_in]),
        NetNodeKind::Fork | NetNodeKind::StateGate { .. } => State::Done(vec![false; n_out]),
        NetNodeKind::Buffer { .. } => State::Queue(VecDeque::new()),
        NetNodeKind::PredBuf => State::Queue(VecDeque::from([crate::ir::LOOP_TERMINATE as i32])),
        NetNodeKind::LoopBuf => State::LoopBuf(None),
        NetNodeKind::Load { .. } | NetNodeKind::Store { .. } => State::Held(0),
        NetNodeKind::AddrQueue { .. } => State::AddrQueue {
            entries: VecDeque::new(),
            decided: None,
            passed: false,
        },
        _ => State::Stateless,
    }
}

fn occupancy(state: &State) -> Option<usize> {
    match state {
        State::Queue(q) => Some(q.len()),
        State::AddrQueue { entries, .. } => Some(entries.len()),
        State::LoopBuf(v) => Some(v.is_some() as usize),
        State::Held(r) => Some(*r as usize),
        _ => None,
    }
}

/// Output index picked by a control token: for two-way nodes any non-zero
/// value selects output 1.
fn select(token: i32, n: usize) -> usize {
    if n == 2 {
        (token != 0) as usize
    } else {
        (token.max(0) as usize).min(n - 1)
    }
}

/// Topological order over channels that carry combinational valid paths;
/// nodes on cycles (which validation rules out) are appended in id order.
fn eval_order(net: &ElasticNetlist, index: &HashMap<NodeId, usize>) -> Vec<usize> {
    let n = net.nodes.len();
    let mut comb_out = vec![Vec::new(); n];
    for (i, node) in net.nodes.iter().enumerate() {
        let mut ports = vec![false; node.outputs.len()];
        for input in 0..node.n_inputs {
            for o in node.kind.combinational_outputs(input, node.outputs.len()) {
                if let Some(p) = ports.get_mut(o) {
                    *p = true;
                }
            }
        }
        comb_out[i] = ports;
    }
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for ch in &net.channels {
        let (s, d) = (index[&ch.src.node], index[&ch.dst.node]);
        if comb_out[s].get(ch.src.port).copied().unwrap_or(false) {
            succ[s].push(d);
            indeg[d] += 1;
        }
    }
    let mut ready: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    while let Some(i) = ready.pop_front() {
        order.push(i);
        placed[i] = true;
        for &d in &succ[i] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                ready.push_back(d);
            }
        }
    }
    order.extend((0..n).filter(|&i| !placed[i]));
    order
}
