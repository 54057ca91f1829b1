use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::rvsdg::{load_req_output, load_resp_input};
use super::{
    ArrayId, ArrayInfo, BinOp, CmpOp, GateRole, MemOpId, MemPort, NodeId, NodeKind, Origin,
    PortType, RegionId, RvsdgGraph,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortRef {
    pub node: NodeId,
    pub port: usize,
}

/// A point-to-point handshake channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub src: PortRef,
    pub dst: PortRef,
    pub ty: PortType,
    /// Materialized loop back edge.
    pub back_edge: bool,
}

/// Primitive component kinds of the executable netlist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum NetNodeKind {
    /// Constant source. One-shot constants emit a single token; the others
    /// are always valid.
    Const {
        value: i32,
        one_shot: bool,
    },
    /// Scalar kernel argument (one token).
    Arg {
        index: usize,
    },
    /// Initial memory-state token of one state chain.
    StateEntry,
    /// Collects the kernel results: optional return value, then states.
    Exit {
        returns: bool,
    },
    Binary {
        bin: BinOp,
    },
    Compare {
        cmp: CmpOp,
        predicate: bool,
    },
    /// Inputs `[addr, state?, resp]`, outputs `[data, state?, req]`.
    Load {
        mem: MemOpId,
        array: ArrayId,
        stateful: bool,
    },
    /// Inputs `[addr, data, state]`, outputs `[state, req_addr, req_data]`.
    Store {
        mem: MemOpId,
        array: ArrayId,
    },
    Branch,
    Ndmux,
    Dmux,
    Fork,
    Sink,
    Buffer {
        capacity: u32,
        opaque: bool,
    },
    PredBuf,
    LoopBuf,
    MemReq {
        array: ArrayId,
        ports: Vec<MemPort>,
    },
    MemResp {
        array: ArrayId,
        loads: Vec<MemOpId>,
    },
    AddrQueue {
        capacity: u32,
        store: MemOpId,
        load: MemOpId,
    },
    StateGate {
        role: GateRole,
    },
    /// Scripted token source for harness tests: emits `tokens[k].1` no
    /// earlier than cycle `tokens[k].0`, in order.
    Source {
        tokens: Vec<(u64, u32)>,
    },
}

impl NetNodeKind {
    pub fn label(&self) -> String {
        match self {
            NetNodeKind::Const { value, .. } => format!("{value}"),
            NetNodeKind::Arg { index } => format!("ARG {index}"),
            NetNodeKind::StateEntry => "STATE".into(),
            NetNodeKind::Exit { .. } => "EXIT".into(),
            NetNodeKind::Binary { bin } => bin.symbol().into(),
            NetNodeKind::Compare { cmp, .. } => cmp.mnemonic().into(),
            NetNodeKind::Load { mem, array, .. } => format!("LOAD {mem} {array}"),
            NetNodeKind::Store { mem, array } => format!("STORE {mem} {array}"),
            NetNodeKind::Branch => "BRANCH".into(),
            NetNodeKind::Ndmux => "NDMUX".into(),
            NetNodeKind::Dmux => "DMUX".into(),
            NetNodeKind::Fork => "FORK".into(),
            NetNodeKind::Sink => "SINK".into(),
            NetNodeKind::Buffer { capacity, opaque } => {
                if *opaque {
                    format!("BUF {capacity}")
                } else {
                    format!("FIFO {capacity}")
                }
            }
            NetNodeKind::PredBuf => "PRED-BUF".into(),
            NetNodeKind::LoopBuf => "LOOP-BUF".into(),
            NetNodeKind::MemReq { array, .. } => format!("MEM-REQ {array}"),
            NetNodeKind::MemResp { array, .. } => format!("MEM-RESP {array}"),
            NetNodeKind::AddrQueue {
                capacity,
                store,
                load,
            } => format!("ADDR-Q {store}->{load} [{capacity}]"),
            NetNodeKind::StateGate { role } => role.to_string(),
            NetNodeKind::Source { .. } => "SOURCE".into(),
        }
    }

    pub fn census_name(&self) -> &'static str {
        match self {
            NetNodeKind::Const { .. } => "CONST",
            NetNodeKind::Arg { .. } => "ARG",
            NetNodeKind::StateEntry => "STATE",
            NetNodeKind::Exit { .. } => "EXIT",
            NetNodeKind::Binary { bin: BinOp::Mul } => "MUL",
            NetNodeKind::Binary { .. } => "ARITH",
            NetNodeKind::Compare { .. } => "CMP",
            NetNodeKind::Load { .. } => "LOAD",
            NetNodeKind::Store { .. } => "STORE",
            NetNodeKind::Branch => "BRANCH",
            NetNodeKind::Ndmux => "NDMUX",
            NetNodeKind::Dmux => "DMUX",
            NetNodeKind::Fork => "FORK",
            NetNodeKind::Sink => "SINK",
            NetNodeKind::Buffer { opaque: true, .. } => "BUF",
            NetNodeKind::Buffer { opaque: false, .. } => "FIFO",
            NetNodeKind::PredBuf => "PRED-BUF",
            NetNodeKind::LoopBuf => "LOOP-BUF",
            NetNodeKind::MemReq { .. } => "MEM-REQ",
            NetNodeKind::MemResp { .. } => "MEM-RESP",
            NetNodeKind::AddrQueue { .. } => "ADDR-Q",
            NetNodeKind::StateGate {
                role: GateRole::Sg1,
            } => "SG1",
            NetNodeKind::StateGate {
                role: GateRole::Sg2,
            } => "SG2",
            NetNodeKind::StateGate {
                role: GateRole::Sg3,
            } => "SG3",
            NetNodeKind::StateGate {
                role: GateRole::Sg4,
            } => "SG4",
            NetNodeKind::StateGate {
                role: GateRole::Join,
            } => "JOIN",
            NetNodeKind::Source { .. } => "SOURCE",
        }
    }

    /// Output ports that have a combinational path from input `input`.
    pub fn combinational_outputs(&self, input: usize, n_outputs: usize) -> Vec<usize> {
        match self {
            NetNodeKind::Buffer { opaque: true, .. }
            | NetNodeKind::PredBuf
            | NetNodeKind::MemReq { .. }
            | NetNodeKind::MemResp { .. }
            | NetNodeKind::Sink
            | NetNodeKind::Exit { .. }
            | NetNodeKind::Const { .. }
            | NetNodeKind::Arg { .. }
            | NetNodeKind::StateEntry
            | NetNodeKind::Source { .. } => Vec::new(),
            NetNodeKind::Load { stateful, .. } => {
                if input == load_resp_input(*stateful) {
                    vec![0]
                } else {
                    vec![load_req_output(*stateful)]
                }
            }
            NetNodeKind::Store { .. } => vec![1, 2],
            NetNodeKind::AddrQueue { store, load, .. } => {
                if input == 1 || (input == 0 && store > load) {
                    Vec::new()
                } else {
                    vec![0]
                }
            }
            _ => (0..n_outputs).collect(),
        }
    }

    /// Whether the element holds tokens across cycles with no combinational
    /// valid path (breaks cycles).
    pub fn is_opaque(&self) -> bool {
        matches!(
            self,
            NetNodeKind::Buffer { opaque: true, .. } | NetNodeKind::PredBuf
        )
    }

    /// Storage slots contributed to the resource proxy.
    pub fn buffer_slots(&self) -> u64 {
        match self {
            NetNodeKind::Buffer { capacity, .. } | NetNodeKind::AddrQueue { capacity, .. } => {
                *capacity as u64
            }
            NetNodeKind::PredBuf | NetNodeKind::LoopBuf => 1,
            NetNodeKind::Load { .. } => 1,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetNode {
    pub id: NodeId,
    pub kind: NetNodeKind,
    pub n_inputs: usize,
    pub outputs: Vec<PortType>,
    /// Innermost HLS-LOOP the node came from, as an index into `clusters`.
    pub cluster: Option<usize>,
}

/// Provenance of an inlined HLS-LOOP, kept for rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopCluster {
    pub loop_node: NodeId,
    pub parent: Option<usize>,
}

/// Flat executable netlist of primitive handshake components.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetlist {
    pub name: String,
    pub arrays: Vec<ArrayInfo>,
    pub nodes: Vec<NetNode>,
    pub channels: Vec<Channel>,
    pub clusters: Vec<LoopCluster>,
}

impl ElasticNetlist {
    pub fn new(name: impl Into<String>) -> Self {
        ElasticNetlist {
            name: name.into(),
            ..Default::default()
        }
    }

    /// Adds a node with a fresh id (max + 1).
    pub fn add_node(
        &mut self,
        kind: NetNodeKind,
        n_inputs: usize,
        outputs: Vec<PortType>,
    ) -> NodeId {
        let id = NodeId(self.nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0));
        self.nodes.push(NetNode {
            id,
            kind,
            n_inputs,
            outputs,
            cluster: None,
        });
        id
    }

    pub fn connect(&mut self, src: (NodeId, usize), dst: (NodeId, usize)) {
        let ty = self.node(src.0).outputs[src.1];
        self.channels.push(Channel {
            src: PortRef {
                node: src.0,
                port: src.1,
            },
            dst: PortRef {
                node: dst.0,
                port: dst.1,
            },
            ty,
            back_edge: false,
        });
    }

    pub fn node(&self, id: NodeId) -> &NetNode {
        self.nodes
            .iter()
            .find(|n| n.id == id)
            .expect("unknown netlist node")
    }

    pub fn census(&self) -> BTreeMap<String, usize> {
        let mut map = BTreeMap::new();
        for n in &self.nodes {
            *map.entry(n.kind.census_name().to_string()).or_insert(0) += 1;
        }
        map
    }

    pub fn count(&self, name: &str) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind.census_name() == name)
            .count()
    }

    pub fn buffer_slots(&self) -> u64 {
        self.nodes.iter().map(|n| n.kind.buffer_slots()).sum()
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum FlattenError {
    #[error("node {node} ({kind}) is a structural node that was not lowered")]
    Residual { node: NodeId, kind: String },
    #[error("graph has no kernel lambda")]
    NoLambda,
    #[error("region {region} argument {index} cannot be resolved")]
    Unresolved { region: RegionId, index: usize },
}

/// Inlines every HLS-LOOP and turns back-edge argument/result pairs into real
/// cyclic channels. Only primitive node kinds remain.
pub fn flatten(g: &RvsdgGraph) -> Result<ElasticNetlist, FlattenError> {
    for n in g.nodes.values() {
        if matches!(n.kind, NodeKind::Gamma | NodeKind::Theta) {
            return Err(FlattenError::Residual {
                node: n.id,
                kind: n.kind.label(),
            });
        }
    }
    let lambda = g.lambda().ok_or(FlattenError::NoLambda)?;
    let body = g.node(lambda).subregions[0];
    let mut net = ElasticNetlist::new(g.name.clone());
    net.arrays = g.arrays.clone();

    // Loop clusters, outer before inner.
    let mut cluster_of_loop: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut loops: Vec<NodeId> = g
        .nodes
        .values()
        .filter(|n| matches!(n.kind, NodeKind::HlsLoop { .. }))
        .map(|n| n.id)
        .collect();
    loops.sort_by_key(|&l| (g.enclosing_nodes(g.node(l).region).len(), l));
    for l in loops {
        let parent = innermost_loop(g, g.node(l).region).map(|p| cluster_of_loop[&p]);
        cluster_of_loop.insert(l, net.clusters.len());
        net.clusters.push(LoopCluster {
            loop_node: l,
            parent,
        });
    }

    let mut next_id = g.nodes.keys().map(|n| n.0 + 1).max().unwrap_or(0);
    let mut fresh = || {
        let id = NodeId(next_id);
        next_id += 1;
        id
    };

    let mut entry_nodes = Vec::new();
    let body_region = g.region(body);
    for (i, &ty) in body_region.args.iter().enumerate() {
        let id = fresh();
        let kind = if ty.is_state() {
            NetNodeKind::StateEntry
        } else {
            NetNodeKind::Arg { index: i }
        };
        net.nodes.push(NetNode {
            id,
            kind,
            n_inputs: 0,
            outputs: vec![ty],
            cluster: None,
        });
        entry_nodes.push(id);
    }

    for n in g.nodes.values() {
        if n.kind.is_structural() {
            continue;
        }
        let cluster = innermost_loop(g, n.region).map(|l| cluster_of_loop[&l]);
        let kind = convert_kind(&n.kind, n.region == body || cluster.is_none());
        net.nodes.push(NetNode {
            id: n.id,
            kind,
            n_inputs: n.inputs.len(),
            outputs: n.outputs.clone(),
            cluster,
        });
    }

    let resolver = Resolver {
        g,
        body,
        entries: &entry_nodes,
    };
    for n in g.nodes.values() {
        if n.kind.is_structural() {
            continue;
        }
        for (i, &o) in n.inputs.iter().enumerate() {
            let (src, back) = resolver.resolve(o, false)?;
            net.channels.push(Channel {
                src,
                dst: PortRef {
                    node: n.id,
                    port: i,
                },
                ty: g.origin_type(o),
                back_edge: back,
            });
        }
    }

    let results = &body_region.results;
    let exit = fresh();
    let returns = results
        .first()
        .is_some_and(|&o| !g.origin_type(o).is_state());
    net.nodes.push(NetNode {
        id: exit,
        kind: NetNodeKind::Exit { returns },
        n_inputs: results.len(),
        outputs: Vec::new(),
        cluster: None,
    });
    for (i, &o) in results.iter().enumerate() {
        let (src, back) = resolver.resolve(o, false)?;
        net.channels.push(Channel {
            src,
            dst: PortRef {
                node: exit,
                port: i,
            },
            ty: g.origin_type(o),
            back_edge: back,
        });
    }
    net.nodes.sort_by_key(|n| n.id);
    net.channels.sort_by_key(|c| (c.dst, c.src));
    Ok(net)
}

fn innermost_loop(g: &RvsdgGraph, region: RegionId) -> Option<NodeId> {
    g.enclosing_nodes(region)
        .into_iter()
        .find(|&n| matches!(g.node(n).kind, NodeKind::HlsLoop { .. }))
}

fn convert_kind(kind: &NodeKind, top_level: bool) -> NetNodeKind {
    match kind.clone() {
        NodeKind::Constant { value } => NetNodeKind::Const {
            value,
            one_shot: top_level,
        },
        NodeKind::Binary { bin } => NetNodeKind::Binary { bin },
        NodeKind::Compare { cmp, predicate } => NetNodeKind::Compare { cmp, predicate },
        NodeKind::Load {
            mem,
            array,
            stateful,
            ..
        } => NetNodeKind::Load {
            mem,
            array,
            stateful,
        },
        NodeKind::Store { mem, array, .. } => NetNodeKind::Store { mem, array },
        NodeKind::Branch => NetNodeKind::Branch,
        NodeKind::Ndmux => NetNodeKind::Ndmux,
        NodeKind::Dmux => NetNodeKind::Dmux,
        NodeKind::Fork => NetNodeKind::Fork,
        NodeKind::Sink => NetNodeKind::Sink,
        NodeKind::Buffer {
            capacity, opaque, ..
        } => NetNodeKind::Buffer { capacity, opaque },
        NodeKind::PredBuf => NetNodeKind::PredBuf,
        NodeKind::LoopBuf => NetNodeKind::LoopBuf,
        NodeKind::MemReq { array, ports } => NetNodeKind::MemReq { array, ports },
        NodeKind::MemResp { array, loads } => NetNodeKind::MemResp { array, loads },
        NodeKind::AddrQueue {
            capacity,
            store,
            load,
        } => NetNodeKind::AddrQueue {
            capacity,
            store,
            load,
        },
        NodeKind::StateGate { role } => NetNodeKind::StateGate { role },
        NodeKind::Lambda { .. } | NodeKind::Gamma | NodeKind::Theta | NodeKind::HlsLoop { .. } => {
            unreachable!("structural kinds are resolved, not converted")
        }
    }
}

struct Resolver<'a> {
    g: &'a RvsdgGraph,
    body: RegionId,
    entries: &'a [NodeId],
}

impl Resolver<'_> {
    fn resolve(&self, origin: Origin, back: bool) -> Result<(PortRef, bool), FlattenError> {
        let g = self.g;
        match origin {
            Origin::Output { node, index } => {
                let n = g.node(node);
                match n.kind {
                    NodeKind::HlsLoop { back_edges } => {
                        let r = g.region(n.subregions[0]);
                        self.resolve(r.results[back_edges + index], back)
                    }
                    _ => Ok((PortRef { node, port: index }, back)),
                }
            }
            Origin::Arg { region, index } => {
                if region == self.body {
                    return Ok((
                        PortRef {
                            node: self.entries[index],
                            port: 0,
                        },
                        back,
                    ));
                }
                let unresolved = FlattenError::Unresolved { region, index };
                let owner = g.region(region).owner.ok_or(unresolved.clone())?;
                let n = g.node(owner);
                match n.kind {
                    NodeKind::HlsLoop { .. } => {
                        if index < n.inputs.len() {
                            self.resolve(n.inputs[index], back)
                        } else {
                            let r = g.region(region);
                            self.resolve(r.results[index - n.inputs.len()], true)
                        }
                    }
                    _ => Err(unresolved),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NetlistRule {
    UnknownPort,
    FanOut,
    Unconnected,
    MultipleDrivers,
    CombinationalCycle,
    TypeMismatch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NetlistViolation {
    pub rule: NetlistRule,
    pub nodes: Vec<NodeId>,
    pub message: String,
}

impl fmt::Display for NetlistViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at [", self.rule)?;
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, "]: {}", self.message)
    }
}

/// Empty iff every port is point-to-point connected and every directed cycle
/// passes through an opaque element.
pub fn validate_netlist(net: &ElasticNetlist) -> Vec<NetlistViolation> {
    let mut out = Vec::new();
    let index: BTreeMap<NodeId, usize> = net
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id, i))
        .collect();
    let mut out_users: Vec<Vec<Vec<usize>>> = net
        .nodes
        .iter()
        .map(|n| vec![Vec::new(); n.outputs.len()])
        .collect();
    let mut in_drivers: Vec<Vec<Vec<usize>>> = net
        .nodes
        .iter()
        .map(|n| vec![Vec::new(); n.n_inputs])
        .collect();

    for (ci, c) in net.channels.iter().enumerate() {
        let (Some(&s), Some(&d)) = (index.get(&c.src.node), index.get(&c.dst.node)) else {
            out.push(NetlistViolation {
                rule: NetlistRule::UnknownPort,
                nodes: vec![c.src.node, c.dst.node],
                message: format!("channel {ci} names a missing node"),
            });
            continue;
        };
        if c.src.port >= out_users[s].len() || c.dst.port >= in_drivers[d].len() {
            out.push(NetlistViolation {
                rule: NetlistRule::UnknownPort,
                nodes: vec![c.src.node, c.dst.node],
                message: format!("channel {ci} names a missing port"),
            });
            continue;
        }
        if net.nodes[s].outputs[c.src.port] != c.ty {
            out.push(NetlistViolation {
                rule: NetlistRule::TypeMismatch,
                nodes: vec![c.src.node, c.dst.node],
                message: format!("channel {ci} type {} differs from its producer", c.ty),
            });
        }
        out_users[s][c.src.port].push(ci);
        in_drivers[d][c.dst.port].push(ci);
    }

    for (i, n) in net.nodes.iter().enumerate() {
        for (p, users) in out_users[i].iter().enumerate() {
            if users.len() > 1 {
                out.push(NetlistViolation {
                    rule: NetlistRule::FanOut,
                    nodes: vec![n.id],
                    message: format!("output {p} has {} users", users.len()),
                });
            } else if users.is_empty() {
                out.push(NetlistViolation {
                    rule: NetlistRule::Unconnected,
                    nodes: vec![n.id],
                    message: format!("output {p} has no user"),
                });
            }
        }
        for (p, drivers) in in_drivers[i].iter().enumerate() {
            if drivers.len() > 1 {
                out.push(NetlistViolation {
                    rule: NetlistRule::MultipleDrivers,
                    nodes: vec![n.id],
                    message: format!("input {p} has {} drivers", drivers.len()),
                });
            } else if drivers.is_empty() {
                out.push(NetlistViolation {
                    rule: NetlistRule::Unconnected,
                    nodes: vec![n.id],
                    message: format!("input {p} has no driver"),
                });
            }
        }
    }

    // Combinational reachability between channels.
    let succ: Vec<Vec<usize>> = net
        .channels
        .iter()
        .map(|c| {
            let Some(&d) = index.get(&c.dst.node) else {
                return Vec::new();
            };
            let node = &net.nodes[d];
            node.kind
                .combinational_outputs(c.dst.port, node.outputs.len())
                .into_iter()
                .filter(|&p| p < out_users[d].len())
                .flat_map(|p| out_users[d][p].iter().copied())
                .collect()
        })
        .collect();
    if let Some(cycle) = find_cycle(&succ) {
        let mut nodes: Vec<NodeId> = cycle.iter().map(|&c| net.channels[c].dst.node).collect();
        nodes.sort();
        nodes.dedup();
        out.push(NetlistViolation {
            rule: NetlistRule::CombinationalCycle,
            nodes,
            message: "directed cycle without an opaque element".into(),
        });
    }
    out
}

/// Iterative DFS; returns the channels of one cycle if any.
fn find_cycle(succ: &[Vec<usize>]) -> Option<Vec<usize>> {
    const WHITE: u8 = 0;
    const GREY: u8 = 1;
    const BLACK: u8 = 2;
    let mut color = vec![WHITE; succ.len()];
    for start in 0..succ.len() {
        if color[start] != WHITE {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        color[start] = GREY;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < succ[v].len() {
                let w = succ[v][*next];
                *next += 1;
                match color[w] {
                    WHITE => {
                        color[w] = GREY;
                        stack.push((w, 0));
                    }
                    GREY => {
                        let pos = stack.iter().position(|&(x, _)| x == w).unwrap();
                        return Some(stack[pos..].iter().map(|&(x, _)| x).collect());
                    }
                    _ => {}
                }
            } else {
                color[v] = BLACK;
                stack.pop();
            }
        }
    }
    None
}
