use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ArrayId, ArrayInfo, MemOpId, NodeId, PortType, RegionId};

/// Where a value comes from: a region argument or a node output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum Origin {
    Arg { region: RegionId, index: usize },
    Output { node: NodeId, index: usize },
}

impl Origin {
    pub fn arg(region: RegionId, index: usize) -> Self {
        Origin::Arg { region, index }
    }

    pub fn out(node: NodeId, index: usize) -> Self {
        Origin::Output { node, index }
    }
}

/// Where a value goes: a node input or a region result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum User {
    Input { node: NodeId, index: usize },
    Result { region: RegionId, index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Xor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
        }
    }

    /// Evaluates with 32-bit wrapping semantics. `None` on division by zero.
    /// Shift amounts use their low five bits; `>>` is arithmetic.
    pub fn eval(self, a: i32, b: i32) -> Option<i32> {
        Some(match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => {
                if b == 0 {
                    return None;
                }
                a.wrapping_div(b)
            }
            BinOp::Rem => {
                if b == 0 {
                    return None;
                }
                a.wrapping_rem(b)
            }
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Xor => a ^ b,
            BinOp::Shl => a.wrapping_shl(b as u32 & 31),
            BinOp::Shr => a.wrapping_shr(b as u32 & 31),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        }
    }

    /// Mnemonic used in graph dumps (signed comparisons).
    pub fn mnemonic(self) -> &'static str {
        match self {
            CmpOp::Eq => "EQ",
            CmpOp::Ne => "NE",
            CmpOp::Lt => "SLT",
            CmpOp::Gt => "SGT",
            CmpOp::Le => "SLE",
            CmpOp::Ge => "SGE",
        }
    }

    pub fn eval(self, a: i32, b: i32) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Gt => a > b,
            CmpOp::Le => a <= b,
            CmpOp::Ge => a >= b,
        }
    }
}

/// The four state-gate roles of the address-queue disambiguation scheme,
/// plus the join that merges the two duplicated state edges after a loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateRole {
    Sg1,
    Sg2,
    Sg3,
    Sg4,
    Join,
}

impl fmt::Display for GateRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateRole::Sg1 => "SG1",
            GateRole::Sg2 => "SG2",
            GateRole::Sg3 => "SG3",
            GateRole::Sg4 => "SG4",
            GateRole::Join => "JOIN",
        })
    }
}

/// One requester attached to a MEM-REQ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemPort {
    pub op: MemOpId,
    pub store: bool,
}

/// Node kinds of the graph. The first group is the source form built by the
/// frontend; the rest appear as lowering proceeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum NodeKind {
    Lambda {
        name: String,
    },
    Constant {
        value: i32,
    },
    Binary {
        bin: BinOp,
    },
    /// Signed comparison. With `predicate` set the output is a two-way
    /// control token instead of a 0/1 value.
    Compare {
        cmp: CmpOp,
        predicate: bool,
    },
    /// Inputs `[addr, state?, resp?]`, outputs `[data, state?, req?]`.
    Load {
        mem: MemOpId,
        array: ArrayId,
        stateful: bool,
        ported: bool,
    },
    /// Inputs `[addr, data, state]`, outputs `[state, req_addr?, req_data?]`.
    Store {
        mem: MemOpId,
        array: ArrayId,
        ported: bool,
    },
    Gamma,
    Theta,
    Branch,
    Ndmux,
    Dmux,
    Fork,
    Sink,
    Buffer {
        capacity: u32,
        opaque: bool,
        back_edge: bool,
    },
    PredBuf,
    LoopBuf,
    /// Region arguments are `inputs ++ back-edge arguments`; region results
    /// are `back-edge results ++ outputs`.
    HlsLoop {
        back_edges: usize,
    },
    MemReq {
        array: ArrayId,
        ports: Vec<MemPort>,
    },
    MemResp {
        array: ArrayId,
        loads: Vec<MemOpId>,
    },
    /// Inputs `[enqueue, dequeue, check]`, output `[checked address]`.
    AddrQueue {
        capacity: u32,
        store: MemOpId,
        load: MemOpId,
    },
    /// Inputs `[primary, trigger]`, outputs `[primary, trigger]`.
    StateGate {
        role: GateRole,
    },
}

impl NodeKind {
    pub fn label(&self) -> String {
        match self {
            NodeKind::Lambda { name } => format!("LAMBDA {name}"),
            NodeKind::Constant { value } => format!("{value}"),
            NodeKind::Binary { bin } => bin.symbol().to_string(),
            NodeKind::Compare { cmp, .. } => cmp.mnemonic().to_string(),
            NodeKind::Load { mem, array, .. } => format!("LOAD {mem} {array}"),
            NodeKind::Store { mem, array, .. } => format!("STORE {mem} {array}"),
            NodeKind::Gamma => "GAMMA".into(),
            NodeKind::Theta => "THETA".into(),
            NodeKind::Branch => "BRANCH".into(),
            NodeKind::Ndmux => "NDMUX".into(),
            NodeKind::Dmux => "DMUX".into(),
            NodeKind::Fork => "FORK".into(),
            NodeKind::Sink => "SINK".into(),
            NodeKind::Buffer {
                capacity, opaque, ..
            } => {
                if *opaque {
                    format!("BUF {capacity}")
                } else {
                    format!("FIFO {capacity}")
                }
            }
            NodeKind::PredBuf => "PRED-BUF".into(),
            NodeKind::LoopBuf => "LOOP-BUF".into(),
            NodeKind::HlsLoop { .. } => "HLS-LOOP".into(),
            NodeKind::MemReq { array, .. } => format!("MEM-REQ {array}"),
            NodeKind::MemResp { array, .. } => format!("MEM-RESP {array}"),
            NodeKind::AddrQueue {
                capacity,
                store,
                load,
            } => format!("ADDR-Q {store}->{load} [{capacity}]"),
            NodeKind::StateGate { role } => role.to_string(),
        }
    }

    /// Short kind name used for census counts.
    pub fn census_name(&self) -> &'static str {
        match self {
            NodeKind::Lambda { .. } => "LAMBDA",
            NodeKind::Constant { .. } => "CONST",
            NodeKind::Binary { bin: BinOp::Mul } => "MUL",
            NodeKind::Binary { .. } => "ARITH",
            NodeKind::Compare { .. } => "CMP",
            NodeKind::Load { .. } => "LOAD",
            NodeKind::Store { .. } => "STORE",
            NodeKind::Gamma => "GAMMA",
            NodeKind::Theta => "THETA",
            NodeKind::Branch => "BRANCH",
            NodeKind::Ndmux => "NDMUX",
            NodeKind::Dmux => "DMUX",
            NodeKind::Fork => "FORK",
            NodeKind::Sink => "SINK",
            NodeKind::Buffer { opaque: true, .. } => "BUF",
            NodeKind::Buffer { opaque: false, .. } => "FIFO",
            NodeKind::PredBuf => "PRED-BUF",
            NodeKind::LoopBuf => "LOOP-BUF",
            NodeKind::HlsLoop { .. } => "HLS-LOOP",
            NodeKind::MemReq { .. } => "MEM-REQ",
            NodeKind::MemResp { .. } => "MEM-RESP",
            NodeKind::AddrQueue { .. } => "ADDR-Q",
            NodeKind::StateGate {
                role: GateRole::Sg1,
            } => "SG1",
            NodeKind::StateGate {
                role: GateRole::Sg2,
            } => "SG2",
            NodeKind::StateGate {
                role: GateRole::Sg3,
            } => "SG3",
            NodeKind::StateGate {
                role: GateRole::Sg4,
            } => "SG4",
            NodeKind::StateGate {
                role: GateRole::Join,
            } => "JOIN",
        }
    }

    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            NodeKind::Lambda { .. } | NodeKind::Gamma | NodeKind::Theta | NodeKind::HlsLoop { .. }
        )
    }

    /// Inputs fed by a token from an earlier cycle: ADDR-Q dequeues, and
    /// enqueues from stores that follow the load in program order.
    pub fn is_temporal_input(&self, index: usize) -> bool {
        match self {
            NodeKind::AddrQueue { store, load, .. } => index == 1 || (index == 0 && store > load),
            _ => false,
        }
    }

    pub fn is_mem_op(&self) -> bool {
        matches!(self, NodeKind::Load { .. } | NodeKind::Store { .. })
    }

    /// Inputs that may be wired directly from another region: memory port
    /// connections and the address-queue enqueue/dequeue signals.
    pub fn accepts_remote_input(&self, index: usize) -> bool {
        match self {
            NodeKind::MemReq { .. } => true,
            NodeKind::AddrQueue { .. } => index < 2,
            NodeKind::Load {
                stateful,
                ported: true,
                ..
            } => index == load_resp_input(*stateful),
            _ => false,
        }
    }
}

/// Input index of a ported load's memory response.
pub fn load_resp_input(stateful: bool) -> usize {
    if stateful {
        2
    } else {
        1
    }
}

/// Output index of a ported load's memory request.
pub fn load_req_output(stateful: bool) -> usize {
    if stateful {
        2
    } else {
        1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub region: RegionId,
    pub inputs: Vec<Origin>,
    pub outputs: Vec<PortType>,
    pub subregions: Vec<RegionId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: RegionId,
    pub owner: Option<NodeId>,
    pub args: Vec<PortType>,
    pub results: Vec<Origin>,
}

/// Region-nested dataflow graph. Also carries the lowered handshake dialect
/// while the pipeline rewrites it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvsdgGraph {
    pub name: String,
    pub arrays: Vec<ArrayInfo>,
    pub nodes: BTreeMap<NodeId, Node>,
    pub regions: BTreeMap<RegionId, Region>,
    pub root: RegionId,
    next_node: u32,
    next_region: u32,
}

impl RvsdgGraph {
    pub fn new(name: impl Into<String>, arrays: Vec<ArrayInfo>) -> Self {
        let root = RegionId(0);
        let mut regions = BTreeMap::new();
        regions.insert(
            root,
            Region {
                id: root,
                owner: None,
                args: Vec::new(),
                results: Vec::new(),
            },
        );
        RvsdgGraph {
            name: name.into(),
            arrays,
            nodes: BTreeMap::new(),
            regions,
            root,
            next_node: 0,
            next_region: 1,
        }
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[&id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes.get_mut(&id).expect("unknown node")
    }

    pub fn region(&self, id: RegionId) -> &Region {
        &self.regions[&id]
    }

    pub fn region_mut(&mut self, id: RegionId) -> &mut Region {
        self.regions.get_mut(&id).expect("unknown region")
    }

    pub fn add_node(
        &mut self,
        region: RegionId,
        kind: NodeKind,
        inputs: Vec<Origin>,
        outputs: Vec<PortType>,
    ) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        self.nodes.insert(
            id,
            Node {
                id,
                kind,
                region,
                inputs,
                outputs,
                subregions: Vec::new(),
            },
        );
        id
    }

    /// Creates a subregion owned by `owner` and registers it on the node.
    pub fn add_region(&mut self, owner: NodeId, args: Vec<PortType>) -> RegionId {
        let id = RegionId(self.next_region);
        self.next_region += 1;
        self.regions.insert(
            id,
            Region {
                id,
                owner: Some(owner),
                args,
                results: Vec::new(),
            },
        );
        self.node_mut(owner).subregions.push(id);
        id
    }

    pub fn remove_node(&mut self, id: NodeId) -> Node {
        self.nodes.remove(&id).expect("unknown node")
    }

    pub fn remove_region(&mut self, id: RegionId) -> Region {
        self.regions.remove(&id).expect("unknown region")
    }

    pub fn origin_type(&self, origin: Origin) -> PortType {
        match origin {
            Origin::Arg { region, index } => self.region(region).args[index],
            Origin::Output { node, index } => self.node(node).outputs[index],
        }
    }

    /// Region in which an origin is defined.
    pub fn origin_region(&self, origin: Origin) -> RegionId {
        match origin {
            Origin::Arg { region, .. } => region,
            Origin::Output { node, .. } => self.node(node).region,
        }
    }

    pub fn origin_exists(&self, origin: Origin) -> bool {
        match origin {
            Origin::Arg { region, index } => self
                .regions
                .get(&region)
                .is_some_and(|r| index < r.args.len()),
            Origin::Output { node, index } => self
                .nodes
                .get(&node)
                .is_some_and(|n| index < n.outputs.len()),
        }
    }

    /// Lambda node of the kernel, if the graph has one.
    pub fn lambda(&self) -> Option<NodeId> {
        self.nodes
            .values()
            .find(|n| matches!(n.kind, NodeKind::Lambda { .. }))
            .map(|n| n.id)
    }

    pub fn lambda_body(&self) -> Option<RegionId> {
        self.lambda().map(|l| self.node(l).subregions[0])
    }

    /// Nodes directly contained in a region, by id.
    pub fn region_nodes(&self, region: RegionId) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.region == region)
            .map(|n| n.id)
            .collect()
    }

    /// Every use of every origin in the graph.
    pub fn use_map(&self) -> HashMap<Origin, Vec<User>> {
        let mut map: HashMap<Origin, Vec<User>> = HashMap::new();
        for node in self.nodes.values() {
            for (index, &origin) in node.inputs.iter().enumerate() {
                map.entry(origin).or_default().push(User::Input {
                    node: node.id,
                    index,
                });
            }
        }
        for region in self.regions.values() {
            for (index, &origin) in region.results.iter().enumerate() {
                map.entry(origin).or_default().push(User::Result {
                    region: region.id,
                    index,
                });
            }
        }
        for users in map.values_mut() {
            users.sort();
        }
        map
    }

    pub fn users(&self, origin: Origin) -> Vec<User> {
        let mut users = Vec::new();
        for node in self.nodes.values() {
            for (index, &o) in node.inputs.iter().enumerate() {
                if o == origin {
                    users.push(User::Input {
                        node: node.id,
                        index,
                    });
                }
            }
        }
        for region in self.regions.values() {
            for (index, &o) in region.results.iter().enumerate() {
                if o == origin {
                    users.push(User::Result {
                        region: region.id,
                        index,
                    });
                }
            }
        }
        users
    }

    pub fn set_user(&mut self, user: User, origin: Origin) {
        match user {
            User::Input { node, index } => self.node_mut(node).inputs[index] = origin,
            User::Result { region, index } => self.region_mut(region).results[index] = origin,
        }
    }

    pub fn user_origin(&self, user: User) -> Origin {
        match user {
            User::Input { node, index } => self.node(node).inputs[index],
            User::Result { region, index } => self.region(region).results[index],
        }
    }

    /// Redirects every use of `old` to `new`.
    pub fn replace_uses(&mut self, old: Origin, new: Origin) {
        for node in self.nodes.values_mut() {
            for o in node.inputs.iter_mut() {
                if *o == old {
                    *o = new;
                }
            }
        }
        for region in self.regions.values_mut() {
            for o in region.results.iter_mut() {
                if *o == old {
                    *o = new;
                }
            }
        }
    }

    /// Nodes of a region in dependency order. Inputs wired from other regions
    /// and temporal inputs do not constrain the order. Returns `None` if the
    /// region has a cycle.
    pub fn topo_order(&self, region: RegionId) -> Option<Vec<NodeId>> {
        let members = self.region_nodes(region);
        let mut indegree: BTreeMap<NodeId, usize> = members.iter().map(|&n| (n, 0)).collect();
        let mut succs: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for &n in &members {
            let node = self.node(n);
            for (i, input) in node.inputs.iter().enumerate() {
                if node.kind.is_temporal_input(i) {
                    continue;
                }
                if let Origin::Output { node: src, .. } = *input {
                    if indegree.contains_key(&src) {
                        *indegree.get_mut(&n).unwrap() += 1;
                        succs.entry(src).or_default().push(n);
                    }
                }
            }
        }
        let mut ready: VecDeque<NodeId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        let mut order = Vec::with_capacity(members.len());
        while let Some(n) = ready.pop_front() {
            order.push(n);
            if let Some(next) = succs.get(&n) {
                for &m in next {
                    let d = indegree.get_mut(&m).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.push_back(m);
                    }
                }
            }
        }
        (order.len() == members.len()).then_some(order)
    }

    /// Regions ordered so that every region comes after all regions nested in
    /// it (innermost first).
    pub fn regions_innermost_first(&self) -> Vec<RegionId> {
        let mut out = Vec::new();
        self.collect_post_order(self.root, &mut out);
        out
    }

    fn collect_post_order(&self, region: RegionId, out: &mut Vec<RegionId>) {
        for n in self.region_nodes(region) {
            for &sub in &self.node(n).subregions {
                self.collect_post_order(sub, out);
            }
        }
        out.push(region);
    }

    /// All nodes nested (transitively) inside the subregions of `node`.
    pub fn nested_nodes(&self, node: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack: Vec<RegionId> = self.node(node).subregions.clone();
        while let Some(r) = stack.pop() {
            for n in self.region_nodes(r) {
                out.push(n);
                stack.extend(self.node(n).subregions.iter().copied());
            }
        }
        out.sort();
        out
    }

    /// Chain of structural nodes enclosing a region, innermost first.
    pub fn enclosing_nodes(&self, region: RegionId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut r = region;
        while let Some(owner) = self.region(r).owner {
            out.push(owner);
            r = self.node(owner).region;
        }
        out
    }

    pub fn count_kind(&self, pred: impl Fn(&NodeKind) -> bool) -> usize {
        self.nodes.values().filter(|n| pred(&n.kind)).count()
    }

    /// Node-kind census, sorted by kind name.
    pub fn census(&self) -> BTreeMap<String, usize> {
        let mut map = BTreeMap::new();
        for n in self.nodes.values() {
            *map.entry(n.kind.census_name().to_string()).or_insert(0) += 1;
        }
        map
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RvsdgRule {
    DanglingOrigin,
    RegionEscape,
    Cycle,
    Arity,
    TypeMismatch,
    StateChain,
    Structure,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RvsdgViolation {
    pub rule: RvsdgRule,
    pub node: Option<NodeId>,
    pub region: Option<RegionId>,
    pub message: String,
}

impl fmt::Display for RvsdgViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.rule)?;
        if let Some(n) = self.node {
            write!(f, " at {n}")?;
        }
        if let Some(r) = self.region {
            write!(f, " in {r}")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Checks the structural invariants of a graph. An empty list means the
/// graph is well formed.
pub fn validate_rvsdg(g: &RvsdgGraph) -> Vec<RvsdgViolation> {
    let mut v = Checker { g, out: Vec::new() };
    v.run();
    v.out
}

struct Checker<'a> {
    g: &'a RvsdgGraph,
    out: Vec<RvsdgViolation>,
}

impl Checker<'_> {
    fn push(
        &mut self,
        rule: RvsdgRule,
        node: Option<NodeId>,
        region: Option<RegionId>,
        msg: String,
    ) {
        self.out.push(RvsdgViolation {
            rule,
            node,
            region,
            message: msg,
        });
    }

    fn run(&mut self) {
        let g = self.g;
        for region in g.regions.values() {
            if let Some(owner) = region.owner {
                match g.nodes.get(&owner) {
                    Some(n) if n.subregions.contains(&region.id) => {}
                    _ => self.push(
                        RvsdgRule::Structure,
                        Some(owner),
                        Some(region.id),
                        "region owner does not list the region".into(),
                    ),
                }
            }
            for (i, &res) in region.results.iter().enumerate() {
                if !g.origin_exists(res) {
                    self.push(
                        RvsdgRule::DanglingOrigin,
                        None,
                        Some(region.id),
                        format!("result {i} refers to a missing origin"),
                    );
                } else if g.origin_region(res) != region.id {
                    self.push(
                        RvsdgRule::RegionEscape,
                        None,
                        Some(region.id),
                        format!("result {i} is defined in another region"),
                    );
                }
            }
            if g.topo_order(region.id).is_none() {
                self.push(
                    RvsdgRule::Cycle,
                    None,
                    Some(region.id),
                    "region contains a cycle".into(),
                );
            }
        }
        for node in g.nodes.values() {
            if !g.regions.contains_key(&node.region) {
                self.push(
                    RvsdgRule::Structure,
                    Some(node.id),
                    None,
                    "node belongs to a missing region".into(),
                );
                continue;
            }
            let mut inputs_ok = true;
            for (i, &o) in node.inputs.iter().enumerate() {
                if !g.origin_exists(o) {
                    inputs_ok = false;
                    self.push(
                        RvsdgRule::DanglingOrigin,
                        Some(node.id),
                        None,
                        format!("input {i} refers to a missing origin"),
                    );
                } else if g.origin_region(o) != node.region && !node.kind.accepts_remote_input(i) {
                    self.push(
                        RvsdgRule::RegionEscape,
                        Some(node.id),
                        Some(node.region),
                        format!("input {i} crosses a region boundary without an argument"),
                    );
                }
            }
            for (i, t) in node.outputs.iter().enumerate() {
                if !t.is_well_formed() {
                    self.push(
                        RvsdgRule::TypeMismatch,
                        Some(node.id),
                        None,
                        format!("output {i} has malformed type {t}"),
                    );
                }
            }
            if inputs_ok {
                self.check_kind(node);
            }
        }
        self.check_state_chains();
    }

    fn input_types(&self, node: &Node) -> Vec<PortType> {
        node.inputs.iter().map(|&o| self.g.origin_type(o)).collect()
    }

    fn arity(&mut self, node: &Node, ins: usize, outs: usize) -> bool {
        if node.inputs.len() != ins || node.outputs.len() != outs {
            self.push(
                RvsdgRule::Arity,
                Some(node.id),
                None,
                format!(
                    "{} expects {ins} inputs / {outs} outputs, has {} / {}",
                    node.kind.label(),
                    node.inputs.len(),
                    node.outputs.len()
                ),
            );
            return false;
        }
        true
    }

    fn expect(&mut self, node: &Node, what: &str, got: PortType, want: PortType) {
        if got != want {
            self.push(
                RvsdgRule::TypeMismatch,
                Some(node.id),
                None,
                format!("{what}: expected {want}, found {got}"),
            );
        }
    }

    fn check_kind(&mut self, node: &Node) {
        let g = self.g;
        let ins = self.input_types(node);
        let nsub = node.subregions.len();
        match &node.kind {
            NodeKind::Lambda { .. } => {
                if nsub != 1 || node.region != g.root {
                    self.push(
                        RvsdgRule::Structure,
                        Some(node.id),
                        None,
                        "lambda must sit in the root region with one body".into(),
                    );
                }
            }
            NodeKind::Constant { .. } => {
                self.arity(node, 0, 1);
            }
            NodeKind::Binary { .. } => {
                if self.arity(node, 2, 1) {
                    self.expect(node, "lhs", ins[0], PortType::VALUE);
                    self.expect(node, "rhs", ins[1], PortType::VALUE);
                }
            }
            NodeKind::Compare { predicate, .. } => {
                if self.arity(node, 2, 1) {
                    self.expect(node, "lhs", ins[0], PortType::VALUE);
                    self.expect(node, "rhs", ins[1], PortType::VALUE);
                    let want = if *predicate {
                        PortType::PREDICATE
                    } else {
                        PortType::VALUE
                    };
                    self.expect(node, "result", node.outputs[0], want);
                }
            }
            NodeKind::Load {
                stateful, ported, ..
            } => {
                let n = 1 + *stateful as usize + *ported as usize;
                if self.arity(node, n, n) {
                    self.expect(node, "address", ins[0], PortType::VALUE);
                    if *stateful {
                        self.expect(node, "state", ins[1], PortType::MemState);
                    }
                }
            }
            NodeKind::Store { ported, .. } => {
                let outs = if *ported { 3 } else { 1 };
                if self.arity(node, 3, outs) {
                    self.expect(node, "address", ins[0], PortType::VALUE);
                    self.expect(node, "data", ins[1], PortType::VALUE);
                    self.expect(node, "state", ins[2], PortType::MemState);
                }
            }
            NodeKind::Gamma => self.check_gamma(node, &ins),
            NodeKind::Theta => self.check_theta(node, &ins),
            NodeKind::HlsLoop { back_edges } => {
                if nsub != 1 {
                    self.push(
                        RvsdgRule::Arity,
                        Some(node.id),
                        None,
                        "HLS-LOOP needs one region".into(),
                    );
                    return;
                }
                let r = g.region(node.subregions[0]);
                if r.args.len() != node.inputs.len() + back_edges
                    || r.results.len() != back_edges + node.outputs.len()
                {
                    self.push(
                        RvsdgRule::Arity,
                        Some(node.id),
                        None,
                        "HLS-LOOP argument/result layout mismatch".into(),
                    );
                }
            }
            NodeKind::Branch => {
                if node.inputs.len() != 2 || node.outputs.len() < 2 {
                    self.push(
                        RvsdgRule::Arity,
                        Some(node.id),
                        None,
                        "BRANCH needs 2 inputs, k outputs".into(),
                    );
                    return;
                }
                let k = node.outputs.len() as u32;
                self.expect(node, "select", ins[0], PortType::Control { arity: k });
                for &o in &node.outputs {
                    self.expect(node, "output", o, ins[1]);
                }
            }
            NodeKind::Ndmux | NodeKind::Dmux => {
                if node.inputs.len() < 3 || node.outputs.len() != 1 {
                    self.push(
                        RvsdgRule::Arity,
                        Some(node.id),
                        None,
                        "mux needs 1+k inputs, 1 output".into(),
                    );
                    return;
                }
                let k = node.inputs.len() as u32 - 1;
                self.expect(node, "select", ins[0], PortType::Control { arity: k });
                for &t in &ins[1..] {
                    self.expect(node, "data", t, node.outputs[0]);
                }
            }
            NodeKind::Fork => {
                if node.inputs.len() != 1 || node.outputs.len() < 2 {
                    self.push(
                        RvsdgRule::Arity,
                        Some(node.id),
                        None,
                        "FORK needs 1 input, n>=2 outputs".into(),
                    );
                    return;
                }
                for &o in &node.outputs {
                    self.expect(node, "output", o, ins[0]);
                }
            }
            NodeKind::Sink => {
                self.arity(node, 1, 0);
            }
            NodeKind::Buffer { capacity, .. } => {
                if self.arity(node, 1, 1) {
                    self.expect(node, "output", node.outputs[0], ins[0]);
                }
                if *capacity == 0 {
                    self.push(
                        RvsdgRule::Structure,
                        Some(node.id),
                        None,
                        "buffer capacity 0".into(),
                    );
                }
            }
            NodeKind::PredBuf => {
                if self.arity(node, 1, 1) {
                    self.expect(node, "predicate", ins[0], PortType::PREDICATE);
                }
            }
            NodeKind::LoopBuf => {
                if self.arity(node, 2, 1) {
                    self.expect(node, "predicate", ins[0], PortType::PREDICATE);
                    self.expect(node, "output", node.outputs[0], ins[1]);
                }
            }
            NodeKind::MemReq { ports, .. } => {
                let want: usize = ports.iter().map(|p| if p.store { 2 } else { 1 }).sum();
                self.arity(node, want, 0);
            }
            NodeKind::MemResp { loads, .. } => {
                self.arity(node, 0, loads.len());
            }
            NodeKind::AddrQueue { capacity, .. } => {
                if self.arity(node, 3, 1) {
                    self.expect(node, "enqueue", ins[0], PortType::VALUE);
                    self.expect(node, "dequeue", ins[1], PortType::MemState);
                    self.expect(node, "check", ins[2], PortType::VALUE);
                }
                if *capacity == 0 {
                    self.push(
                        RvsdgRule::Structure,
                        Some(node.id),
                        None,
                        "ADDR-Q capacity 0".into(),
                    );
                }
            }
            NodeKind::StateGate { .. } => {
                if self.arity(node, 2, 2) {
                    self.expect(node, "primary out", node.outputs[0], ins[0]);
                    self.expect(node, "trigger out", node.outputs[1], ins[1]);
                }
            }
        }
    }

    fn check_gamma(&mut self, node: &Node, ins: &[PortType]) {
        let g = self.g;
        if node.inputs.is_empty() || node.subregions.len() < 2 {
            self.push(
                RvsdgRule::Arity,
                Some(node.id),
                None,
                "gamma needs a predicate and >=2 regions".into(),
            );
            return;
        }
        let k = node.subregions.len() as u32;
        self.expect(node, "predicate", ins[0], PortType::Control { arity: k });
        for &sub in &node.subregions {
            let r = g.region(sub);
            if r.args.as_slice() != &ins[1..] {
                self.push(
                    RvsdgRule::Arity,
                    Some(node.id),
                    Some(sub),
                    "gamma region arguments do not match the inputs".into(),
                );
            }
            let res: Vec<PortType> = r
                .results
                .iter()
                .filter(|&&o| g.origin_exists(o))
                .map(|&o| g.origin_type(o))
                .collect();
            if res != node.outputs {
                self.push(
                    RvsdgRule::Arity,
                    Some(node.id),
                    Some(sub),
                    "gamma region results do not match the outputs".into(),
                );
            }
        }
    }

    fn check_theta(&mut self, node: &Node, ins: &[PortType]) {
        let g = self.g;
        if node.subregions.len() != 1 {
            self.push(
                RvsdgRule::Arity,
                Some(node.id),
                None,
                "theta needs one region".into(),
            );
            return;
        }
        let r = g.region(node.subregions[0]);
        if r.args.as_slice() != ins || node.outputs.as_slice() != ins {
            self.push(
                RvsdgRule::Arity,
                Some(node.id),
                Some(r.id),
                "theta inputs, arguments and outputs must match".into(),
            );
        }
        if r.results.len() != r.args.len() + 1 {
            self.push(
                RvsdgRule::Arity,
                Some(node.id),
                Some(r.id),
                format!(
                    "theta has {} results for {} loop variables (expected one extra predicate)",
                    r.results.len(),
                    r.args.len()
                ),
            );
            return;
        }
        if g.origin_exists(r.results[0]) {
            self.expect(
                node,
                "loop predicate",
                g.origin_type(r.results[0]),
                PortType::PREDICATE,
            );
        }
        for (i, &res) in r.results[1..].iter().enumerate() {
            if g.origin_exists(res) && i < r.args.len() {
                self.expect(node, "loop result", g.origin_type(res), r.args[i]);
            }
        }
    }

    /// In source form every state origin feeds at most one consumer. Once
    /// state edges are duplicated or forked this no longer applies.
    fn check_state_chains(&mut self) {
        let g = self.g;
        if g.count_kind(|k| matches!(k, NodeKind::Fork | NodeKind::StateGate { .. })) > 0 {
            return;
        }
        for (origin, users) in g.use_map() {
            if !g.origin_exists(origin) || !g.origin_type(origin).is_state() {
                continue;
            }
            let ordering = users
                .iter()
                .filter(|u| match u {
                    User::Input { node, index } => !matches!(
                        (&g.node(*node).kind, index),
                        (NodeKind::AddrQueue { .. }, 1)
                    ),
                    User::Result { .. } => true,
                })
                .count();
            if ordering > 1 {
                let node = match origin {
                    Origin::Output { node, .. } => Some(node),
                    Origin::Arg { .. } => None,
                };
                self.push(
                    RvsdgRule::StateChain,
                    node,
                    Some(g.origin_region(origin)),
                    format!("state origin {origin:?} has {ordering} ordering users"),
                );
            }
        }
    }
}
