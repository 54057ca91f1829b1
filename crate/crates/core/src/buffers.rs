//! Buffer placement on the point-to-point handshake graph.

use serde::Serialize;

use crate::ir::{BinOp, NodeId, NodeKind, Origin, PortType, RvsdgGraph, User};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BufferPolicy {
    pub fork_fifo_depth: u32,
    pub ctl_fork_fifo_depth: u32,
    pub multiplier_buffering: bool,
    /// Drop a loop back-edge BUF whose value comes straight from a memory
    /// operation's (registered) state output.
    pub remove_traced_back_edges: bool,
}

impl Default for BufferPolicy {
    fn default() -> Self {
        BufferPolicy {
            fork_fifo_depth: 4,
            ctl_fork_fifo_depth: 16,
            multiplier_buffering: true,
            remove_traced_back_edges: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BufferReport {
    pub multiplier_bufs: usize,
    pub loop_output_bufs: usize,
    pub fork_fifos: usize,
    /// Fork outputs left unbuffered because they drive a memory request.
    pub skipped_memory_paths: usize,
    pub removed_back_edges: Vec<NodeId>,
}

/// Places opaque and transparent buffers. Runs after point-to-point
/// enforcement, so every origin has exactly one user.
pub fn place_buffers(g: &mut RvsdgGraph, policy: &BufferPolicy) -> BufferReport {
    let mut report = BufferReport::default();
    if policy.remove_traced_back_edges {
        remove_traced_back_edges(g, &mut report);
    }
    if policy.multiplier_buffering {
        let muls: Vec<NodeId> = g
            .nodes
            .values()
            .filter(|n| n.kind == NodeKind::Binary { bin: BinOp::Mul })
            .filter(|n| !n.inputs.iter().any(|&o| traces_to_constant(g, o)))
            .map(|n| n.id)
            .collect();
        for m in muls {
            insert_after(g, Origin::out(m, 0), opaque());
            report.multiplier_bufs += 1;
        }
    }

    let outer_loops: Vec<NodeId> = g
        .nodes
        .values()
        .filter(|n| matches!(n.kind, NodeKind::HlsLoop { .. }))
        .filter(|n| {
            !g.enclosing_nodes(n.region)
                .iter()
                .any(|&e| matches!(g.node(e).kind, NodeKind::HlsLoop { .. }))
        })
        .map(|n| n.id)
        .collect();
    for l in outer_loops {
        for i in 0..g.node(l).outputs.len() {
            let o = Origin::out(l, i);
            if sole_user_is_sink(g, o) {
                continue;
            }
            insert_after(g, o, opaque());
            report.loop_output_bufs += 1;
        }
    }

    let forks: Vec<NodeId> = g
        .nodes
        .values()
        .filter(|n| n.kind == NodeKind::Fork)
        .map(|n| n.id)
        .collect();
    for f in forks {
        for i in 0..g.node(f).outputs.len() {
            let o = Origin::out(f, i);
            let users = g.users(o);
            if users.len() != 1 || drives_memory_request(g, users[0]) {
                report.skipped_memory_paths += 1;
                continue;
            }
            if matches!(users[0], User::Input { node, .. } if g.node(node).kind == NodeKind::Sink) {
                continue;
            }
            let depth = if g.origin_type(o).is_control() {
                policy.ctl_fork_fifo_depth
            } else {
                policy.fork_fifo_depth
            };
            insert_after(
                g,
                o,
                NodeKind::Buffer {
                    capacity: depth.max(1),
                    opaque: false,
                    back_edge: false,
                },
            );
            report.fork_fifos += 1;
        }
    }
    report
}

fn opaque() -> NodeKind {
    NodeKind::Buffer {
        capacity: 1,
        opaque: true,
        back_edge: false,
    }
}

/// Puts a one-input buffer between `o` and its users, in `o`'s region.
fn insert_after(g: &mut RvsdgGraph, o: Origin, kind: NodeKind) -> NodeId {
    let users = g.users(o);
    let ty: PortType = g.origin_type(o);
    let region = g.origin_region(o);
    let b = g.add_node(region, kind, vec![o], vec![ty]);
    for u in users {
        g.set_user(u, Origin::out(b, 0));
    }
    b
}

fn sole_user_is_sink(g: &RvsdgGraph, o: Origin) -> bool {
    matches!(g.users(o).as_slice(), [User::Input { node, .. }] if g.node(*node).kind == NodeKind::Sink)
}

fn traces_to_constant(g: &RvsdgGraph, mut o: Origin) -> bool {
    loop {
        match o {
            Origin::Output { node, .. } => match g.node(node).kind {
                NodeKind::Constant { .. } => return true,
                NodeKind::Fork => o = g.node(node).inputs[0],
                _ => return false,
            },
            Origin::Arg { .. } => return false,
        }
    }
}

/// Address and data channels into a memory request carry no buffer: it
/// would add access latency and could let a store retire out of order.
fn drives_memory_request(g: &RvsdgGraph, u: User) -> bool {
    matches!(u, User::Input { node, .. } if matches!(g.node(node).kind, NodeKind::MemReq { .. }))
}

/// Removes back-edge BUFs whose input traces, through the exit BRANCH and
/// then only FORKs and state gates, to a load or store state output.
fn remove_traced_back_edges(g: &mut RvsdgGraph, report: &mut BufferReport) {
    let bufs: Vec<NodeId> = g
        .nodes
        .values()
        .filter(|n| {
            matches!(
                n.kind,
                NodeKind::Buffer {
                    back_edge: true,
                    ..
                }
            )
        })
        .map(|n| n.id)
        .collect();
    for b in bufs {
        let input = g.node(b).inputs[0];
        let Origin::Output { node: br, index: 1 } = input else {
            continue;
        };
        if g.node(br).kind != NodeKind::Branch {
            continue;
        }
        if !traces_to_memory_state(g, g.node(br).inputs[1]) {
            continue;
        }
        g.replace_uses(Origin::out(b, 0), input);
        g.remove_node(b);
        report.removed_back_edges.push(b);
    }
}

fn traces_to_memory_state(g: &RvsdgGraph, mut o: Origin) -> bool {
    loop {
        let Origin::Output { node, index } = o else {
            return false;
        };
        let n = g.node(node);
        match &n.kind {
            NodeKind::Store { .. } => return index == 0,
            NodeKind::Load { stateful: true, .. } => return index == 1,
            NodeKind::Fork => o = n.inputs[0],
            NodeKind::StateGate { .. } => o = n.inputs[index],
            _ => return false,
        }
    }
}
