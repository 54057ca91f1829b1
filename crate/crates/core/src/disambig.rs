//! Distributed memory disambiguation.
//!
//! Inside each outer loop that both loads and stores one array, the array's
//! state chain is split in two. The original (blue) chain keeps ordering the
//! data side of stores, with loads replaced by SG4 gates that wait for load
//! data. A new (red) chain orders address generation: SG1 in front of each
//! store address, SG2/SG3 around each load address. Between SG2 and SG3 the
//! load address is checked against one ADDR-Q per (store, load) pair; the
//! queues hold addresses of stores that were enqueued but have not written.
//! After the loop the two chains are joined again.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::ir::{
    ArrayId, GateRole, MemOpId, NodeId, NodeKind, Origin, PortType, RegionId, RvsdgGraph, User,
};

pub const DEFAULT_ADDRQ_CAPACITY: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DisambigOptions {
    pub capacity: u32,
    /// Mutation hook: wire around every gate of this role.
    pub drop_gate: Option<GateRole>,
}

impl Default for DisambigOptions {
    fn default() -> Self {
        DisambigOptions {
            capacity: DEFAULT_ADDRQ_CAPACITY,
            drop_gate: None,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum DisambigError {
    #[error("ADDR-Q capacity must be at least 1")]
    Capacity,
    #[error("state chain of {array} at node {node} is not a simple chain")]
    Chain { array: ArrayId, node: NodeId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StoreSite {
    pub store: NodeId,
    pub mem: MemOpId,
    pub sg1: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LoadSite {
    pub load: NodeId,
    pub mem: MemOpId,
    pub region: RegionId,
    pub sg2: NodeId,
    pub sg3: NodeId,
    pub sg4: NodeId,
}

/// The red chain built for one (outer loop, array).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RedChain {
    pub theta: NodeId,
    pub array: ArrayId,
    pub join: NodeId,
    pub stores: Vec<StoreSite>,
    pub loads: Vec<LoadSite>,
    pub queues: Vec<NodeId>,
}

/// Runs the pass over every outer loop and array. Loads and stores outside
/// loops keep their original state edge.
pub fn disambiguate(
    g: &mut RvsdgGraph,
    opts: &DisambigOptions,
) -> Result<Vec<RedChain>, DisambigError> {
    if opts.capacity < 1 {
        return Err(DisambigError::Capacity);
    }
    let mut chains = Vec::new();
    for theta in outer_thetas(g) {
        let nested = g.nested_nodes(theta);
        let mut loads = BTreeSet::new();
        let mut stores = BTreeSet::new();
        for &m in &nested {
            match g.node(m).kind {
                NodeKind::Load { array, .. } => {
                    loads.insert(array);
                }
                NodeKind::Store { array, .. } => {
                    stores.insert(array);
                }
                _ => {}
            }
        }
        let both: Vec<ArrayId> = loads.intersection(&stores).copied().collect();
        // Resolve all state inputs before the node grows red inputs.
        let node = g.node(theta).clone();
        let sub = node.subregions[0];
        let mut targets = Vec::new();
        for (k, &o) in node.inputs.iter().enumerate() {
            if !g.origin_type(o).is_state() {
                continue;
            }
            if let Some(a) = chain_array(g, Origin::arg(sub, k)) {
                if both.contains(&a) {
                    targets.push((a, k));
                }
            }
        }
        for (array, k) in targets {
            let mut chain = duplicate_state_edge(g, theta, k, array)?;
            insert_addr_queues(g, &mut chain, opts.capacity);
            chains.push(chain);
        }
    }
    if let Some(role) = opts.drop_gate {
        bypass_gates(g, role);
    }
    Ok(chains)
}

/// Thetas not nested in another theta, in id order.
pub fn outer_thetas(g: &RvsdgGraph) -> Vec<NodeId> {
    g.nodes
        .values()
        .filter(|n| n.kind == NodeKind::Theta)
        .filter(|n| {
            !g.enclosing_nodes(n.region)
                .iter()
                .any(|&e| g.node(e).kind == NodeKind::Theta)
        })
        .map(|n| n.id)
        .collect()
}

/// Array whose state chain starts at `o`, found by following the chain to its
/// first memory operation.
pub fn chain_array(g: &RvsdgGraph, o: Origin) -> Option<ArrayId> {
    for u in g.users(o) {
        let User::Input { node, index } = u else {
            continue;
        };
        let n = g.node(node);
        let found = match &n.kind {
            NodeKind::Load { array, .. } | NodeKind::Store { array, .. } => Some(*array),
            NodeKind::Gamma => n
                .subregions
                .iter()
                .find_map(|&s| chain_array(g, Origin::arg(s, index - 1))),
            NodeKind::Theta => chain_array(g, Origin::arg(n.subregions[0], index)),
            NodeKind::StateGate { .. } => chain_array(g, Origin::out(node, index)),
            _ => None,
        };
        if found.is_some() {
            return found;
        }
    }
    None
}

/// Splits the state chain entering `theta` at input `k` into blue and red
/// chains, placing the state gates. Queues are added separately.
pub fn duplicate_state_edge(
    g: &mut RvsdgGraph,
    theta: NodeId,
    k: usize,
    array: ArrayId,
) -> Result<RedChain, DisambigError> {
    let entry = g.node(theta).inputs[k];
    let sub = g.node(theta).subregions[0];
    let red_arg = push_loop_var(g, theta, entry);
    let mut chain = RedChain {
        theta,
        array,
        join: theta,
        stores: Vec::new(),
        loads: Vec::new(),
        queues: Vec::new(),
    };
    let (red_end, _) = thread(
        g,
        sub,
        Origin::arg(sub, k),
        Origin::arg(sub, red_arg),
        &mut chain,
    )?;
    g.region_mut(sub).results.push(red_end);

    let blue_out = Origin::out(theta, k);
    let red_out = Origin::out(theta, red_arg);
    let users = g.users(blue_out);
    let region = g.node(theta).region;
    let join = g.add_node(
        region,
        NodeKind::StateGate {
            role: GateRole::Join,
        },
        vec![blue_out, red_out],
        vec![PortType::MemState, PortType::MemState],
    );
    for u in users {
        g.set_user(u, Origin::out(join, 0));
    }
    chain.join = join;
    Ok(chain)
}

/// Adds a state loop variable fed by `input`; returns its index. The region
/// result is left for the caller to push.
fn push_loop_var(g: &mut RvsdgGraph, theta: NodeId, input: Origin) -> usize {
    let sub = g.node(theta).subregions[0];
    let n = g.node_mut(theta);
    n.inputs.push(input);
    n.outputs.push(PortType::MemState);
    let r = g.region_mut(sub);
    r.args.push(PortType::MemState);
    r.args.len() - 1
}

fn gate(
    g: &mut RvsdgGraph,
    region: RegionId,
    role: GateRole,
    primary: Origin,
    trigger: Origin,
) -> NodeId {
    let types = vec![g.origin_type(primary), g.origin_type(trigger)];
    g.add_node(
        region,
        NodeKind::StateGate { role },
        vec![primary, trigger],
        types,
    )
}

/// Walks the blue chain from `blue` through `region`, building the red chain
/// alongside. Returns the red chain's end and the result index where the
/// blue chain leaves the region.
fn thread(
    g: &mut RvsdgGraph,
    region: RegionId,
    blue: Origin,
    red: Origin,
    chain: &mut RedChain,
) -> Result<(Origin, usize), DisambigError> {
    let (mut cur, mut red) = (blue, red);
    loop {
        let users = g.users(cur);
        let (array, theta) = (chain.array, chain.theta);
        let bad = || DisambigError::Chain {
            array,
            node: match cur {
                Origin::Output { node, .. } => node,
                Origin::Arg { .. } => theta,
            },
        };
        if users.len() != 1 {
            return Err(bad());
        }
        match users[0] {
            User::Result { index, .. } => return Ok((red, index)),
            User::Input { node, index } => {
                let kind = g.node(node).kind.clone();
                match kind {
                    NodeKind::Load { mem, array, .. } if array == chain.array && index == 1 => {
                        // Blue: the load leaves the chain; SG4 waits for its data.
                        let next_users = g.users(Origin::out(node, 1));
                        let sg4 = gate(g, region, GateRole::Sg4, cur, Origin::out(node, 0));
                        for u in next_users {
                            g.set_user(u, Origin::out(sg4, 0));
                        }
                        let addr = g.node(node).inputs[0];
                        let l = g.node_mut(node);
                        l.inputs.truncate(1);
                        l.outputs.truncate(1);
                        if let NodeKind::Load { stateful, .. } = &mut l.kind {
                            *stateful = false;
                        }
                        // Red: SG2, (queues), SG3 around the address.
                        let sg2 = gate(g, region, GateRole::Sg2, addr, red);
                        let sg3 = gate(
                            g,
                            region,
                            GateRole::Sg3,
                            Origin::out(sg2, 0),
                            Origin::out(sg2, 1),
                        );
                        g.node_mut(node).inputs[0] = Origin::out(sg3, 0);
                        red = Origin::out(sg3, 1);
                        chain.loads.push(LoadSite {
                            load: node,
                            mem,
                            region,
                            sg2,
                            sg3,
                            sg4,
                        });
                        cur = Origin::out(sg4, 0);
                    }
                    NodeKind::Store { mem, array, .. } if array == chain.array && index == 2 => {
                        let addr = g.node(node).inputs[0];
                        let sg1 = gate(g, region, GateRole::Sg1, addr, red);
                        g.node_mut(node).inputs[0] = Origin::out(sg1, 0);
                        red = Origin::out(sg1, 1);
                        chain.stores.push(StoreSite {
                            store: node,
                            mem,
                            sg1,
                        });
                        cur = Origin::out(node, 0);
                    }
                    NodeKind::Gamma => {
                        let n = g.node_mut(node);
                        n.inputs.push(red);
                        n.outputs.push(PortType::MemState);
                        let red_out = n.outputs.len() - 1;
                        let subs = n.subregions.clone();
                        let mut out_index = None;
                        for s in subs {
                            let r = g.region_mut(s);
                            r.args.push(PortType::MemState);
                            let red_arg = r.args.len() - 1;
                            let (end, res) = thread(
                                g,
                                s,
                                Origin::arg(s, index - 1),
                                Origin::arg(s, red_arg),
                                chain,
                            )?;
                            g.region_mut(s).results.push(end);
                            if out_index.is_some_and(|o| o != res) {
                                return Err(bad());
                            }
                            out_index = Some(res);
                        }
                        red = Origin::out(node, red_out);
                        cur = Origin::out(node, out_index.ok_or_else(bad)?);
                    }
                    NodeKind::Theta => {
                        let s = g.node(node).subregions[0];
                        let red_arg = push_loop_var(g, node, red);
                        let (end, res) =
                            thread(g, s, Origin::arg(s, index), Origin::arg(s, red_arg), chain)?;
                        g.region_mut(s).results.push(end);
                        if res == 0 {
                            return Err(bad());
                        }
                        red = Origin::out(node, red_arg);
                        cur = Origin::out(node, res - 1);
                    }
                    _ => return Err(bad()),
                }
            }
        }
    }
}

/// Places one ADDR-Q per (store, load) pair of the chain on the load's
/// address path between SG2 and SG3. Enqueue comes from SG1's address
/// output, dequeue from the store's state output.
pub fn insert_addr_queues(g: &mut RvsdgGraph, chain: &mut RedChain, capacity: u32) {
    let mut loads = chain.loads.clone();
    loads.sort_by_key(|l| l.mem);
    let mut stores = chain.stores.clone();
    stores.sort_by_key(|s| s.mem);
    for l in &loads {
        let mut check = Origin::out(l.sg2, 0);
        for s in &stores {
            let q = g.add_node(
                l.region,
                NodeKind::AddrQueue {
                    capacity,
                    store: s.mem,
                    load: l.mem,
                },
                vec![Origin::out(s.sg1, 0), Origin::out(s.store, 0), check],
                vec![PortType::VALUE],
            );
            chain.queues.push(q);
            check = Origin::out(q, 0);
        }
        g.node_mut(l.sg3).inputs[0] = check;
    }
}

/// Removes every gate of one role by connecting its inputs straight to the
/// users of the matching outputs.
pub fn bypass_gates(g: &mut RvsdgGraph, role: GateRole) {
    let gates: Vec<NodeId> = g
        .nodes
        .values()
        .filter(|n| n.kind == NodeKind::StateGate { role })
        .map(|n| n.id)
        .collect();
    for id in gates {
        let inputs = g.node(id).inputs.clone();
        for (i, &src) in inputs.iter().enumerate() {
            g.replace_uses(Origin::out(id, i), src);
        }
        g.remove_node(id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{build_rvsdg, parse, separate_state_edges};
    use crate::ir::validate_rvsdg;

    fn prepared(src: &str) -> RvsdgGraph {
        separate_state_edges(&build_rvsdg(&parse(src).unwrap()).unwrap())
    }

    fn count(g: &RvsdgGraph, role: GateRole) -> usize {
        g.count_kind(|k| *k == NodeKind::StateGate { role })
    }

    #[test]
    fn single_store_load_loop_gets_one_queue_and_four_gates() {
        let mut g = prepared(
            "kernel k(a:i32[8]){ i = 0; do { a[i] = i; x = a[i]; i = i + 1; } while (i < 8); }",
        );
        let chains = disambiguate(&mut g, &DisambigOptions::default()).unwrap();
        assert_eq!(validate_rvsdg(&g), vec![]);
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].queues.len(), 1);
        for role in [
            GateRole::Sg1,
            GateRole::Sg2,
            GateRole::Sg3,
            GateRole::Sg4,
            GateRole::Join,
        ] {
            assert_eq!(count(&g, role), 1, "{role}");
        }
    }

    #[test]
    fn loads_only_is_identity() {
        let src = "kernel k(a:i32[8]){ i = 0; s = 0; do { s = s + a[i]; i = i + 1; } while (i < 8); return s; }";
        let mut g = prepared(src);
        let before = g.clone();
        assert!(disambiguate(&mut g, &DisambigOptions::default())
            .unwrap()
            .is_empty());
        assert_eq!(g, before);
    }

    #[test]
    fn two_stores_one_load_threads_two_queues() {
        let mut g = prepared(
            "kernel k(a:i32[8]){ i = 0; do { a[i] = 1; a[i + 1] = 2; x = a[i]; i = i + 1; } while (i < 7); }",
        );
        let chains = disambiguate(&mut g, &DisambigOptions::default()).unwrap();
        assert_eq!(chains[0].queues.len(), 2);
        assert_eq!(validate_rvsdg(&g), vec![]);
    }

    #[test]
    fn two_loads_after_store_each_get_gates() {
        let mut g = prepared(
            "kernel k(a:i32[8]){ i = 0; do { a[i] = 1; x = a[i]; y = a[0]; i = i + 1; } while (i < 8); }",
        );
        disambiguate(&mut g, &DisambigOptions::default()).unwrap();
        assert_eq!(count(&g, GateRole::Sg4), 2);
        assert_eq!(count(&g, GateRole::Sg2), 2);
        assert_eq!(count(&g, GateRole::Sg1), 1);
    }

    #[test]
    fn different_arrays_need_no_queue() {
        let mut g = prepared(
            "kernel k(a:i32[8], b:i32[8]){ i = 0; do { a[i] = b[i]; i = i + 1; } while (i < 8); }",
        );
        assert!(disambiguate(&mut g, &DisambigOptions::default())
            .unwrap()
            .is_empty());
        assert_eq!(g.count_kind(|k| matches!(k, NodeKind::AddrQueue { .. })), 0);
    }

    #[test]
    fn zero_capacity_is_rejected() {
        let mut g = prepared("kernel k(a:i32[2]){ a[0] = 1; }");
        let opts = DisambigOptions {
            capacity: 0,
            drop_gate: None,
        };
        assert_eq!(disambiguate(&mut g, &opts), Err(DisambigError::Capacity));
    }

    #[test]
    fn nested_and_guarded_chains_validate() {
        let mut g = prepared(
            "kernel k(a:i32[8]){ i = 0; do { j = 0; do { if (a[j] > i) { a[j] = i; } j = j + 1; } while (j < 4); i = i + 1; } while (i < 4); }",
        );
        let chains = disambiguate(&mut g, &DisambigOptions::default()).unwrap();
        assert_eq!(chains.len(), 1);
        assert_eq!(validate_rvsdg(&g), vec![]);
    }
}
