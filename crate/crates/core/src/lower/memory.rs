use std::collections::BTreeMap;

use crate::ir::{
    load_req_output, load_resp_input, ArrayId, MemOpId, MemPort, NodeId, NodeKind, Origin,
    PortType, RvsdgGraph,
};

/// Attaches every load and store to one MEM-REQ/MEM-RESP pair per array,
/// placed in the kernel body. Ports are ordered by memory-op id.
pub fn lower_memory_ports(g: &mut RvsdgGraph) {
    let Some(body) = g.lambda_body() else {
        return;
    };
    let mut per_array: BTreeMap<ArrayId, Vec<(MemOpId, NodeId)>> = BTreeMap::new();
    for n in g.nodes.values() {
        match n.kind {
            NodeKind::Load {
                mem,
                array,
                ported: false,
                ..
            }
            | NodeKind::Store {
                mem,
                array,
                ported: false,
            } => per_array.entry(array).or_default().push((mem, n.id)),
            _ => {}
        }
    }
    for (array, mut ops) in per_array {
        ops.sort();
        let mut ports = Vec::new();
        let mut req_inputs = Vec::new();
        let mut loads = Vec::new();
        for &(mem, id) in &ops {
            let node = g.node_mut(id);
            match &mut node.kind {
                NodeKind::Load {
                    stateful, ported, ..
                } => {
                    *ported = true;
                    let s = *stateful;
                    node.outputs.push(PortType::MemRequest);
                    req_inputs.push(Origin::out(id, load_req_output(s)));
                    ports.push(MemPort {
                        op: mem,
                        store: false,
                    });
                    loads.push((mem, id, s));
                }
                NodeKind::Store { ported, .. } => {
                    *ported = true;
                    node.outputs.push(PortType::MemRequest);
                    node.outputs.push(PortType::MemRequest);
                    req_inputs.push(Origin::out(id, 1));
                    req_inputs.push(Origin::out(id, 2));
                    ports.push(MemPort {
                        op: mem,
                        store: true,
                    });
                }
                _ => unreachable!(),
            }
        }
        g.add_node(
            body,
            NodeKind::MemReq { array, ports },
            req_inputs,
            Vec::new(),
        );
        let resp = g.add_node(
            body,
            NodeKind::MemResp {
                array,
                loads: loads.iter().map(|l| l.0).collect(),
            },
            Vec::new(),
            vec![PortType::MemResponse; loads.len()],
        );
        for (k, &(_, id, stateful)) in loads.iter().enumerate() {
            let node = g.node_mut(id);
            debug_assert_eq!(node.inputs.len(), load_resp_input(stateful));
            node.inputs.push(Origin::out(resp, k));
        }
    }
}
