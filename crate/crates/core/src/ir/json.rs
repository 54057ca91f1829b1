//! Versioned JSON export of both graph forms.

use serde::Serialize;
use serde_json::{json, Value};

use super::{ElasticNetlist, Origin, RvsdgGraph};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct Edge {
    from: String,
    from_port: usize,
    to: String,
    to_port: usize,
    #[serde(rename = "type")]
    ty: String,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    back_edge: bool,
}

fn origin_parts(o: Origin) -> (String, usize) {
    match o {
        Origin::Arg { region, index } => (format!("{region}.arg"), index),
        Origin::Output { node, index } => (node.to_string(), index),
    }
}

pub fn rvsdg_to_json(g: &RvsdgGraph) -> Value {
    let nodes: Vec<Value> = g
        .nodes
        .values()
        .map(|n| {
            json!({
                "id": n.id.to_string(),
                "region": n.region.to_string(),
                "kind": n.kind,
                "outputs": n.outputs,
                "subregions": n.subregions.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let regions: Vec<Value> = g
        .regions
        .values()
        .map(|r| {
            json!({
                "id": r.id.to_string(),
                "owner": r.owner.map(|o| o.to_string()),
                "args": r.args,
            })
        })
        .collect();
    let mut edges = Vec::new();
    for n in g.nodes.values() {
        for (i, &o) in n.inputs.iter().enumerate() {
            let (from, from_port) = origin_parts(o);
            edges.push(Edge {
                from,
                from_port,
                to: n.id.to_string(),
                to_port: i,
                ty: g.origin_type(o).to_string(),
                back_edge: false,
            });
        }
    }
    for r in g.regions.values() {
        for (i, &o) in r.results.iter().enumerate() {
            let (from, from_port) = origin_parts(o);
            edges.push(Edge {
                from,
                from_port,
                to: format!("{}.result", r.id),
                to_port: i,
                ty: g.origin_type(o).to_string(),
                back_edge: false,
            });
        }
    }
    json!({
        "version": FORMAT_VERSION,
        "kind": "rvsdg",
        "name": g.name,
        "arrays": g.arrays,
        "regions": regions,
        "nodes": nodes,
        "edges": edges,
    })
}

pub fn netlist_to_json(net: &ElasticNetlist) -> Value {
    let nodes: Vec<Value> = net
        .nodes
        .iter()
        .map(|n| {
            json!({
                "id": n.id.to_string(),
                "kind": n.kind,
                "inputs": n.n_inputs,
                "outputs": n.outputs,
                "cluster": n.cluster,
            })
        })
        .collect();
    let edges: Vec<Edge> = net
        .channels
        .iter()
        .map(|c| Edge {
            from: c.src.node.to_string(),
            from_port: c.src.port,
            to: c.dst.node.to_string(),
            to_port: c.dst.port,
            ty: c.ty.to_string(),
            back_edge: c.back_edge,
        })
        .collect();
    json!({
        "version": FORMAT_VERSION,
        "kind": "netlist",
        "name": net.name,
        "arrays": net.arrays,
        "clusters": net.clusters,
        "nodes": nodes,
        "edges": edges,
    })
}
