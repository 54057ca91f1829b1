//! Graphviz rendering. Regions and inlined loops become clusters; edges are
//! colored by payload type and state edges are dashed.

use std::fmt::Write;

use super::{ElasticNetlist, NodeKind, Origin, PortType, RegionId, RvsdgGraph};

fn edge_style(ty: PortType) -> &'static str {
    match ty {
        PortType::Value { .. } => "color=black",
        PortType::Control { .. } => "color=blue",
        PortType::MemState => "color=red,style=dashed",
        PortType::MemRequest => "color=darkgreen",
        PortType::MemResponse => "color=darkgreen,style=dotted",
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn origin_id(o: Origin) -> String {
    match o {
        Origin::Arg { region, index } => format!("{region}_a{index}"),
        Origin::Output { node, .. } => node.to_string(),
    }
}

pub fn rvsdg_to_dot(g: &RvsdgGraph) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "digraph \"{}\" {{", escape(&g.name));
    s.push_str("  compound=true;\n  node [shape=box,fontname=monospace];\n");
    write_region(g, g.root, 1, &mut s);
    for n in g.nodes.values() {
        for (i, &o) in n.inputs.iter().enumerate() {
            if !g.origin_exists(o) {
                continue;
            }
            let _ = writeln!(
                s,
                "  {} -> {} [{},headlabel=\"{i}\"];",
                origin_id(o),
                n.id,
                edge_style(g.origin_type(o))
            );
        }
    }
    for r in g.regions.values() {
        for (i, &o) in r.results.iter().enumerate() {
            if !g.origin_exists(o) {
                continue;
            }
            let _ = writeln!(
                s,
                "  {} -> {}_r{i} [{}];",
                origin_id(o),
                r.id,
                edge_style(g.origin_type(o))
            );
        }
    }
    s.push_str("}\n");
    s
}

fn write_region(g: &RvsdgGraph, region: RegionId, depth: usize, s: &mut String) {
    let pad = "  ".repeat(depth);
    let r = g.region(region);
    let label = match r.owner {
        Some(o) => format!("{} {}", g.node(o).kind.label(), o),
        None => "root".into(),
    };
    let _ = writeln!(s, "{pad}subgraph cluster_{region} {{");
    let _ = writeln!(s, "{pad}  label=\"{}\";", escape(&label));
    for (i, ty) in r.args.iter().enumerate() {
        let _ = writeln!(
            s,
            "{pad}  {region}_a{i} [shape=invtriangle,label=\"a{i}:{ty}\"];"
        );
    }
    for i in 0..r.results.len() {
        let _ = writeln!(s, "{pad}  {region}_r{i} [shape=triangle,label=\"r{i}\"];");
    }
    for n in g.region_nodes(region) {
        let node = g.node(n);
        if node.subregions.is_empty() {
            let _ = writeln!(s, "{pad}  {n} [label=\"{}\"];", escape(&node.kind.label()));
        } else {
            let shape = if matches!(node.kind, NodeKind::Lambda { .. }) {
                "doubleoctagon"
            } else {
                "octagon"
            };
            let _ = writeln!(
                s,
                "{pad}  {n} [shape={shape},label=\"{}\"];",
                escape(&node.kind.label())
            );
            for &sub in &node.subregions {
                write_region(g, sub, depth + 1, s);
            }
        }
    }
    let _ = writeln!(s, "{pad}}}");
}

pub fn netlist_to_dot(net: &ElasticNetlist) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "digraph \"{}\" {{", escape(&net.name));
    s.push_str("  node [shape=box,fontname=monospace];\n");
    write_cluster(net, None, 1, &mut s);
    for c in &net.channels {
        let bold = if c.back_edge { ",penwidth=2" } else { "" };
        let _ = writeln!(
            s,
            "  {} -> {} [{}{bold},taillabel=\"{}\",headlabel=\"{}\"];",
            c.src.node,
            c.dst.node,
            edge_style(c.ty),
            c.src.port,
            c.dst.port
        );
    }
    s.push_str("}\n");
    s
}

fn write_cluster(net: &ElasticNetlist, cluster: Option<usize>, depth: usize, s: &mut String) {
    let pad = "  ".repeat(depth);
    for n in net.nodes.iter().filter(|n| n.cluster == cluster) {
        let _ = writeln!(s, "{pad}{} [label=\"{}\"];", n.id, escape(&n.kind.label()));
    }
    for (i, c) in net.clusters.iter().enumerate() {
        if c.parent != cluster {
            continue;
        }
        let _ = writeln!(s, "{pad}subgraph cluster_loop{i} {{");
        let _ = writeln!(s, "{pad}  label=\"HLS-LOOP {}\";", c.loop_node);
        write_cluster(net, Some(i), depth + 1, s);
        let _ = writeln!(s, "{pad}}}");
    }
}
