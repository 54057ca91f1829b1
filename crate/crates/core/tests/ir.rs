use elastic_hls::frontend::{build_rvsdg, parse, separate_state_edges};
use elastic_hls::ir::dot::{netlist_to_dot, rvsdg_to_dot};
use elastic_hls::ir::json::{netlist_to_json, rvsdg_to_json};
use elastic_hls::ir::{
    validate_netlist, validate_rvsdg, ElasticNetlist, NetNodeKind, NetlistRule, NodeKind, Origin,
    PortType, RvsdgGraph, RvsdgRule,
};
use elastic_hls::pipeline::{compile_source, PipelineConfig};

const MAX: &str = "kernel max(a:i32, b:i32) { if (a > b) { m = a; } else { m = b; } return m; }";
const COUNT: &str = "kernel c(n:i32) { i = 0; do { i = i + 1; } while (i < n); return i; }";

fn graph(src: &str) -> RvsdgGraph {
    separate_state_edges(&build_rvsdg(&parse(src).unwrap()).unwrap())
}

fn find(g: &RvsdgGraph, kind: &NodeKind) -> elastic_hls::ir::NodeId {
    g.nodes.values().find(|n| &n.kind == kind).unwrap().id
}

fn rules(g: &RvsdgGraph) -> Vec<RvsdgRule> {
    validate_rvsdg(g).into_iter().map(|v| v.rule).collect()
}

#[test]
fn max_of_two_is_well_formed() {
    assert!(validate_rvsdg(&graph(MAX)).is_empty());
}

#[test]
fn value_escaping_its_region_is_reported() {
    let mut g = graph(MAX);
    let gamma = find(&g, &NodeKind::Gamma);
    let inner = g.node(gamma).subregions[0];
    let outer = g.node(gamma).region;
    g.add_node(outer, NodeKind::Sink, vec![Origin::arg(inner, 0)], vec![]);
    assert!(
        rules(&g).contains(&RvsdgRule::RegionEscape),
        "{:?}",
        validate_rvsdg(&g)
    );
}

#[test]
fn theta_missing_a_result_is_an_arity_error() {
    let mut g = graph(COUNT);
    let theta = find(&g, &NodeKind::Theta);
    let body = g.node(theta).subregions[0];
    g.region_mut(body).results.pop();
    assert!(
        rules(&g).contains(&RvsdgRule::Arity),
        "{:?}",
        validate_rvsdg(&g)
    );
}

#[test]
fn lowered_counting_loop_is_a_valid_netlist() {
    let c = compile_source(COUNT, &PipelineConfig::full()).unwrap();
    assert_eq!(validate_netlist(c.netlist()), vec![]);
}

fn konst(net: &mut ElasticNetlist, ty: PortType) -> elastic_hls::ir::NodeId {
    net.add_node(
        NetNodeKind::Const {
            value: 1,
            one_shot: false,
        },
        0,
        vec![ty],
    )
}

#[test]
fn fan_out_is_reported() {
    let mut net = ElasticNetlist::new("fan");
    let c = konst(&mut net, PortType::VALUE);
    let a = net.add_node(NetNodeKind::Sink, 1, vec![]);
    let b = net.add_node(NetNodeKind::Sink, 1, vec![]);
    net.connect((c, 0), (a, 0));
    net.connect((c, 0), (b, 0));
    let v = validate_netlist(&net);
    assert_eq!(
        v.iter().map(|v| v.rule).collect::<Vec<_>>(),
        vec![NetlistRule::FanOut]
    );
}

#[test]
fn branch_mux_loop_without_a_buffer_is_a_combinational_cycle() {
    let build = |buffered: bool| {
        let mut net = ElasticNetlist::new("loop");
        let sel_b = konst(&mut net, PortType::PREDICATE);
        let sel_m = konst(&mut net, PortType::PREDICATE);
        let init = konst(&mut net, PortType::VALUE);
        let br = net.add_node(
            NetNodeKind::Branch,
            2,
            vec![PortType::VALUE, PortType::VALUE],
        );
        let mux = net.add_node(NetNodeKind::Ndmux, 3, vec![PortType::VALUE]);
        let sink = net.add_node(NetNodeKind::Sink, 1, vec![]);
        net.connect((sel_b, 0), (br, 0));
        net.connect((sel_m, 0), (mux, 0));
        net.connect((init, 0), (mux, 1));
        net.connect((mux, 0), (br, 1));
        net.connect((br, 0), (sink, 0));
        if buffered {
            let buf = net.add_node(
                NetNodeKind::Buffer {
                    capacity: 1,
                    opaque: true,
                },
                1,
                vec![PortType::VALUE],
            );
            net.connect((br, 1), (buf, 0));
            net.connect((buf, 0), (mux, 2));
        } else {
            net.connect((br, 1), (mux, 2));
        }
        validate_netlist(&net)
            .into_iter()
            .map(|v| v.rule)
            .collect::<Vec<_>>()
    };
    assert_eq!(build(false), vec![NetlistRule::CombinationalCycle]);
    assert_eq!(build(true), vec![]);
}

#[test]
fn empty_graph_renders_without_nodes() {
    let dot = rvsdg_to_dot(&RvsdgGraph::new("empty", vec![]));
    assert!(dot.starts_with("digraph \"empty\" {"));
    assert!(dot.trim_end().ends_with('}'));
    assert!(!dot.contains("[label=") && !dot.contains(" -> "), "{dot}");
}

#[test]
fn gamma_with_state_edge_renders_two_clusters_and_dashed_state() {
    let g = graph("kernel g(x:i32, a:i32[4]) { if (x > 0) { a[0] = x; } return x; }");
    let dot = rvsdg_to_dot(&g);
    let gamma_clusters = dot
        .lines()
        .filter(|l| l.trim_start().starts_with("label=\"GAMMA "))
        .count();
    assert_eq!(gamma_clusters, 2, "{dot}");
    assert!(dot.contains("style=dashed"));
}

#[test]
fn netlist_exports_are_consistent() {
    let c = compile_source(MAX, &PipelineConfig::full()).unwrap();
    let net = c.netlist();
    let json = netlist_to_json(net);
    assert_eq!(json["nodes"].as_array().unwrap().len(), net.nodes.len());
    let dot = netlist_to_dot(net);
    assert_eq!(dot.matches(" -> ").count(), net.channels.len());
    let rv = rvsdg_to_json(&c.graph);
    assert!(rv["nodes"].as_array().is_some_and(|n| !n.is_empty()));
}
