use crate::ir::{NodeKind, Origin, PortType, RvsdgGraph};

/// Gives every origin exactly one user: a FORK for several users, a SINK
/// for none. Lambda node outputs and the root region are left alone.
pub fn enforce_point_to_point(g: &mut RvsdgGraph) {
    let uses = g.use_map();
    let mut origins: Vec<Origin> = Vec::new();
    for n in g.nodes.values() {
        if matches!(n.kind, NodeKind::Lambda { .. }) {
            continue;
        }
        origins.extend((0..n.outputs.len()).map(|i| Origin::out(n.id, i)));
    }
    for r in g.regions.values() {
        if r.owner.is_some() {
            origins.extend((0..r.args.len()).map(|i| Origin::arg(r.id, i)));
        }
    }
    origins.sort();
    for o in origins {
        let users = uses.get(&o).cloned().unwrap_or_default();
        let region = g.origin_region(o);
        let ty: PortType = g.origin_type(o);
        match users.len() {
            0 => {
                g.add_node(region, NodeKind::Sink, vec![o], Vec::new());
            }
            1 => {}
            k => {
                let fork = g.add_node(region, NodeKind::Fork, vec![o], vec![ty; k]);
                for (i, u) in users.into_iter().enumerate() {
                    g.set_user(u, Origin::out(fork, i));
                }
            }
        }
    }
}
