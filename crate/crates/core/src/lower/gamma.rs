use serde::Serialize;

use crate::ir::{BinOp, NodeId, NodeKind, Origin, RvsdgGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaForm {
    /// All regions run; a DMUX per output picks the result.
    Speculative,
    /// A BRANCH per input feeds exactly one region; an NDMUX per output.
    Guarded,
}

/// What happened to one gamma, with the facts that decided the form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GammaLowering {
    pub node: NodeId,
    pub form: GammaForm,
    pub carries_state: bool,
    pub contains_loop: bool,
    /// A division could trap if run speculatively.
    pub may_trap: bool,
}

/// Flattens every gamma into its parent region, innermost first.
pub fn lower_gamma(g: &mut RvsdgGraph) -> Vec<GammaLowering> {
    let mut report = Vec::new();
    for region in g.regions_innermost_first() {
        if !g.regions.contains_key(&region) {
            continue;
        }
        for n in g.region_nodes(region) {
            if g.node(n).kind == NodeKind::Gamma {
                report.push(lower_one(g, n));
            }
        }
    }
    report
}

fn lower_one(g: &mut RvsdgGraph, gamma: NodeId) -> GammaLowering {
    let node = g.node(gamma).clone();
    let parent = node.region;
    let carries_state = node.inputs.iter().any(|&o| g.origin_type(o).is_state())
        || node.outputs.iter().any(|t| t.is_state());
    let contains_loop = g
        .nested_nodes(gamma)
        .iter()
        .any(|&m| matches!(g.node(m).kind, NodeKind::Theta | NodeKind::HlsLoop { .. }));
    let may_trap = g.nested_nodes(gamma).iter().any(|&m| {
        matches!(
            g.node(m).kind,
            NodeKind::Binary {
                bin: BinOp::Div | BinOp::Rem
            }
        )
    });
    let form = if carries_state || contains_loop || may_trap {
        GammaForm::Guarded
    } else {
        GammaForm::Speculative
    };
    let pred = node.inputs[0];
    let k = node.subregions.len();

    // Per region: what each argument turns into in the parent.
    let arg_sources: Vec<Vec<Origin>> = match form {
        GammaForm::Speculative => vec![node.inputs[1..].to_vec(); k],
        GammaForm::Guarded => {
            let mut per_region = vec![Vec::new(); k];
            for &input in &node.inputs[1..] {
                let ty = g.origin_type(input);
                let br = g.add_node(parent, NodeKind::Branch, vec![pred, input], vec![ty; k]);
                for (s, list) in per_region.iter_mut().enumerate() {
                    list.push(Origin::out(br, s));
                }
            }
            per_region
        }
    };

    let mut results: Vec<Vec<Origin>> = Vec::new();
    for (s, &sub) in node.subregions.iter().enumerate() {
        let map = |o: Origin| match o {
            Origin::Arg { region, index } if region == sub => arg_sources[s][index],
            other => other,
        };
        for m in g.region_nodes(sub) {
            let n = g.node_mut(m);
            n.region = parent;
            for input in n.inputs.iter_mut() {
                *input = map(*input);
            }
        }
        results.push(g.region(sub).results.iter().map(|&o| map(o)).collect());
    }

    let mux = match form {
        GammaForm::Speculative => NodeKind::Dmux,
        GammaForm::Guarded => NodeKind::Ndmux,
    };
    for (i, &ty) in node.outputs.iter().enumerate() {
        let mut inputs = vec![pred];
        inputs.extend(results.iter().map(|r| r[i]));
        let m = g.add_node(parent, mux.clone(), inputs, vec![ty]);
        g.replace_uses(Origin::out(gamma, i), Origin::out(m, 0));
    }
    for &sub in &node.subregions {
        g.remove_region(sub);
    }
    g.remove_node(gamma);
    GammaLowering {
        node: gamma,
        form,
        carries_state,
        contains_loop,
        may_trap,
    }
}
