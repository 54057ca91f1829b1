use serde::Serialize;
use thiserror::Error;

use crate::ir::{NodeId, NodeKind, Origin, PortType, RvsdgGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopVarClass {
    Modified,
    Invariant,
    Predicate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ThetaLowering {
    pub theta: NodeId,
    pub hls_loop: NodeId,
    /// One entry per loop variable, then the predicate.
    pub classes: Vec<LoopVarClass>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum LowerError {
    #[error("theta {0} has no loop variables")]
    EmptyTheta(NodeId),
}

/// Classifies theta loop variables: invariant iff the region result is its
/// own argument. The predicate is listed last.
pub fn classify(g: &RvsdgGraph, theta: NodeId) -> Vec<LoopVarClass> {
    let r = g.region(g.node(theta).subregions[0]);
    let mut out: Vec<LoopVarClass> = r.results[1..]
        .iter()
        .enumerate()
        .map(|(i, &res)| {
            if res == Origin::arg(r.id, i) {
                LoopVarClass::Invariant
            } else {
                LoopVarClass::Modified
            }
        })
        .collect();
    out.push(LoopVarClass::Predicate);
    out
}

/// Replaces every theta with an HLS-LOOP, innermost first. The loop region
/// keeps its nodes; back edges become extra argument/result pairs.
pub fn lower_theta(g: &mut RvsdgGraph) -> Result<Vec<ThetaLowering>, LowerError> {
    let mut report = Vec::new();
    for region in g.regions_innermost_first() {
        if !g.regions.contains_key(&region) {
            continue;
        }
        for n in g.region_nodes(region) {
            if g.node(n).kind == NodeKind::Theta {
                report.push(lower_one(g, n)?);
            }
        }
    }
    Ok(report)
}

fn lower_one(g: &mut RvsdgGraph, theta: NodeId) -> Result<ThetaLowering, LowerError> {
    let node = g.node(theta).clone();
    if node.inputs.is_empty() {
        return Err(LowerError::EmptyTheta(theta));
    }
    let classes = classify(g, theta);
    let sub = node.subregions[0];
    let n = node.inputs.len();
    let results = g.region(sub).results.clone();
    let pred = results[0];
    let modified: Vec<usize> = (0..n)
        .filter(|&i| classes[i] == LoopVarClass::Modified)
        .collect();

    let hls = g.add_node(
        node.region,
        NodeKind::HlsLoop {
            back_edges: 1 + modified.len(),
        },
        node.inputs.clone(),
        modified.iter().map(|&i| node.outputs[i]).collect(),
    );
    {
        let r = g.region_mut(sub);
        r.owner = Some(hls);
        r.args.push(PortType::PREDICATE);
        for &i in &modified {
            let t = r.args[i];
            r.args.push(t);
        }
    }
    g.node_mut(hls).subregions.push(sub);

    let pred_arg = Origin::arg(sub, n);
    let pb = g.add_node(
        sub,
        NodeKind::PredBuf,
        vec![pred_arg],
        vec![PortType::PREDICATE],
    );
    let pb_out = Origin::out(pb, 0);

    // Entry side: every use of a loop-variable argument now reads the NDMUX
    // or LOOP-BUF output.
    for i in 0..n {
        let arg = Origin::arg(sub, i);
        let ty = g.region(sub).args[i];
        let uses = g.users(arg);
        let m = match modified.iter().position(|&x| x == i) {
            Some(j) => g.add_node(
                sub,
                NodeKind::Ndmux,
                vec![pb_out, arg, Origin::arg(sub, n + 1 + j)],
                vec![ty],
            ),
            None => g.add_node(sub, NodeKind::LoopBuf, vec![pb_out, arg], vec![ty]),
        };
        for u in uses {
            g.set_user(u, Origin::out(m, 0));
        }
    }

    // Exit side: results were rewritten above if they referenced arguments.
    let results = g.region(sub).results.clone();
    let mut back = vec![pred];
    let mut exits = Vec::new();
    for &i in &modified {
        let value = results[1 + i];
        let ty = node.outputs[i];
        let br = g.add_node(sub, NodeKind::Branch, vec![pred, value], vec![ty, ty]);
        let buf = g.add_node(
            sub,
            NodeKind::Buffer {
                capacity: 1,
                opaque: true,
                back_edge: true,
            },
            vec![Origin::out(br, 1)],
            vec![ty],
        );
        back.push(Origin::out(buf, 0));
        exits.push(Origin::out(br, 0));
    }
    back.extend(exits);
    g.region_mut(sub).results = back;

    // Outside: invariant outputs read the loop input's source directly.
    for i in 0..n {
        let new = match modified.iter().position(|&x| x == i) {
            Some(j) => Origin::out(hls, j),
            None => node.inputs[i],
        };
        g.replace_uses(Origin::out(theta, i), new);
    }
    g.remove_node(theta);
    Ok(ThetaLowering {
        theta,
        hls_loop: hls,
        classes,
    })
}
