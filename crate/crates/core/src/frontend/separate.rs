use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::ir::{ArrayId, NodeId, NodeKind, Origin, PortType, RegionId, RvsdgGraph};

/// An old origin seen from the new graph: a plain value, or one state origin
/// per array for a global state edge.
#[derive(Clone, Debug)]
enum Mapped {
    Val(Origin),
    State(BTreeMap<ArrayId, Origin>),
}

struct Copier<'a> {
    old: &'a RvsdgGraph,
    new: RvsdgGraph,
    touched: HashMap<NodeId, BTreeSet<ArrayId>>,
}

/// Splits the global memory-state chain into one independent chain per array.
/// Distinct arrays never alias; operations on the same array keep their
/// order. Structural nodes only thread the chains of arrays used inside them.
pub fn separate_state_edges(g: &RvsdgGraph) -> RvsdgGraph {
    let mut touched = HashMap::new();
    for &n in g.nodes.keys() {
        arrays_touched(g, n, &mut touched);
    }
    let mut c = Copier {
        old: g,
        new: RvsdgGraph::new(g.name.clone(), g.arrays.clone()),
        touched,
    };
    let root = g.root;
    let new_root = c.new.root;
    c.copy_region(root, new_root, Vec::new());
    c.new
}

fn arrays_touched(
    g: &RvsdgGraph,
    n: NodeId,
    memo: &mut HashMap<NodeId, BTreeSet<ArrayId>>,
) -> BTreeSet<ArrayId> {
    if let Some(s) = memo.get(&n) {
        return s.clone();
    }
    let node = g.node(n);
    let mut s = BTreeSet::new();
    match &node.kind {
        NodeKind::Load { array, .. } | NodeKind::Store { array, .. } => {
            s.insert(*array);
        }
        _ => {
            for &r in &node.subregions {
                for m in g.region_nodes(r) {
                    s.extend(arrays_touched(g, m, memo));
                }
            }
        }
    }
    memo.insert(n, s.clone());
    s
}

impl Copier<'_> {
    fn expand(&self, m: &Mapped, arrays: &BTreeSet<ArrayId>) -> Vec<Origin> {
        match m {
            Mapped::Val(o) => vec![*o],
            Mapped::State(map) => arrays.iter().map(|a| map[a]).collect(),
        }
    }

    fn expand_types(types: &[PortType], arrays: &BTreeSet<ArrayId>) -> Vec<PortType> {
        types
            .iter()
            .flat_map(|&t| {
                if t.is_state() {
                    vec![PortType::MemState; arrays.len()]
                } else {
                    vec![t]
                }
            })
            .collect()
    }

    /// Wraps consecutive new origins back into `Mapped` values following
    /// the old types.
    fn collapse(
        types: &[PortType],
        arrays: &BTreeSet<ArrayId>,
        mut origins: impl Iterator<Item = Origin>,
        outer: Option<&BTreeMap<ArrayId, Origin>>,
    ) -> Vec<Mapped> {
        types
            .iter()
            .map(|&t| {
                if t.is_state() {
                    let mut map = outer.cloned().unwrap_or_default();
                    for &a in arrays {
                        map.insert(a, origins.next().unwrap());
                    }
                    Mapped::State(map)
                } else {
                    Mapped::Val(origins.next().unwrap())
                }
            })
            .collect()
    }

    fn copy_region(&mut self, old_r: RegionId, new_r: RegionId, args: Vec<Mapped>) -> Vec<Mapped> {
        let old = self.old;
        let mut map: HashMap<Origin, Mapped> = args
            .into_iter()
            .enumerate()
            .map(|(i, m)| (Origin::arg(old_r, i), m))
            .collect();
        let order = old.topo_order(old_r).expect("acyclic region");
        for n in order {
            let node = old.node(n);
            let ins: Vec<Mapped> = node.inputs.iter().map(|o| map[o].clone()).collect();
            let outs = match &node.kind {
                NodeKind::Load { array, .. } | NodeKind::Store { array, .. } => {
                    let array = *array;
                    let mut state_map = None;
                    let inputs: Vec<Origin> = ins
                        .iter()
                        .map(|m| match m {
                            Mapped::Val(o) => *o,
                            Mapped::State(s) => {
                                state_map = Some(s.clone());
                                s[&array]
                            }
                        })
                        .collect();
                    let id =
                        self.new
                            .add_node(new_r, node.kind.clone(), inputs, node.outputs.clone());
                    node.outputs
                        .iter()
                        .enumerate()
                        .map(|(i, t)| {
                            if t.is_state() {
                                let mut s = state_map.clone().expect("stateful op");
                                s.insert(array, Origin::out(id, i));
                                Mapped::State(s)
                            } else {
                                Mapped::Val(Origin::out(id, i))
                            }
                        })
                        .collect()
                }
                NodeKind::Lambda { .. } | NodeKind::Gamma | NodeKind::Theta => {
                    self.copy_structural(new_r, n, &ins)
                }
                _ => {
                    let inputs = ins
                        .iter()
                        .map(|m| match m {
                            Mapped::Val(o) => *o,
                            Mapped::State(_) => unreachable!("state into a simple node"),
                        })
                        .collect();
                    let id =
                        self.new
                            .add_node(new_r, node.kind.clone(), inputs, node.outputs.clone());
                    (0..node.outputs.len())
                        .map(|i| Mapped::Val(Origin::out(id, i)))
                        .collect()
                }
            };
            for (i, m) in outs.into_iter().enumerate() {
                map.insert(Origin::out(n, i), m);
            }
        }
        old.region(old_r)
            .results
            .iter()
            .map(|o| map[o].clone())
            .collect()
    }

    fn copy_structural(&mut self, new_r: RegionId, n: NodeId, ins: &[Mapped]) -> Vec<Mapped> {
        let old = self.old;
        let node = old.node(n);
        let arrays = self.touched[&n].clone();
        let outer_state = ins.iter().find_map(|m| match m {
            Mapped::State(s) => Some(s.clone()),
            _ => None,
        });
        let inputs: Vec<Origin> = ins.iter().flat_map(|m| self.expand(m, &arrays)).collect();
        let outputs = Self::expand_types(&node.outputs, &arrays);
        let id = self
            .new
            .add_node(new_r, node.kind.clone(), inputs, outputs.clone());
        for &sub in &node.subregions {
            let old_sub = old.region(sub);
            let arg_types = Self::expand_types(&old_sub.args, &arrays);
            let new_sub = self.new.add_region(id, arg_types.clone());
            let args = Self::collapse(
                &old_sub.args,
                &arrays,
                (0..arg_types.len()).map(|i| Origin::arg(new_sub, i)),
                None,
            );
            let results = self.copy_region(sub, new_sub, args);
            let flat: Vec<Origin> = results
                .iter()
                .flat_map(|m| self.expand(m, &arrays))
                .collect();
            self.new.region_mut(new_sub).results = flat;
        }
        Self::collapse(
            &node.outputs,
            &arrays,
            (0..outputs.len()).map(|i| Origin::out(id, i)),
            outer_state.as_ref(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{build_rvsdg, parse};
    use crate::ir::validate_rvsdg;

    fn separated(src: &str) -> RvsdgGraph {
        let g = separate_state_edges(&build_rvsdg(&parse(src).unwrap()).unwrap());
        assert_eq!(validate_rvsdg(&g), vec![]);
        g
    }

    #[test]
    fn two_arrays_get_disjoint_chains() {
        let g = separated("kernel k(a:i32[4], b:i32[4]){ a[0] = 1; b[0] = 2; a[1] = 3; }");
        let body = g.lambda_body().unwrap();
        assert_eq!(g.region(body).args.len(), 2);
        // Each store's state input comes from its own chain.
        for n in g.nodes.values() {
            if let NodeKind::Store { array, .. } = n.kind {
                let mut o = n.inputs[2];
                loop {
                    match o {
                        Origin::Arg { index, .. } => {
                            assert_eq!(index, array.index());
                            break;
                        }
                        Origin::Output { node, .. } => {
                            let prev = g.node(node);
                            let NodeKind::Store { array: pa, .. } = prev.kind else {
                                panic!("unexpected producer")
                            };
                            assert_eq!(pa, array);
                            o = prev.inputs[2];
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn no_memory_means_no_state_edges() {
        let g = separated("kernel k(x:i32){ y = x + 1; return y; }");
        assert!(g
            .nodes
            .values()
            .all(|n| n.outputs.iter().all(|t| !t.is_state())));
        let body = g.lambda_body().unwrap();
        assert!(g.region(body).args.iter().all(|t| !t.is_state()));
    }
}
