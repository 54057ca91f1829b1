use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use super::ast::{Expr, KernelAst, Span, Stmt};
use crate::ir::{
    ArrayId, ArrayInfo, CmpOp, NodeId, NodeKind, Origin, PortType, RegionId, RvsdgGraph,
};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("{span}: scalar '{name}' may be read before it is assigned")]
    Uninitialized { name: String, span: Span },
    #[error("{span}: unknown array '{name}'")]
    UnknownArray { name: String, span: Span },
    #[error("{span}: loop carries no values and touches no memory")]
    EmptyLoop { span: Span },
}

/// Values live at one program point: SSA origins of defined scalars and the
/// current memory state, if the kernel touches memory at all.
#[derive(Clone, Debug, Default)]
struct Env {
    vars: BTreeMap<String, Origin>,
    state: Option<Origin>,
}

struct Builder<'a> {
    g: RvsdgGraph,
    arrays: HashMap<&'a str, ArrayId>,
}

/// Builds the RVSDG of a kernel with one global memory-state chain that
/// orders every load and store in program order.
pub fn build_rvsdg(ast: &KernelAst) -> Result<RvsdgGraph, BuildError> {
    let arrays: Vec<ArrayInfo> = ast
        .array_params()
        .enumerate()
        .map(|(i, (p, len))| ArrayInfo {
            id: ArrayId(i as u32),
            name: p.name.clone(),
            len,
        })
        .collect();
    let mut b = Builder {
        g: RvsdgGraph::new(ast.name.clone(), arrays),
        arrays: ast
            .array_params()
            .enumerate()
            .map(|(i, (p, _))| (p.name.as_str(), ArrayId(i as u32)))
            .collect(),
    };
    let has_mem =
        ast.body.iter().any(Stmt::has_mem) || ast.result.as_ref().is_some_and(Expr::has_mem);

    let root = b.g.root;
    let lambda = b.g.add_node(
        root,
        NodeKind::Lambda {
            name: ast.name.clone(),
        },
        Vec::new(),
        Vec::new(),
    );
    let mut args: Vec<PortType> = ast.scalar_params().map(|_| PortType::VALUE).collect();
    if has_mem {
        args.push(PortType::MemState);
    }
    let body = b.g.add_region(lambda, args);
    let mut env = Env::default();
    for (i, p) in ast.scalar_params().enumerate() {
        env.vars.insert(p.name.clone(), Origin::arg(body, i));
    }
    if has_mem {
        env.state = Some(Origin::arg(body, env.vars.len()));
    }

    let mut live = BTreeSet::new();
    if let Some(r) = &ast.result {
        let mut reads = Vec::new();
        r.collect_reads(&mut reads);
        live.extend(reads);
    }
    b.stmts(body, &mut env, &ast.body, &live)?;
    let mut results = Vec::new();
    if let Some(r) = &ast.result {
        results.push(b.expr(body, &mut env, r)?);
    }
    results.extend(env.state);
    b.g.region_mut(body).results = results;
    Ok(b.g)
}

fn reads_of(stmts: &[Stmt]) -> BTreeSet<String> {
    let mut v = Vec::new();
    stmts.iter().for_each(|s| s.collect_reads(&mut v));
    v.into_iter().collect()
}

fn writes_of(stmts: &[Stmt]) -> BTreeSet<String> {
    let mut v = Vec::new();
    stmts.iter().for_each(|s| s.collect_writes(&mut v));
    v.into_iter().collect()
}

impl Builder<'_> {
    fn node(
        &mut self,
        r: RegionId,
        kind: NodeKind,
        inputs: Vec<Origin>,
        outputs: Vec<PortType>,
    ) -> NodeId {
        self.g.add_node(r, kind, inputs, outputs)
    }

    fn constant(&mut self, r: RegionId, value: i32) -> Origin {
        Origin::out(
            self.node(
                r,
                NodeKind::Constant { value },
                vec![],
                vec![PortType::VALUE],
            ),
            0,
        )
    }

    fn array(&self, name: &str, span: Span) -> Result<ArrayId, BuildError> {
        self.arrays
            .get(name)
            .copied()
            .ok_or_else(|| BuildError::UnknownArray {
                name: name.to_string(),
                span,
            })
    }

    /// `live` holds the scalars that may be read after the list.
    fn stmts(
        &mut self,
        r: RegionId,
        env: &mut Env,
        list: &[Stmt],
        live: &BTreeSet<String>,
    ) -> Result<(), BuildError> {
        for (i, s) in list.iter().enumerate() {
            let mut after = reads_of(&list[i + 1..]);
            after.extend(live.iter().cloned());
            self.stmt(r, env, s, &after)?;
        }
        Ok(())
    }

    fn stmt(
        &mut self,
        r: RegionId,
        env: &mut Env,
        s: &Stmt,
        live: &BTreeSet<String>,
    ) -> Result<(), BuildError> {
        match s {
            Stmt::Assign { name, value, .. } => {
                let v = self.expr(r, env, value)?;
                env.vars.insert(name.clone(), v);
            }
            Stmt::Store {
                array,
                index,
                value,
                mem,
                span,
            } => {
                let addr = self.expr(r, env, index)?;
                let data = self.expr(r, env, value)?;
                let array = self.array(array, *span)?;
                let state = env.state.expect("store without a state chain");
                let n = self.node(
                    r,
                    NodeKind::Store {
                        mem: *mem,
                        array,
                        ported: false,
                    },
                    vec![addr, data, state],
                    vec![PortType::MemState],
                );
                env.state = Some(Origin::out(n, 0));
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
                ..
            } => self.gamma(r, env, cond, [else_body, then_body], live)?,
            Stmt::DoWhile { body, cond, span } => self.theta(r, env, body, cond, live, *span)?,
        }
        Ok(())
    }

    /// Builds a two-way predicate: comparisons directly, anything else as
    /// `e != 0`.
    fn predicate(&mut self, r: RegionId, env: &mut Env, e: &Expr) -> Result<Origin, BuildError> {
        let (cmp, lhs, rhs) = match e {
            Expr::Cmp { op, lhs, rhs, .. } => {
                let a = self.expr(r, env, lhs)?;
                let b = self.expr(r, env, rhs)?;
                (*op, a, b)
            }
            _ => {
                let a = self.expr(r, env, e)?;
                let zero = self.constant(r, 0);
                (CmpOp::Ne, a, zero)
            }
        };
        let n = self.node(
            r,
            NodeKind::Compare {
                cmp,
                predicate: true,
            },
            vec![lhs, rhs],
            vec![PortType::PREDICATE],
        );
        Ok(Origin::out(n, 0))
    }

    /// Subregion 0 is taken on a false predicate, subregion 1 on true.
    fn gamma(
        &mut self,
        r: RegionId,
        env: &mut Env,
        cond: &Expr,
        branches: [&Vec<Stmt>; 2],
        live: &BTreeSet<String>,
    ) -> Result<(), BuildError> {
        let pred = self.predicate(r, env, cond)?;
        let both: Vec<Stmt> = branches.iter().flat_map(|b| b.iter().cloned()).collect();
        let writes = writes_of(&both);
        let mut touched = reads_of(&both);
        touched.extend(writes.iter().cloned());
        let ins: Vec<String> = touched
            .into_iter()
            .filter(|v| env.vars.contains_key(v))
            .collect();
        let mem = both.iter().any(Stmt::has_mem);

        let mut inputs = vec![pred];
        inputs.extend(ins.iter().map(|v| env.vars[v]));
        let mut arg_types = vec![PortType::VALUE; ins.len()];
        if mem {
            inputs.push(env.state.expect("memory op without a state chain"));
            arg_types.push(PortType::MemState);
        }
        let gamma = self.node(r, NodeKind::Gamma, inputs, Vec::new());
        let mut finals = Vec::new();
        for body in branches {
            let sub = self.g.add_region(gamma, arg_types.clone());
            let mut benv = Env::default();
            for (i, v) in ins.iter().enumerate() {
                benv.vars.insert(v.clone(), Origin::arg(sub, i));
            }
            if mem {
                benv.state = Some(Origin::arg(sub, ins.len()));
            }
            self.stmts(sub, &mut benv, body, live)?;
            finals.push((sub, benv));
        }
        let outs: Vec<String> = writes
            .into_iter()
            .filter(|v| live.contains(v))
            .filter(|v| {
                env.vars.contains_key(v) || finals.iter().all(|(_, e)| e.vars.contains_key(v))
            })
            .collect();
        for (sub, benv) in &finals {
            let mut res: Vec<Origin> = outs.iter().map(|v| benv.vars[v]).collect();
            if mem {
                res.push(benv.state.unwrap());
            }
            self.g.region_mut(*sub).results = res;
        }
        let mut out_types = vec![PortType::VALUE; outs.len()];
        if mem {
            out_types.push(PortType::MemState);
        }
        self.g.node_mut(gamma).outputs = out_types;
        for (i, v) in outs.iter().enumerate() {
            env.vars.insert(v.clone(), Origin::out(gamma, i));
        }
        if mem {
            env.state = Some(Origin::out(gamma, outs.len()));
        }
        Ok(())
    }

    fn theta(
        &mut self,
        r: RegionId,
        env: &mut Env,
        body: &[Stmt],
        cond: &Expr,
        live: &BTreeSet<String>,
        span: Span,
    ) -> Result<(), BuildError> {
        let mut reads = reads_of(body);
        let mut cond_reads = Vec::new();
        cond.collect_reads(&mut cond_reads);
        reads.extend(cond_reads.iter().cloned());
        let writes = writes_of(body);
        let mem = body.iter().any(Stmt::has_mem) || cond.has_mem();

        // Carried: defined before and used inside (or updated and needed
        // after). Fresh: first defined inside and needed after.
        let mut vars: BTreeSet<String> = BTreeSet::new();
        for v in reads.iter().chain(&writes) {
            let defined = env.vars.contains_key(v);
            let needed_after = writes.contains(v) && live.contains(v);
            if (defined && reads.contains(v)) || needed_after {
                vars.insert(v.clone());
            }
        }
        let vars: Vec<String> = vars.into_iter().collect();
        if vars.is_empty() && !mem {
            return Err(BuildError::EmptyLoop { span });
        }
        let mut inputs = Vec::new();
        for v in &vars {
            let o = match env.vars.get(v) {
                Some(&o) => o,
                None => self.constant(r, 0),
            };
            inputs.push(o);
        }
        if mem {
            inputs.push(env.state.expect("memory op without a state chain"));
        }
        let types: Vec<PortType> = inputs.iter().map(|&o| self.g.origin_type(o)).collect();
        let theta = self.node(r, NodeKind::Theta, inputs, types.clone());
        let sub = self.g.add_region(theta, types);

        let mut benv = Env::default();
        for (i, v) in vars.iter().enumerate() {
            if env.vars.contains_key(v) {
                benv.vars.insert(v.clone(), Origin::arg(sub, i));
            }
        }
        if mem {
            benv.state = Some(Origin::arg(sub, vars.len()));
        }
        let mut body_live: BTreeSet<String> = cond_reads.into_iter().collect();
        body_live.extend(vars.iter().cloned());
        self.stmts(sub, &mut benv, body, &body_live)?;
        let pred = self.predicate(sub, &mut benv, cond)?;

        let mut results = vec![pred];
        let mut defined_after = Vec::new();
        for (i, v) in vars.iter().enumerate() {
            match benv.vars.get(v) {
                Some(&o) => {
                    results.push(o);
                    defined_after.push((v.clone(), i));
                }
                None => results.push(Origin::arg(sub, i)),
            }
        }
        if mem {
            results.push(benv.state.unwrap());
        }
        self.g.region_mut(sub).results = results;
        for (v, i) in defined_after {
            env.vars.insert(v, Origin::out(theta, i));
        }
        if mem {
            env.state = Some(Origin::out(theta, vars.len()));
        }
        Ok(())
    }

    fn expr(&mut self, r: RegionId, env: &mut Env, e: &Expr) -> Result<Origin, BuildError> {
        Ok(match e {
            Expr::Lit { value, .. } => self.constant(r, *value),
            Expr::Var { name, span } => {
                *env.vars
                    .get(name)
                    .ok_or_else(|| BuildError::Uninitialized {
                        name: name.clone(),
                        span: *span,
                    })?
            }
            Expr::Load {
                array,
                index,
                mem,
                span,
            } => {
                let addr = self.expr(r, env, index)?;
                let array = self.array(array, *span)?;
                let state = env.state.expect("load without a state chain");
                let n = self.node(
                    r,
                    NodeKind::Load {
                        mem: *mem,
                        array,
                        stateful: true,
                        ported: false,
                    },
                    vec![addr, state],
                    vec![PortType::VALUE, PortType::MemState],
                );
                env.state = Some(Origin::out(n, 1));
                Origin::out(n, 0)
            }
            Expr::Bin { op, lhs, rhs, .. } => {
                let a = self.expr(r, env, lhs)?;
                let b = self.expr(r, env, rhs)?;
                Origin::out(
                    self.node(
                        r,
                        NodeKind::Binary { bin: *op },
                        vec![a, b],
                        vec![PortType::VALUE],
                    ),
                    0,
                )
            }
            Expr::Cmp { op, lhs, rhs, .. } => {
                let a = self.expr(r, env, lhs)?;
                let b = self.expr(r, env, rhs)?;
                Origin::out(
                    self.node(
                        r,
                        NodeKind::Compare {
                            cmp: *op,
                            predicate: false,
                        },
                        vec![a, b],
                        vec![PortType::VALUE],
                    ),
                    0,
                )
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;
    use crate::ir::{validate_rvsdg, User};

    fn build(src: &str) -> RvsdgGraph {
        let g = build_rvsdg(&parse(src).unwrap()).unwrap();
        assert_eq!(validate_rvsdg(&g), vec![]);
        g
    }

    #[test]
    fn store_then_load_share_one_state_edge() {
        let g = build("kernel k(s:i32[2]){ s[0] = 1; x = s[0]; return x; }");
        let store = g
            .nodes
            .values()
            .find(|n| matches!(n.kind, NodeKind::Store { .. }))
            .unwrap();
        let users = g.users(Origin::out(store.id, 0));
        assert_eq!(users.len(), 1);
        let User::Input { node, index } = users[0] else {
            panic!("state goes to a result")
        };
        assert!(matches!(g.node(node).kind, NodeKind::Load { .. }));
        assert_eq!(index, 1);
    }

    #[test]
    fn max_of_two_is_a_gamma_with_sgt() {
        let g =
            build("kernel max(a:i32, b:i32){ if (a > b) { m = a; } else { m = b; } return m; }");
        let gamma = g
            .nodes
            .values()
            .find(|n| n.kind == NodeKind::Gamma)
            .unwrap();
        assert_eq!(gamma.subregions.len(), 2);
        assert_eq!(gamma.outputs, vec![PortType::VALUE]);
        let Origin::Output { node: pred, .. } = gamma.inputs[0] else {
            panic!()
        };
        assert_eq!(
            g.node(pred).kind,
            NodeKind::Compare {
                cmp: CmpOp::Gt,
                predicate: true
            }
        );
        // Both arms are pure passthroughs of arguments.
        for &r in &gamma.subregions {
            assert!(g.region_nodes(r).is_empty());
        }
    }

    #[test]
    fn uninitialized_read_after_one_armed_if() {
        let ast = parse(
            "kernel k(a:i32){ if (a > 0) { y = 1; } z = 0; if (a > 1) { z = y; } return z; }",
        )
        .unwrap();
        assert!(matches!(
            build_rvsdg(&ast),
            Err(BuildError::Uninitialized { .. })
        ));
    }

    #[test]
    fn loop_carries_only_what_it_needs() {
        let g = build(
            "kernel k(n:i32, a:i32[8]){ i = 0; s = 0; do { t = a[i]; s = s + t; i = i + 1; } while (i < n); return s; }",
        );
        let theta = g
            .nodes
            .values()
            .find(|n| n.kind == NodeKind::Theta)
            .unwrap();
        // i, n, s and the state; t stays local.
        assert_eq!(theta.inputs.len(), 4);
        assert_eq!(g.region(theta.subregions[0]).results.len(), 5);
    }
}
