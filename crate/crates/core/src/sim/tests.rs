use super::*;
use crate::frontend::parse;
use crate::ir::{ElasticNetlist, NetNodeKind};
use crate::ir::{NodeId, PortType};
use crate::pipeline::{compile, PipelineConfig};

fn run_source(src: &str, inputs: KernelInputs, cfg: &PipelineConfig) -> SimResult {
    let c = compile(&parse(src).unwrap(), cfg).unwrap();
    simulate(c.netlist(), &inputs, SimConfig::default()).unwrap()
}

#[test]
fn constant_kernel() {
    let r = run_source(
        "kernel k() { return 7; }",
        KernelInputs::default(),
        &PipelineConfig::full(),
    );
    assert_eq!(r.ret, Some(7));
    assert!(r.cycles >= 1);
}

const COUNTING_SUM: &str =
    "kernel sum(n:i32) { s = 0; i = 1; do { s = s + i; i = i + 1; } while (i <= n); return s; }";

/// Hand-stepped with the single-step mode. The PRED-BUF's initial 0 selects
/// i=1, s=0 in cycle 0, and iterations two and three follow in cycles 1 and
/// 2, where the exit branch emits s=6. Without buffers it reaches the result
/// in that cycle; with buffers it crosses the outer-loop output BUF first.
#[test]
fn counting_sum_cycle_count() {
    let inputs = KernelInputs {
        args: vec![3],
        arrays: vec![],
    };
    for (name, cfg) in PipelineConfig::matrix() {
        let r = run_source(COUNTING_SUM, inputs.clone(), &cfg);
        assert_eq!(r.ret, Some(6), "{name}");
        let expected = if cfg.buffers.is_some() { 4 } else { 3 };
        assert_eq!(r.cycles, expected, "{name}");
    }
}

#[test]
fn pred_buf_starts_with_the_termination_token() {
    let c = compile(&parse(COUNTING_SUM).unwrap(), &PipelineConfig::full()).unwrap();
    let net = c.netlist();
    let pb = net
        .nodes
        .iter()
        .find(|n| n.kind == NetNodeKind::PredBuf)
        .unwrap()
        .id;
    let inputs = KernelInputs {
        args: vec![3],
        arrays: vec![],
    };
    let mut sim = Simulator::new(net, &inputs, SimConfig::default()).unwrap();
    assert_eq!(sim.snapshot().occupancy_of(pb), 1);
    sim.step().unwrap();
    assert_eq!(sim.snapshot().fired(pb, 0), Some(0));
}

#[test]
fn store_retires_in_its_grant_cycle() {
    let src = "kernel k(a:i32[4]) { a[1] = 5; return a[1]; }";
    let c = compile(&parse(src).unwrap(), &PipelineConfig::noq()).unwrap();
    let net = c.netlist();
    let req = net
        .nodes
        .iter()
        .find(|n| matches!(n.kind, NetNodeKind::MemReq { .. }))
        .unwrap()
        .id;
    let store = net
        .nodes
        .iter()
        .find(|n| matches!(n.kind, NetNodeKind::Store { .. }))
        .unwrap()
        .id;
    let inputs = KernelInputs {
        args: vec![],
        arrays: vec![vec![0; 4]],
    };
    let mut sim = Simulator::new(net, &inputs, SimConfig::default()).unwrap();
    let mut grant = None;
    let mut state_out = None;
    while sim.step().unwrap() == Status::Running {
        let snap = sim.snapshot();
        let into_req = snap
            .channels
            .iter()
            .any(|c| c.dst.node == req && c.src.node == store && c.valid && c.ready);
        if into_req && grant.is_none() {
            grant = Some(snap.cycle);
        }
        if snap.fired(store, 0).is_some() && state_out.is_none() {
            state_out = Some(snap.cycle);
        }
    }
    let r = sim.into_result();
    let grant = grant.unwrap();
    assert_eq!(r.trace.write_cycles(crate::ir::MemOpId(0)), vec![grant]);
    assert_eq!(state_out, Some(grant + 1));
    assert_eq!(r.ret, Some(5));
}

#[test]
fn runs_are_deterministic() {
    let src = "kernel h(f:i32[16], h:i32[8]) { i = 0; do { x = f[i] & 7; h[x] = h[x] + i; i = i + 1; } while (i < 16); }";
    let inputs = KernelInputs {
        args: vec![],
        arrays: vec![(0..16).map(|i| i * 5 % 7).collect(), vec![0; 8]],
    };
    let a = run_source(src, inputs.clone(), &PipelineConfig::full());
    let b = run_source(src, inputs, &PipelineConfig::full());
    assert_eq!(a, b);
}

#[test]
fn cycle_budget() {
    let src = "kernel k(n:i32) { i = 0; do { i = i + 1; } while (i < n); return i; }";
    let c = compile(&parse(src).unwrap(), &PipelineConfig::full()).unwrap();
    let inputs = KernelInputs {
        args: vec![1000],
        arrays: vec![],
    };
    let err = simulate(
        c.netlist(),
        &inputs,
        SimConfig {
            max_cycles: 10,
            ..SimConfig::default()
        },
    )
    .unwrap_err();
    assert_eq!(err, SimError::MaxCycles { limit: 10 });
}

#[test]
fn traps() {
    let full = PipelineConfig::full();
    let c = compile(
        &parse("kernel k(a:i32[4], i:i32) { return a[i]; }").unwrap(),
        &full,
    )
    .unwrap();
    let inputs = KernelInputs {
        args: vec![9],
        arrays: vec![vec![0; 4]],
    };
    let err = simulate(c.netlist(), &inputs, SimConfig::default()).unwrap_err();
    assert!(
        matches!(
            err.trap(),
            Some(Trap::OutOfBounds {
                addr: 9,
                len: 4,
                ..
            })
        ),
        "{err}"
    );

    let c = compile(&parse("kernel k(x:i32) { return 10 / x; }").unwrap(), &full).unwrap();
    let inputs = KernelInputs {
        args: vec![0],
        arrays: vec![],
    };
    let err = simulate(c.netlist(), &inputs, SimConfig::default()).unwrap_err();
    assert_eq!(err.trap(), Some(&Trap::DivisionByZero));
}

#[test]
fn raw_through_state_edge_without_queues() {
    let src = "kernel k(a:i32[4]) { a[2] = 41; a[2] = a[2] + 1; return a[2]; }";
    let inputs = KernelInputs {
        args: vec![],
        arrays: vec![vec![0; 4]],
    };
    let r = run_source(src, inputs, &PipelineConfig::noq());
    assert_eq!(r.ret, Some(42));
    assert_eq!(r.memories[0], vec![0, 0, 42, 0]);
}

/// Buffers never hold more tokens than they have slots.
#[test]
fn occupancy_stays_within_capacity() {
    let src = "kernel k(a:i32[8], b:i32[8]) { i = 0; do { b[i] = a[i] * a[i] + b[i]; i = i + 1; } while (i < 8); }";
    let c = compile(&parse(src).unwrap(), &PipelineConfig::full()).unwrap();
    let net = c.netlist();
    let inputs = KernelInputs {
        args: vec![],
        arrays: vec![(0..8).collect(), vec![1; 8]],
    };
    let mut sim = Simulator::new(net, &inputs, SimConfig::default()).unwrap();
    loop {
        let status = sim.step().unwrap();
        let snap = sim.snapshot();
        for n in &net.nodes {
            let cap = match n.kind {
                NetNodeKind::Buffer { capacity, .. } => capacity as usize,
                NetNodeKind::AddrQueue { capacity, .. } => capacity as usize,
                NetNodeKind::PredBuf | NetNodeKind::LoopBuf => 1,
                _ => continue,
            };
            assert!(snap.occupancy_of(n.id) <= cap, "{} over capacity", n.id);
        }
        if status == Status::Done {
            break;
        }
    }
}

/// ADDR-Q scenarios: scripted sources drive enqueue, dequeue and check; the
/// check output goes to a sink, so it is consumed as soon as it is valid.
mod addr_queue {
    use super::*;

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    enum Ev {
        Enq(i32),
        Deq,
        Pass(i32),
    }

    struct Script {
        store: u32,
        load: u32,
        capacity: u32,
        enq: Vec<(u64, u32)>,
        deq: Vec<(u64, u32)>,
        check: Vec<(u64, u32)>,
    }

    fn run(s: Script, cycles: u64) -> Vec<(u64, Ev)> {
        let mut net = ElasticNetlist::new("addrq");
        let src = |net: &mut ElasticNetlist, tokens: Vec<(u64, u32)>, ty| {
            net.add_node(NetNodeKind::Source { tokens }, 0, vec![ty])
        };
        let enq = src(&mut net, s.enq, PortType::VALUE);
        let deq = src(&mut net, s.deq, PortType::MemState);
        let check = src(&mut net, s.check, PortType::VALUE);
        let q = net.add_node(
            NetNodeKind::AddrQueue {
                capacity: s.capacity,
                store: crate::ir::MemOpId(s.store),
                load: crate::ir::MemOpId(s.load),
            },
            3,
            vec![PortType::VALUE],
        );
        let sink = net.add_node(NetNodeKind::Sink, 1, vec![]);
        net.connect((enq, 0), (q, 0));
        net.connect((deq, 0), (q, 1));
        net.connect((check, 0), (q, 2));
        net.connect((q, 0), (sink, 0));

        let mut sim = Simulator::new(&net, &KernelInputs::default(), SimConfig::default()).unwrap();
        let mut events = Vec::new();
        for _ in 0..cycles {
            let status = sim.step();
            let snap = sim.snapshot();
            let fired = |n: NodeId| snap.fired(n, 0);
            if let Some(a) = fired(enq) {
                events.push((snap.cycle, Ev::Enq(a)));
            }
            if fired(deq).is_some() {
                events.push((snap.cycle, Ev::Deq));
            }
            if let Some(a) = fired(q) {
                events.push((snap.cycle, Ev::Pass(a)));
            }
            if status.is_err() {
                break;
            }
        }
        events
    }

    #[test]
    fn empty_queue_passes_immediately() {
        let ev = run(
            Script {
                store: 1,
                load: 0,
                capacity: 4,
                enq: vec![],
                deq: vec![],
                check: vec![(0, 5), (0, 6)],
            },
            4,
        );
        assert_eq!(ev, vec![(0, Ev::Pass(5)), (1, Ev::Pass(6))]);
    }

    /// Enqueue at 0; the conflicting check waits from cycle 1, sees the
    /// dequeue of cycle 3 only from cycle 4 on.
    #[test]
    fn conflict_blocks_until_dequeue() {
        let ev = run(
            Script {
                store: 1,
                load: 0,
                capacity: 4,
                enq: vec![(0, 5)],
                deq: vec![(3, 0)],
                check: vec![(1, 5)],
            },
            6,
        );
        assert_eq!(ev, vec![(0, Ev::Enq(5)), (3, Ev::Deq), (4, Ev::Pass(5))]);
    }

    #[test]
    fn other_addresses_pass_a_nonempty_queue() {
        let ev = run(
            Script {
                store: 1,
                load: 0,
                capacity: 4,
                enq: vec![(0, 5)],
                deq: vec![],
                check: vec![(1, 6), (1, 4)],
            },
            4,
        );
        assert_eq!(
            ev,
            vec![(0, Ev::Enq(5)), (1, Ev::Pass(6)), (2, Ev::Pass(4))]
        );
    }

    /// Store before load in program order: an enqueue in the same cycle is
    /// compared combinationally and blocks the check.
    #[test]
    fn same_cycle_enqueue_conflicts() {
        let ev = run(
            Script {
                store: 0,
                load: 1,
                capacity: 4,
                enq: vec![(0, 5)],
                deq: vec![(2, 0)],
                check: vec![(0, 5)],
            },
            5,
        );
        assert_eq!(ev, vec![(0, Ev::Enq(5)), (2, Ev::Deq), (3, Ev::Pass(5))]);
    }

    /// Store after load in program order: the same-cycle enqueue belongs to
    /// an older iteration's store and is not seen until it is stored.
    #[test]
    fn same_cycle_enqueue_from_a_later_store_is_not_compared() {
        let ev = run(
            Script {
                store: 1,
                load: 0,
                capacity: 4,
                enq: vec![(0, 5)],
                deq: vec![(2, 0)],
                check: vec![(0, 5)],
            },
            4,
        );
        assert_eq!(ev, vec![(0, Ev::Enq(5)), (0, Ev::Pass(5)), (2, Ev::Deq)]);
    }

    /// Two matching entries: the check waits for the younger one.
    #[test]
    fn waits_for_the_youngest_conflict() {
        let ev = run(
            Script {
                store: 1,
                load: 0,
                capacity: 4,
                enq: vec![(0, 5), (1, 5)],
                deq: vec![(3, 0), (5, 0)],
                check: vec![(2, 5)],
            },
            8,
        );
        assert_eq!(
            ev,
            vec![
                (0, Ev::Enq(5)),
                (1, Ev::Enq(5)),
                (3, Ev::Deq),
                (5, Ev::Deq),
                (6, Ev::Pass(5)),
            ]
        );
    }

    /// A full queue refuses enqueues until a dequeue has committed.
    #[test]
    fn full_queue_back_pressures_enqueue() {
        let ev = run(
            Script {
                store: 1,
                load: 0,
                capacity: 2,
                enq: vec![(0, 1), (0, 2), (0, 3)],
                deq: vec![(4, 0)],
                check: vec![],
            },
            7,
        );
        assert_eq!(
            ev,
            vec![
                (0, Ev::Enq(1)),
                (1, Ev::Enq(2)),
                (4, Ev::Deq),
                (5, Ev::Enq(3))
            ]
        );
    }
}
