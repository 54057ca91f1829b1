//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! straight to stderr so the summary shows up even under output capture.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use elastic_hls::bench::run_bench;
use elastic_hls::corpus::{bundled_dir, load_dir, CorpusEntry};
use elastic_hls::disambig::DisambigOptions;
use elastic_hls::frontend::parse;
use elastic_hls::ir::{
    validate_netlist, validate_rvsdg, ElasticNetlist, GateRole, MemOpId, NetNodeKind, NodeId,
    PortType,
};
use elastic_hls::lower::GammaForm;
use elastic_hls::pipeline::{compile, compile_with, PipelineConfig, Stage};
use elastic_hls::sim::{simulate, KernelInputs, SimConfig, Simulator};
use elastic_hls::verify::check_kernel;
use elastic_hls::verify::fuzz::{run_campaign, ShapeLimits};

const FUZZ_SEED: u64 = 1;

fn report(n: u32, title: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n} ({title}): {verdict}  {detail}"
    );
    assert!(ok, "criterion {n} ({title}) failed: {detail}");
}

fn corpus() -> Vec<CorpusEntry> {
    load_dir(&bundled_dir())
        .unwrap()
        .into_iter()
        .map(|(name, e)| e.unwrap_or_else(|err| panic!("{name}: {err}")))
        .collect()
}

fn one(name: &str, cfg: PipelineConfig) -> Vec<(String, PipelineConfig)> {
    vec![(name.to_string(), cfg)]
}

#[test]
fn criterion_1_corpus_equivalence() {
    let start = Instant::now();
    let entries = corpus();
    let mut failures = Vec::new();
    std::thread::scope(|s| {
        let handles: Vec<_> = entries
            .iter()
            .flat_map(|e| PipelineConfig::matrix().map(|(cfg_name, cfg)| (e, cfg_name, cfg)))
            .map(|(e, cfg_name, cfg)| {
                s.spawn(move || {
                    (
                        e.name.clone(),
                        cfg_name,
                        check_kernel(&e.ast, &e.inputs, &cfg, SimConfig::default()),
                    )
                })
            })
            .collect();
        for h in handles {
            let (name, cfg, v) = h.join().unwrap();
            if !v.pass {
                failures.push(format!("{name}/{cfg}: {}", v.detail.unwrap_or_default()));
            }
        }
    });
    let elapsed = start.elapsed();
    report(
        1,
        "corpus x 4 configurations",
        entries.len() == 6 && failures.is_empty() && elapsed < Duration::from_secs(60),
        &format!(
            "{} kernels, {} failures {failures:?}, {:.1}s",
            entries.len(),
            failures.len(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_fuzz_equivalence() {
    let start = Instant::now();
    let (mut checked, mut failed, mut deadlocks) = (0u64, Vec::new(), 0u64);
    run_campaign(
        FUZZ_SEED,
        1000,
        &ShapeLimits::default(),
        &one("full", PipelineConfig::full()),
        SimConfig::default(),
        |case, verdicts| {
            checked += 1;
            for v in verdicts.iter().filter(|v| !v.pass) {
                let detail = v.detail.clone().unwrap_or_default();
                if detail.contains("deadlock") {
                    deadlocks += 1;
                }
                failed.push(format!(
                    "kernel {} (seed {}): {detail}",
                    case.index, case.seed
                ));
            }
            true
        },
    );
    let elapsed = start.elapsed();
    report(
        2,
        "1000 fuzz kernels, full configuration",
        checked == 1000 && failed.is_empty() && elapsed < Duration::from_secs(600),
        &format!(
            "{checked} kernels, {} failures, {deadlocks} deadlocks, {:.1}s {:?}",
            failed.len(),
            elapsed.as_secs_f64(),
            failed.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_3_disambiguation_benefit() {
    let table = run_bench(
        load_dir(&bundled_dir()).unwrap(),
        &PipelineConfig::noq(),
        &PipelineConfig::full(),
        SimConfig::default(),
    );
    let geomean = table.geomean().unwrap_or(f64::INFINITY);
    let hist = table
        .row("histogram")
        .and_then(|r| r.ratio())
        .unwrap_or(f64::INFINITY);
    let all_ran = table.rows.iter().all(|r| r.result.is_ok());
    report(
        3,
        "full/NoQ cycle ratio",
        all_ran && geomean <= 0.75 && hist <= 0.60,
        &format!("geomean {geomean:.3} (<= 0.75), histogram {hist:.3} (<= 0.60)"),
    );
}

#[test]
fn criterion_4_gamma_forms() {
    let diamond =
        "kernel d(x:i32, y:i32) { if (x < y) { m = y - x; } else { m = x - y; } return m * 2; }";
    let guarded = "kernel g(x:i32, y:i32, a:i32[4]) { if (x < y) { a[1] = y; m = 1; } else { m = 2; } return m; }";
    let census = |src: &str| {
        let c = compile(&parse(src).unwrap(), &PipelineConfig::full()).unwrap();
        let forms: Vec<GammaForm> = c.report.gammas.iter().map(|g| g.form).collect();
        (forms, c.netlist().census())
    };
    let count = |m: &BTreeMap<String, usize>, k: &str| m.get(k).copied().unwrap_or(0);

    let (d_forms, d) = census(diamond);
    let (g_forms, g) = census(guarded);
    let ok = d_forms == [GammaForm::Speculative]
        && count(&d, "DMUX") >= 1
        && count(&d, "NDMUX") == 0
        && count(&d, "BRANCH") == 0
        && g_forms == [GammaForm::Guarded]
        && count(&g, "NDMUX") >= 1
        && count(&g, "BRANCH") >= 1
        && count(&g, "DMUX") == 0;
    report(
        4,
        "speculative vs guarded gamma",
        ok,
        &format!(
            "diamond DMUX={} NDMUX={}; with store BRANCH={} NDMUX={} DMUX={}",
            count(&d, "DMUX"),
            count(&d, "NDMUX"),
            count(&g, "BRANCH"),
            count(&g, "NDMUX"),
            count(&g, "DMUX")
        ),
    );
}

#[test]
fn criterion_5_initiation_interval() {
    let ast = parse("kernel acc(a:i32[32]) { s = 0; i = 0; do { s = s + i; a[i] = s; i = i + 1; } while (i < 32); }")
        .unwrap();
    let inputs = KernelInputs {
        args: vec![],
        arrays: vec![vec![0; 32]],
    };
    let steady_deltas = |remove: bool| {
        let mut cfg = PipelineConfig::full();
        cfg.buffers.as_mut().unwrap().remove_traced_back_edges = remove;
        let c = compile(&ast, &cfg).unwrap();
        let r = simulate(c.netlist(), &inputs, SimConfig::default()).unwrap();
        let writes = r.trace.write_cycles(MemOpId(0));
        assert_eq!(writes.len(), 32);
        // Skip the fill of the first few iterations.
        writes[4..]
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect::<BTreeSet<u64>>()
    };
    let removed = steady_deltas(true);
    let kept = steady_deltas(false);
    report(
        5,
        "store initiation interval",
        removed == BTreeSet::from([1]) && kept.iter().all(|&d| d >= 2),
        &format!("write deltas with removal {removed:?}, without {kept:?}"),
    );
}

/// Whether a token entering `kind` on input `port` (of type `ty`) can leave
/// on an output of type `out` within the same cycle. Registered elements are
/// the opaque buffers, the memory ports (grants and responses latch), the
/// state outputs of loads and stores, the ADDR-Q dequeue, and the enqueue of
/// a store that follows its load in program order.
fn same_cycle(kind: &NetNodeKind, port: usize, ty: PortType, out: PortType) -> bool {
    match kind {
        NetNodeKind::Buffer { opaque, .. } => !opaque,
        NetNodeKind::PredBuf
        | NetNodeKind::LoopBuf
        | NetNodeKind::MemReq { .. }
        | NetNodeKind::MemResp { .. }
        | NetNodeKind::Sink
        | NetNodeKind::Exit { .. } => false,
        NetNodeKind::Load { .. } | NetNodeKind::Store { .. } => out != PortType::MemState,
        NetNodeKind::AddrQueue { store, load, .. } => {
            ty != PortType::MemState && !(port == 0 && store > load)
        }
        _ => true,
    }
}

/// Looks for a combinational cycle without the library's validator, over a
/// channel graph built from [`same_cycle`].
fn transparent_cycle(net: &ElasticNetlist) -> bool {
    let nodes: BTreeMap<NodeId, &elastic_hls::ir::NetNode> =
        net.nodes.iter().map(|n| (n.id, n)).collect();
    let mut leaving: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (i, c) in net.channels.iter().enumerate() {
        leaving.entry(c.src.node).or_default().push(i);
    }
    let succ: Vec<Vec<usize>> = net
        .channels
        .iter()
        .map(|c| {
            let node = nodes[&c.dst.node];
            leaving
                .get(&c.dst.node)
                .into_iter()
                .flatten()
                .copied()
                .filter(|&o| same_cycle(&node.kind, c.dst.port, c.ty, net.channels[o].ty))
                .collect()
        })
        .collect();
    // 1 on the DFS stack, 2 finished
    let mut state = vec![0u8; succ.len()];
    for start in 0..succ.len() {
        if state[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        state[start] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&w) = succ[v].get(*next) {
                *next += 1;
                match state[w] {
                    1 => return true,
                    0 => {
                        state[w] = 1;
                        stack.push((w, 0));
                    }
                    _ => {}
                }
            } else {
                state[v] = 2;
                stack.pop();
            }
        }
    }
    false
}

/// Every output and input port carries exactly one channel.
fn point_to_point(net: &ElasticNetlist) -> bool {
    let mut outs: BTreeMap<(NodeId, usize), usize> = BTreeMap::new();
    let mut ins: BTreeMap<(NodeId, usize), usize> = BTreeMap::new();
    for c in &net.channels {
        *outs.entry((c.src.node, c.src.port)).or_default() += 1;
        *ins.entry((c.dst.node, c.dst.port)).or_default() += 1;
    }
    net.nodes.iter().all(|n| {
        (0..n.outputs.len()).all(|p| outs.get(&(n.id, p)) == Some(&1))
            && (0..n.n_inputs).all(|p| ins.get(&(n.id, p)) == Some(&1))
    })
}

#[test]
fn criterion_6_structural_invariants() {
    let mut kernels: Vec<(String, elastic_hls::frontend::KernelAst)> =
        corpus().into_iter().map(|e| (e.name, e.ast)).collect();
    run_campaign(
        FUZZ_SEED,
        200,
        &ShapeLimits::default(),
        &[],
        SimConfig::default(),
        |case, _| {
            kernels.push((format!("fuzz{}", case.index), case.ast.clone()));
            true
        },
    );
    let mut problems = Vec::new();
    let mut stage_checks = 0u64;
    for (name, ast) in &kernels {
        for (cfg_name, cfg) in PipelineConfig::matrix() {
            let mut seen = Vec::new();
            let result = compile_with(ast, &cfg, Stage::Flatten, &mut |stage, g, net| {
                seen.push(stage);
                let mut bad: Vec<String> =
                    validate_rvsdg(g).iter().map(|v| v.to_string()).collect();
                if let Some(net) = net {
                    bad.extend(validate_netlist(net).iter().map(|v| v.to_string()));
                    if transparent_cycle(net) {
                        bad.push("cycle without an opaque element".into());
                    }
                    if !point_to_point(net) {
                        bad.push("port without exactly one channel".into());
                    }
                }
                if !bad.is_empty() {
                    problems.push(format!("{name}/{cfg_name} after {stage}: {bad:?}"));
                }
            });
            if let Err(e) = result {
                problems.push(format!("{name}/{cfg_name}: {e}"));
            }
            if seen != Stage::ALL {
                problems.push(format!("{name}/{cfg_name}: stages seen {seen:?}"));
            }
            stage_checks += seen.len() as u64;
        }
    }
    report(
        6,
        "structural invariants after every stage",
        kernels.len() == 206 && problems.is_empty(),
        &format!(
            "{} kernels, {stage_checks} stage checks, {} problems {:?}",
            kernels.len(),
            problems.len(),
            problems.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_7_mutation_sensitivity() {
    let entries = corpus();
    let mut caught = Vec::new();
    for role in [GateRole::Sg1, GateRole::Sg2, GateRole::Sg3, GateRole::Sg4] {
        let mut cfg = PipelineConfig::full();
        cfg.disambig = Some(DisambigOptions {
            drop_gate: Some(role),
            ..DisambigOptions::default()
        });
        // A rejected compile says nothing about whether the gate matters.
        let counts =
            |detail: &Option<String>| !detail.as_deref().unwrap_or("").starts_with("compile:");
        let mut witness = entries.iter().find_map(|e| {
            let v = check_kernel(&e.ast, &e.inputs, &cfg, SimConfig::default());
            (!v.pass && counts(&v.detail)).then(|| e.name.clone())
        });
        if witness.is_none() {
            run_campaign(
                FUZZ_SEED,
                1000,
                &ShapeLimits::default(),
                &one("mutant", cfg),
                SimConfig::default(),
                |case, vs| {
                    if vs.iter().any(|v| !v.pass && counts(&v.detail)) {
                        witness = Some(format!("fuzz{}", case.index));
                        return false;
                    }
                    true
                },
            );
        }
        caught.push((role, witness));
    }
    let summary: Vec<String> = caught
        .iter()
        .map(|(r, w)| format!("{r}: {}", w.as_deref().unwrap_or("never fails")))
        .collect();
    report(
        7,
        "dropping any state gate is caught",
        caught.iter().all(|(_, w)| w.is_some()),
        &summary.join(", "),
    );
}

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

/// Drives a lone ADDR-Q from scripted sources and records what fired when.
fn run_addr_queue(s: Script, cycles: u64) -> Vec<(u64, Ev)> {
    let mut net = ElasticNetlist::new("addrq");
    let enq = net.add_node(
        NetNodeKind::Source { tokens: s.enq },
        0,
        vec![PortType::VALUE],
    );
    let deq = net.add_node(
        NetNodeKind::Source { tokens: s.deq },
        0,
        vec![PortType::MemState],
    );
    let check = net.add_node(
        NetNodeKind::Source { tokens: s.check },
        0,
        vec![PortType::VALUE],
    );
    let q = net.add_node(
        NetNodeKind::AddrQueue {
            capacity: s.capacity,
            store: MemOpId(s.store),
            load: MemOpId(s.load),
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
        if let Some(a) = snap.fired(enq, 0) {
            events.push((snap.cycle, Ev::Enq(a)));
        }
        if snap.fired(deq, 0).is_some() {
            events.push((snap.cycle, Ev::Deq));
        }
        if let Some(a) = snap.fired(q, 0) {
            events.push((snap.cycle, Ev::Pass(a)));
        }
        if status.is_err() {
            break;
        }
    }
    events
}

/// Name, script, cycles to run, and the expected events.
type Scenario = (&'static str, Script, u64, Vec<(u64, Ev)>);

#[test]
fn criterion_8_addr_queue_scenarios() {
    use Ev::*;
    let script =
        |store, load, enq: &[(u64, u32)], deq: &[(u64, u32)], check: &[(u64, u32)]| Script {
            store,
            load,
            capacity: 4,
            enq: enq.to_vec(),
            deq: deq.to_vec(),
            check: check.to_vec(),
        };
    let table: Vec<Scenario> = vec![
        (
            "empty queue passes at once",
            script(1, 0, &[], &[], &[(0, 5), (0, 6)]),
            4,
            vec![(0, Pass(5)), (1, Pass(6))],
        ),
        (
            "conflict blocks until the cycle after the dequeue",
            script(1, 0, &[(0, 5)], &[(3, 0)], &[(1, 5)]),
            6,
            vec![(0, Enq(5)), (3, Deq), (4, Pass(5))],
        ),
        (
            "other addresses pass",
            script(1, 0, &[(0, 5)], &[], &[(1, 6), (1, 4)]),
            4,
            vec![(0, Enq(5)), (1, Pass(6)), (2, Pass(4))],
        ),
        (
            "same-cycle enqueue of an earlier store conflicts",
            script(0, 1, &[(0, 5)], &[(2, 0)], &[(0, 5)]),
            5,
            vec![(0, Enq(5)), (2, Deq), (3, Pass(5))],
        ),
        (
            "same-cycle enqueue of a later store does not",
            script(1, 0, &[(0, 5)], &[(2, 0)], &[(0, 5)]),
            4,
            vec![(0, Enq(5)), (0, Pass(5)), (2, Deq)],
        ),
        (
            "waits for the youngest match",
            script(1, 0, &[(0, 5), (1, 5)], &[(3, 0), (5, 0)], &[(2, 5)]),
            8,
            vec![(0, Enq(5)), (1, Enq(5)), (3, Deq), (5, Deq), (6, Pass(5))],
        ),
        (
            "full queue back-pressures",
            Script {
                capacity: 2,
                ..script(1, 0, &[(0, 1), (0, 2), (0, 3)], &[(4, 0)], &[])
            },
            7,
            vec![(0, Enq(1)), (1, Enq(2)), (4, Deq), (5, Enq(3))],
        ),
    ];
    let total = table.len();
    let mut mismatches = Vec::new();
    for (name, s, cycles, expected) in table {
        let got = run_addr_queue(s, cycles);
        if got != expected {
            mismatches.push(format!("{name}: expected {expected:?}, got {got:?}"));
        }
    }
    report(
        8,
        "ADDR-Q scenario tables",
        mismatches.is_empty(),
        &format!(
            "{} of {total} scenarios match {mismatches:?}",
            total - mismatches.len()
        ),
    );
}
