//! Random well-formed kernels.
//!
//! Kernels are generated as source text and parsed, so every case can be
//! written out verbatim as a repro file. Array lengths are powers of two and
//! every address is masked to the array length, divisors are forced odd, and
//! loops are counted, so generated kernels never trap and always terminate.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_kernel;
use crate::frontend::{parse, KernelAst};
use crate::pipeline::PipelineConfig;
use crate::sim::{KernelInputs, SimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeLimits {
    pub max_arrays: u32,
    /// Maximum loop nesting; 0 gives straight-line kernels.
    pub max_depth: u32,
    pub max_trip: u32,
    /// Statements per block.
    pub max_stmts: u32,
    /// Probability that an address expression reuses an earlier one.
    pub collision_bias: f64,
}

impl Default for ShapeLimits {
    fn default() -> Self {
        ShapeLimits {
            max_arrays: 3,
            max_depth: 2,
            max_trip: 8,
            max_stmts: 4,
            collision_bias: 0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FuzzCase {
    pub index: u64,
    pub seed: u64,
    pub source: String,
    pub ast: KernelAst,
    pub inputs: KernelInputs,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FuzzVerdict {
    pub index: u64,
    pub seed: u64,
    pub config: String,
    pub pass: bool,
    pub cycles: Option<u64>,
    pub detail: Option<String>,
}

/// Seed of the `index`-th kernel of a campaign.
pub fn case_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.gen()
}

pub fn generate_case(seed: u64, index: u64, limits: &ShapeLimits) -> FuzzCase {
    let kseed = case_seed(seed, index);
    let mut g = Gen::new(kseed, *limits);
    let source = g.kernel(&format!("fuzz{index}"));
    let ast = parse(&source)
        .unwrap_or_else(|e| panic!("generated kernel does not parse ({e}):\n{source}"));
    let inputs = g.inputs();
    FuzzCase {
        index,
        seed: kseed,
        source,
        ast,
        inputs,
    }
}

/// The configurations a campaign checks: no buffers, NoQ, and full.
pub fn campaign_configs() -> Vec<(String, PipelineConfig)> {
    vec![
        (
            "full-nobuf".into(),
            PipelineConfig::full().without_buffers(),
        ),
        ("noq".into(), PipelineConfig::noq()),
        ("full".into(), PipelineConfig::full()),
    ]
}

/// Generates `count` kernels and checks each one under every configuration.
/// Kernels are spread over worker threads; verdicts come back ordered by
/// kernel index, then configuration.
pub fn fuzz(
    seed: u64,
    count: u64,
    limits: &ShapeLimits,
    configs: &[(String, PipelineConfig)],
    sim: SimConfig,
) -> Vec<FuzzVerdict> {
    let mut out = Vec::new();
    run_campaign(seed, count, limits, configs, sim, |_, v| {
        out.extend_from_slice(v);
        true
    });
    out
}

type CaseResult = (FuzzCase, Vec<FuzzVerdict>);

/// Like [`fuzz`], but hands each kernel's verdicts to `on_case` in index
/// order. Returning `false` stops the campaign early.
pub fn run_campaign(
    seed: u64,
    count: u64,
    limits: &ShapeLimits,
    configs: &[(String, PipelineConfig)],
    sim: SimConfig,
    mut on_case: impl FnMut(&FuzzCase, &[FuzzVerdict]) -> bool,
) {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(16);
    let batch = (workers as u64 * 4).max(1);
    let mut start = 0;
    while start < count {
        let end = (start + batch).min(count);
        let slots: Vec<Mutex<Option<CaseResult>>> =
            (start..end).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(slot) = slots.get(i) else { break };
                    let case = generate_case(seed, start + i as u64, limits);
                    let verdicts = check_case(&case, configs, sim);
                    *slot.lock().unwrap() = Some((case, verdicts));
                });
            }
        });
        for slot in slots {
            let (case, verdicts) = slot.into_inner().unwrap().expect("every slot is filled");
            if !on_case(&case, &verdicts) {
                return;
            }
        }
        start = end;
    }
}

pub fn check_case(
    case: &FuzzCase,
    configs: &[(String, PipelineConfig)],
    sim: SimConfig,
) -> Vec<FuzzVerdict> {
    configs
        .iter()
        .map(|(name, cfg)| {
            let v = check_kernel(&case.ast, &case.inputs, cfg, sim);
            FuzzVerdict {
                index: case.index,
                seed: case.seed,
                config: name.clone(),
                pass: v.pass,
                cycles: v.cycles,
                detail: v.detail,
            }
        })
        .collect()
}

/// Writes `<name>.rk` and its `<name>.json` input sidecar into `dir`.
pub fn write_repro(dir: &Path, case: &FuzzCase) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.rk", case.ast.name));
    let text = format!(
        "// fuzz kernel {} seed {}\n{}",
        case.index, case.seed, case.source
    );
    fs::write(&path, text)?;
    let mut args = serde_json::Map::new();
    for (p, v) in case.ast.scalar_params().zip(&case.inputs.args) {
        args.insert(p.name.clone(), (*v).into());
    }
    let mut arrays = serde_json::Map::new();
    for ((p, _), v) in case.ast.array_params().zip(&case.inputs.arrays) {
        arrays.insert(p.name.clone(), v.clone().into());
    }
    let sidecar = serde_json::json!({ "args": args, "arrays": arrays });
    fs::write(
        path.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(path)
}

struct Gen {
    rng: ChaCha8Rng,
    limits: ShapeLimits,
    arrays: Vec<(String, u32)>,
    params: Vec<String>,
    locals: Vec<String>,
    /// Loop counters currently in scope, outermost first.
    counters: Vec<String>,
    /// Unmasked address expressions generated so far.
    addrs: Vec<String>,
}

const ARITH: [&str; 8] = ["+", "-", "*", "&", "|", "^", "<<", ">>"];
const CMP: [&str; 6] = ["<", ">", "<=", ">=", "==", "!="];

impl Gen {
    fn new(seed: u64, limits: ShapeLimits) -> Self {
        Gen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            limits,
            arrays: Vec::new(),
            params: Vec::new(),
            locals: Vec::new(),
            counters: Vec::new(),
            addrs: Vec::new(),
        }
    }

    fn kernel(&mut self, name: &str) -> String {
        let n_arrays = self.rng.gen_range(1..=self.limits.max_arrays.clamp(1, 3));
        for k in 0..n_arrays {
            let len = *[4u32, 8, 16].choose(&mut self.rng).unwrap();
            self.arrays
                .push((["a", "b", "c"][k as usize].to_string(), len));
        }
        for k in 0..self.rng.gen_range(0..=2) {
            self.params.push(format!("p{k}"));
        }
        let mut sig: Vec<String> = self.params.iter().map(|p| format!("{p}:i32")).collect();
        sig.extend(self.arrays.iter().map(|(a, len)| format!("{a}:i32[{len}]")));

        let mut body = String::new();
        for k in 0..self.rng.gen_range(1..=3) {
            let init = self.leaf();
            writeln!(body, "    x{k} = {init};").unwrap();
            self.locals.push(format!("x{k}"));
        }
        // Counters are assigned up front: a reused address may mention the
        // counter of a loop that has already finished.
        for d in 0..self.limits.max_depth.min(2) {
            writeln!(body, "    i{d} = 0;").unwrap();
        }
        let n = self.rng.gen_range(1..=self.limits.max_stmts.max(1));
        for _ in 0..n {
            self.stmt(&mut body, 1, 0);
        }
        if self.rng.gen_bool(0.7) {
            let r = self.expr(2);
            writeln!(body, "    return {r};").unwrap();
        }
        format!("kernel {name}({}) {{\n{body}}}\n", sig.join(", "))
    }

    fn inputs(&mut self) -> KernelInputs {
        KernelInputs {
            args: self
                .params
                .iter()
                .map(|_| self.rng.gen_range(-8..=8))
                .collect(),
            arrays: self
                .arrays
                .iter()
                .map(|&(_, len)| (0..len).map(|_| self.rng.gen_range(-16..=16)).collect())
                .collect(),
        }
    }

    fn stmt(&mut self, out: &mut String, indent: usize, ifs: u32) {
        let pad = "    ".repeat(indent);
        let depth = self.counters.len() as u32;
        let roll = self.rng.gen_range(0..100);
        if roll < 20 && depth < self.limits.max_depth.min(2) {
            let ctr = format!("i{depth}");
            let trip = self.rng.gen_range(1..=self.limits.max_trip.max(1));
            writeln!(out, "{pad}{ctr} = 0;").unwrap();
            writeln!(out, "{pad}do {{").unwrap();
            self.counters.push(ctr.clone());
            for _ in 0..self.rng.gen_range(1..=self.limits.max_stmts.clamp(1, 3)) {
                self.stmt(out, indent + 1, ifs);
            }
            self.counters.pop();
            writeln!(out, "{pad}    {ctr} = {ctr} + 1;").unwrap();
            writeln!(out, "{pad}}} while ({ctr} < {trip});").unwrap();
        } else if roll < 35 && ifs < 2 {
            let c = self.cond();
            writeln!(out, "{pad}if ({c}) {{").unwrap();
            for _ in 0..self.rng.gen_range(1..=2) {
                self.stmt(out, indent + 1, ifs + 1);
            }
            if self.rng.gen_bool(0.5) {
                writeln!(out, "{pad}}} else {{").unwrap();
                self.stmt(out, indent + 1, ifs + 1);
            }
            writeln!(out, "{pad}}}").unwrap();
        } else if roll < 70 {
            let (arr, idx) = self.address();
            let v = self.expr(2);
            writeln!(out, "{pad}{arr}[{idx}] = {v};").unwrap();
        } else {
            let x = self.locals.choose(&mut self.rng).unwrap().clone();
            let v = self.expr(2);
            writeln!(out, "{pad}{x} = {v};").unwrap();
        }
    }

    fn cond(&mut self) -> String {
        let op = *CMP.choose(&mut self.rng).unwrap();
        let lhs = if self.rng.gen_bool(0.6) {
            self.load()
        } else {
            self.expr(1)
        };
        let rhs = self.expr(1);
        format!("{lhs} {op} {rhs}")
    }

    fn expr(&mut self, depth: u32) -> String {
        let roll = self.rng.gen_range(0..100);
        if depth == 0 || roll < 30 {
            return self.leaf();
        }
        if roll < 55 {
            return self.load();
        }
        let lhs = self.expr(depth - 1);
        if roll < 62 {
            let op = if self.rng.gen_bool(0.5) { "/" } else { "%" };
            let rhs = self.expr(depth - 1);
            return format!("({lhs} {op} ({rhs} | 1))");
        }
        let op = *ARITH.choose(&mut self.rng).unwrap();
        let rhs = if op == "<<" || op == ">>" {
            self.rng.gen_range(0..4).to_string()
        } else {
            self.expr(depth - 1)
        };
        format!("({lhs} {op} {rhs})")
    }

    fn leaf(&mut self) -> String {
        let mut pool: Vec<String> = self.locals.clone();
        pool.extend(self.params.iter().cloned());
        pool.extend(self.counters.iter().cloned());
        if pool.is_empty() || self.rng.gen_bool(0.3) {
            self.rng.gen_range(0..16).to_string()
        } else {
            pool.choose(&mut self.rng).unwrap().clone()
        }
    }

    fn load(&mut self) -> String {
        let (arr, idx) = self.address();
        format!("{arr}[{idx}]")
    }

    /// An array and a masked index into it.
    fn address(&mut self) -> (String, String) {
        let (arr, len) = self.arrays.choose(&mut self.rng).unwrap().clone();
        let raw = if !self.addrs.is_empty() && self.rng.gen_bool(self.limits.collision_bias) {
            self.addrs.choose(&mut self.rng).unwrap().clone()
        } else {
            let raw = self.fresh_address();
            self.addrs.push(raw.clone());
            raw
        };
        (arr, format!("({raw}) & {}", len - 1))
    }

    fn fresh_address(&mut self) -> String {
        match self.rng.gen_range(0..10) {
            0..=3 if !self.counters.is_empty() => {
                let c = self.counters.choose(&mut self.rng).unwrap().clone();
                match self.rng.gen_range(0..3) {
                    0 => c,
                    1 => format!("{c} + {}", self.rng.gen_range(1..4)),
                    _ => format!("{c} * {}", self.rng.gen_range(1..4)),
                }
            }
            4..=5 => {
                // Loads used as addresses must not nest forever.
                let (arr, len) = self.arrays.choose(&mut self.rng).unwrap().clone();
                let inner = self.leaf();
                format!("{arr}[({inner}) & {}]", len - 1)
            }
            _ => self.leaf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let l = ShapeLimits::default();
        for i in 0..20 {
            assert_eq!(
                generate_case(7, i, &l).source,
                generate_case(7, i, &l).source
            );
        }
        assert_ne!(
            generate_case(7, 0, &l).source,
            generate_case(8, 0, &l).source
        );
    }

    #[test]
    fn zero_depth_gives_straight_line_kernels() {
        let l = ShapeLimits {
            max_depth: 0,
            ..ShapeLimits::default()
        };
        for i in 0..50 {
            let c = generate_case(3, i, &l);
            assert!(!c.ast.body.iter().any(|s| s.has_loop()), "{}", c.source);
        }
    }

    #[test]
    fn seed_one_passes() {
        let v = fuzz(
            1,
            10,
            &ShapeLimits::default(),
            &campaign_configs(),
            SimConfig::default(),
        );
        assert_eq!(v.len(), 30);
        for x in &v {
            assert!(x.pass, "kernel {} ({}): {:?}", x.index, x.config, x.detail);
        }
    }

    #[test]
    fn repro_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let case = generate_case(5, 2, &ShapeLimits::default());
        let path = write_repro(dir.path(), &case).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(parse(&text).unwrap(), case.ast);
        assert!(path.with_extension("json").exists());
    }
}
