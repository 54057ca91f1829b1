//! The pass pipeline, as named stages.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::buffers::{place_buffers, BufferPolicy, BufferReport};
use crate::disambig::{disambiguate, DisambigError, DisambigOptions, RedChain};
use crate::frontend::{
    build_rvsdg, parse, separate_state_edges, BuildError, KernelAst, ParseError,
};
use crate::ir::{
    flatten, validate_netlist, validate_rvsdg, ElasticNetlist, FlattenError, RvsdgGraph,
};
use crate::lower::{
    enforce_point_to_point, lower_gamma, lower_memory_ports, lower_theta, GammaLowering,
    LowerError, ThetaLowering,
};
use crate::sim::SimConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    BuildRvsdg,
    SeparateState,
    Disambig,
    LowerGamma,
    LowerTheta,
    LowerMemory,
    P2p,
    Buffers,
    Flatten,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::BuildRvsdg,
        Stage::SeparateState,
        Stage::Disambig,
        Stage::LowerGamma,
        Stage::LowerTheta,
        Stage::LowerMemory,
        Stage::P2p,
        Stage::Buffers,
        Stage::Flatten,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::BuildRvsdg => "build-rvsdg",
            Stage::SeparateState => "separate-state",
            Stage::Disambig => "disambig",
            Stage::LowerGamma => "lower-gamma",
            Stage::LowerTheta => "lower-theta",
            Stage::LowerMemory => "lower-memory",
            Stage::P2p => "p2p",
            Stage::Buffers => "buffers",
            Stage::Flatten => "flatten",
        }
    }

    /// From this stage on the graph is point-to-point and can be flattened
    /// into a checked netlist.
    pub fn is_netlist(self) -> bool {
        self >= Stage::P2p
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                format!("unknown stage '{s}' (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PipelineConfig {
    /// `None` is the NoQ configuration.
    pub disambig: Option<DisambigOptions>,
    /// `None` keeps only the back-edge buffers the loops need.
    pub buffers: Option<BufferPolicy>,
}

impl PipelineConfig {
    pub fn full() -> Self {
        PipelineConfig {
            disambig: Some(DisambigOptions::default()),
            buffers: Some(BufferPolicy::default()),
        }
    }

    pub fn noq() -> Self {
        PipelineConfig {
            disambig: None,
            ..Self::full()
        }
    }

    pub fn without_buffers(self) -> Self {
        PipelineConfig {
            buffers: None,
            ..self
        }
    }

    /// The four configurations {buffers on, off} x {ADDR-Q on, off}.
    pub fn matrix() -> [(&'static str, PipelineConfig); 4] {
        [
            ("full", Self::full()),
            ("noq", Self::noq()),
            ("full-nobuf", Self::full().without_buffers()),
            ("noq-nobuf", Self::noq().without_buffers()),
        ]
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::full()
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("{0}")]
    Parse(#[from] ParseError),
    #[error("{0}")]
    Build(#[from] BuildError),
    #[error("{0}")]
    Disambig(#[from] DisambigError),
    #[error("{0}")]
    Lower(#[from] LowerError),
    #[error("{0}")]
    Flatten(#[from] FlattenError),
    #[error("validation failed after {stage}: {}", .violations.join("; "))]
    Invalid {
        stage: Stage,
        violations: Vec<String>,
    },
}

impl CompileError {
    /// Frontend errors are user input problems; the rest are internal.
    pub fn is_input_error(&self) -> bool {
        matches!(self, CompileError::Parse(_) | CompileError::Build(_))
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PassReport {
    pub gammas: Vec<GammaLowering>,
    pub thetas: Vec<ThetaLowering>,
    pub chains: Vec<RedChain>,
    pub buffers: BufferReport,
}

#[derive(Clone, Debug)]
pub struct Compiled {
    pub ast: KernelAst,
    /// Handshake-dialect graph after the last stage run.
    pub graph: RvsdgGraph,
    /// Present once the pipeline reached the point-to-point stage.
    pub netlist: Option<ElasticNetlist>,
    pub report: PassReport,
}

impl Compiled {
    pub fn netlist(&self) -> &ElasticNetlist {
        self.netlist
            .as_ref()
            .expect("pipeline stopped before flatten")
    }
}

/// Stable short hash of a configuration, printed with results so that runs
/// under different settings are never confused.
pub fn fingerprint(config: &PipelineConfig, sim: &SimConfig) -> String {
    let text = serde_json::to_string(&(config, sim)).expect("configs serialize");
    let hash = text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    format!("{hash:016x}")
}

pub fn compile_source(src: &str, config: &PipelineConfig) -> Result<Compiled, CompileError> {
    compile(&parse(src)?, config)
}

pub fn compile(ast: &KernelAst, config: &PipelineConfig) -> Result<Compiled, CompileError> {
    compile_with(ast, config, Stage::Flatten, &mut |_, _, _| {})
}

/// Runs stages up to and including `stop`, validating after each one.
/// `observe` sees every intermediate graph (and netlist, from p2p on).
pub fn compile_with(
    ast: &KernelAst,
    config: &PipelineConfig,
    stop: Stage,
    observe: &mut dyn FnMut(Stage, &RvsdgGraph, Option<&ElasticNetlist>),
) -> Result<Compiled, CompileError> {
    let mut report = PassReport::default();
    let mut g = build_rvsdg(ast)?;
    let mut netlist = None;
    for stage in Stage::ALL {
        match stage {
            Stage::BuildRvsdg => {}
            Stage::SeparateState => g = separate_state_edges(&g),
            Stage::Disambig => {
                if let Some(opts) = &config.disambig {
                    report.chains = disambiguate(&mut g, opts)?;
                }
            }
            Stage::LowerGamma => report.gammas = lower_gamma(&mut g),
            Stage::LowerTheta => report.thetas = lower_theta(&mut g)?,
            Stage::LowerMemory => lower_memory_ports(&mut g),
            Stage::P2p => enforce_point_to_point(&mut g),
            Stage::Buffers => {
                if let Some(policy) = &config.buffers {
                    report.buffers = place_buffers(&mut g, policy);
                }
            }
            Stage::Flatten => {}
        }
        let violations: Vec<String> = validate_rvsdg(&g).iter().map(|v| v.to_string()).collect();
        if !violations.is_empty() {
            return Err(CompileError::Invalid { stage, violations });
        }
        if stage.is_netlist() {
            let net = flatten(&g)?;
            let violations: Vec<String> = validate_netlist(&net)
                .iter()
                .map(|v| v.to_string())
                .collect();
            if !violations.is_empty() {
                return Err(CompileError::Invalid { stage, violations });
            }
            netlist = Some(net);
        }
        observe(stage, &g, netlist.as_ref());
        if stage == stop {
            break;
        }
    }
    Ok(Compiled {
        ast: ast.clone(),
        graph: g,
        netlist,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HISTOGRAM: &str = "kernel histogram(f:i32[8], w:i32[8], hist:i32[4]) {
        i = 0;
        do {
            x = f[i];
            hist[x] = hist[x] + w[i];
            i = i + 1;
        } while (i < 8);
    }";

    const NESTED: &str = "kernel mm(a:i32[16], b:i32[16], c:i32[16]) {
        i = 0;
        do {
            j = 0;
            do {
                s = 0;
                k = 0;
                do {
                    s = s + a[i * 4 + k] * b[k * 4 + j];
                    k = k + 1;
                } while (k < 4);
                c[i * 4 + j] = s;
                j = j + 1;
            } while (j < 4);
            i = i + 1;
        } while (i < 4);
    }";

    const BRANCHY: &str = "kernel b(x:i32, y:i32, a:i32[4]) {
        if (x < y) { m = y; } else { m = x; }
        if (m > 2) { a[0] = m; }
        return m + a[1];
    }";

    #[test]
    fn every_stage_validates_in_every_configuration() {
        for src in [HISTOGRAM, NESTED, BRANCHY] {
            for (name, cfg) in PipelineConfig::matrix() {
                let mut seen = Vec::new();
                let c = compile_with(
                    &parse(src).unwrap(),
                    &cfg,
                    Stage::Flatten,
                    &mut |s, _, _| seen.push(s),
                )
                .unwrap_or_else(|e| panic!("{name}: {e}"));
                assert_eq!(seen, Stage::ALL.to_vec());
                assert!(c.netlist.is_some());
            }
        }
    }

    #[test]
    fn stop_after_an_early_stage() {
        let c = compile_with(
            &parse(HISTOGRAM).unwrap(),
            &PipelineConfig::full(),
            Stage::SeparateState,
            &mut |_, _, _| {},
        )
        .unwrap();
        assert!(c.netlist.is_none());
        assert_eq!(
            c.graph
                .count_kind(|k| matches!(k, crate::ir::NodeKind::Theta)),
            1
        );
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("bogus".parse::<Stage>().is_err());
    }

    #[test]
    fn histogram_gets_one_chain_and_one_queue() {
        let c = compile_source(HISTOGRAM, &PipelineConfig::full()).unwrap();
        assert_eq!(c.report.chains.len(), 1);
        assert_eq!(c.netlist().count("ADDR-Q"), 1);
        let noq = compile_source(HISTOGRAM, &PipelineConfig::noq()).unwrap();
        assert_eq!(noq.netlist().count("ADDR-Q"), 0);
    }
}
