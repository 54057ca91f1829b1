//! Cycle counts of a kernel corpus under NoQ and the full pipeline.

use std::fmt::Write as _;
use std::sync::Mutex;

use serde::Serialize;

use crate::corpus::{CorpusEntry, CorpusError};
use crate::pipeline::PipelineConfig;
use crate::sim::SimConfig;
use crate::verify::check_kernel;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub kernel: String,
    /// Cycles without and with address disambiguation, or why the kernel
    /// failed.
    pub result: Result<(u64, u64), String>,
}

impl BenchRow {
    pub fn ratio(&self) -> Option<f64> {
        self.result
            .as_ref()
            .ok()
            .map(|&(noq, full)| full as f64 / noq as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    /// Geometric mean of full/NoQ over the kernels that ran.
    pub fn geomean(&self) -> Option<f64> {
        let ratios: Vec<f64> = self.rows.iter().filter_map(BenchRow::ratio).collect();
        if ratios.is_empty() {
            return None;
        }
        Some((ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp())
    }

    pub fn row(&self, kernel: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.kernel == kernel)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kernel,noq_cycles,full_cycles,full_over_noq,status\n");
        for r in &self.rows {
            match &r.result {
                Ok((noq, full)) => {
                    let ratio = r.ratio().unwrap_or(f64::NAN);
                    writeln!(out, "{},{noq},{full},{ratio:.4},ok", csv_field(&r.kernel)).unwrap();
                }
                Err(e) => {
                    writeln!(
                        out,
                        "{},,,,{}",
                        csv_field(&r.kernel),
                        csv_field(&format!("FAILED: {e}"))
                    )
                    .unwrap();
                }
            }
        }
        if let Some(g) = self.geomean() {
            writeln!(out, "geomean,,,{g:.4},").unwrap();
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

/// Checks each kernel against the interpreter under `noq` and `full` and
/// records the cycle counts. Kernels run concurrently; a failing kernel only
/// marks its own row.
pub fn run_bench(
    entries: Vec<(String, Result<CorpusEntry, CorpusError>)>,
    noq: &PipelineConfig,
    full: &PipelineConfig,
    sim: SimConfig,
) -> BenchTable {
    let rows: Vec<Mutex<Option<BenchRow>>> = entries.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for ((name, entry), slot) in entries.iter().zip(&rows) {
            s.spawn(move || {
                let result = match entry {
                    Err(e) => Err(e.to_string()),
                    Ok(e) => {
                        let run = |cfg: &PipelineConfig, label: &str| {
                            let v = check_kernel(&e.ast, &e.inputs, cfg, sim);
                            match (v.pass, v.cycles) {
                                (true, Some(c)) => Ok(c),
                                _ => Err(format!(
                                    "{label}: {}",
                                    v.detail.unwrap_or_else(|| "simulation trapped".into())
                                )),
                            }
                        };
                        run(noq, "noq").and_then(|q| run(full, "full").map(|f| (q, f)))
                    }
                };
                *slot.lock().unwrap() = Some(BenchRow {
                    kernel: name.clone(),
                    result,
                });
            });
        }
    });
    BenchTable {
        rows: rows
            .into_iter()
            .map(|m| m.into_inner().unwrap().unwrap())
            .collect(),
    }
}
