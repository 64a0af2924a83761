//! Run manifests, persisted tuning documents and the analysis report.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    ai_bounds, deployment_sizing, realtime_threshold, Bound, DeploymentPlan, Roofline,
    TrafficCounts,
};
use crate::error::{format_err, invalid, Result};
use crate::kernels::{KernelConfig, KernelLimits};
use crate::setup::{DelayTable, ObservationSetup};
use crate::tuner::{
    best_fixed_config, compare_zero_dm, FixedConfigReport, TuningMode, TuningResult,
    ZeroDmComparison,
};

/// Enough to re-run the command that produced an artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub setup: Option<ObservationSetup>,
    pub instances: Vec<usize>,
    pub limits: Option<KernelLimits>,
    pub repeats: Option<usize>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        Self {
            command: command.into(),
            argv,
            setup: None,
            instances: Vec::new(),
            limits: None,
            repeats: None,
            seed: None,
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// One persisted tuning result with its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningDocument {
    pub manifest: RunManifest,
    pub result: TuningResult,
}

impl TuningDocument {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        serde_json::from_slice(&bytes).map_err(|e| {
            format_err(
                0,
                format!("{}: not a tuning document: {e}", path.as_ref().display()),
            )
        })
    }
}

/// Optimum of one instance with its throughput and traffic figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub num_dms: usize,
    pub mode: TuningMode,
    pub configs: usize,
    pub best: KernelConfig,
    pub gflops: f64,
    pub mean_time: f64,
    pub realtime_threshold: f64,
    pub realtime: bool,
    pub snr_optimum: Option<f64>,
    pub chebyshev_bound: Option<f64>,
    pub measured_ai: f64,
    pub ai_reuse_bound: f64,
    pub bound: Option<Bound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupAnalysis {
    pub setup: ObservationSetup,
    pub instances: Vec<InstanceSummary>,
    pub fixed: Option<FixedConfigReport>,
    pub zero_dm: Vec<ZeroDmComparison>,
}

/// Deployment question: how many devices for `beams` beams of `num_dms` DMs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploySpec {
    pub setup: ObservationSetup,
    pub num_dms: usize,
    pub beams: usize,
    /// Seconds per pass; taken from a matching tuned optimum when absent.
    pub time_per_pass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub setups: Vec<SetupAnalysis>,
    pub roofline: Option<Roofline>,
    pub deployment: Option<DeploymentPlan>,
    pub notes: Vec<String>,
}

fn summarize(result: &TuningResult, roofline: Option<&Roofline>) -> Result<InstanceSummary> {
    let setup = &result.setup;
    let s = setup.samples_per_second as usize;
    let best = result.best_record();
    let table = match result.mode {
        TuningMode::Real => DelayTable::build(setup, result.num_dms)?,
        TuningMode::ZeroDm => DelayTable::zero_dm(setup, result.num_dms)?,
    };
    let ai = TrafficCounts::for_config(&table, &best.config, s)?.ai()?;
    let bounds = ai_bounds(result.num_dms, s, setup.channels as usize)?;
    let threshold = realtime_threshold(setup, result.num_dms)?;
    Ok(InstanceSummary {
        num_dms: result.num_dms,
        mode: result.mode,
        configs: result.records.len(),
        best: best.config,
        gflops: best.gflops,
        mean_time: best.mean_time,
        realtime_threshold: threshold,
        realtime: best.gflops >= threshold,
        snr_optimum: result.snr_optimum,
        chebyshev_bound: result.chebyshev_bound,
        measured_ai: ai,
        ai_reuse_bound: bounds.reuse_bound,
        bound: roofline.map(|r| r.classify(ai)),
    })
}

pub fn build_analysis(
    results: &[TuningResult],
    roofline: Option<Roofline>,
    deploy: Option<&DeploySpec>,
) -> Result<AnalysisReport> {
    if results.is_empty() && deploy.is_none() {
        return Err(invalid(
            "nothing to analyse: no results and no deployment question",
        ));
    }
    let mut by_setup: BTreeMap<String, Vec<&TuningResult>> = BTreeMap::new();
    for r in results {
        by_setup.entry(r.setup.name.clone()).or_default().push(r);
    }

    let mut setups = Vec::new();
    for group in by_setup.values_mut() {
        group.sort_by_key(|r| (r.mode == TuningMode::ZeroDm, r.num_dms));
        let instances = group
            .iter()
            .map(|r| summarize(r, roofline.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let real: Vec<TuningResult> = group
            .iter()
            .filter(|r| r.mode == TuningMode::Real)
            .map(|r| (*r).clone())
            .collect();
        let fixed = if real.is_empty() {
            None
        } else {
            Some(best_fixed_config(&real)?)
        };
        let zero_dm = group
            .iter()
            .filter(|z| z.mode == TuningMode::ZeroDm)
            .filter_map(|z| {
                real.iter()
                    .find(|r| r.num_dms == z.num_dms)
                    .map(|r| compare_zero_dm(r, z))
            })
            .collect::<Result<Vec<_>>>()?;
        setups.push(SetupAnalysis {
            setup: group[0].setup.clone(),
            instances,
            fixed,
            zero_dm,
        });
    }

    let deployment = match deploy {
        None => None,
        Some(spec) => {
            let time = match spec.time_per_pass {
                Some(t) => t,
                None => results
                    .iter()
                    .find(|r| {
                        r.mode == TuningMode::Real
                            && r.setup.name == spec.setup.name
                            && r.num_dms == spec.num_dms
                    })
                    .map(|r| r.best_record().mean_time)
                    .ok_or_else(|| {
                        invalid(format!(
                            "no tuned result for {} with {} DMs to take a pass time from",
                            spec.setup.name, spec.num_dms
                        ))
                    })?,
            };
            Some(deployment_sizing(
                &spec.setup,
                spec.num_dms,
                spec.beams,
                time,
            )?)
        }
    };

    let notes = vec![
        "measured AI counts staged input loads, one write per output and one read per delay entry, 4 bytes each".into(),
        "cache-line granularity and unaligned-access overhead are not modelled".into(),
        "a zero-dm/real ratio near 1 means the real setup already saturates reuse on this machine".into(),
    ];

    Ok(AnalysisReport {
        setups,
        roofline,
        deployment,
        notes,
    })
}

impl AnalysisReport {
    /// Plot-ready rows: setup, mode, instance, gflops, threshold.
    pub fn write_plot_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "setup,mode,instance,gflops,threshold")?;
        for sa in &self.setups {
            for i in &sa.instances {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    sa.setup.name, i.mode, i.num_dms, i.gflops, i.realtime_threshold
                )?;
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.prec$}"))
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for sa in &self.setups {
            writeln!(out, "== {} ==", sa.setup)?;
            writeln!(
                out,
                "{:>8} {:>8} {:>16} {:>10} {:>10} {:>3} {:>6} {:>6} {:>8} {:>8}",
                "dms",
                "mode",
                "optimum",
                "GFLOP/s",
                "threshold",
                "RT",
                "snr",
                "cheb",
                "AI",
                "AI max"
            )?;
            for i in &sa.instances {
                writeln!(
                    out,
                    "{:>8} {:>8} {:>16} {:>10.3} {:>10.4} {:>3} {:>6} {:>6} {:>8.4} {:>8.2}{}",
                    i.num_dms,
                    i.mode.to_string(),
                    i.best.to_string(),
                    i.gflops,
                    i.realtime_threshold,
                    if i.realtime { "yes" } else { "no" },
                    opt(i.snr_optimum, 2),
                    opt(i.chebyshev_bound, 3),
                    i.measured_ai,
                    i.ai_reuse_bound,
                    i.bound.map(|b| format!("  {b}")).unwrap_or_default(),
                )?;
            }
            if let Some(fixed) = &sa.fixed {
                writeln!(
                    out,
                    "best fixed config {} (sum {:.3} GFLOP/s)",
                    fixed.config, fixed.total_gflops
                )?;
                for p in &fixed.per_instance {
                    writeln!(
                        out,
                        "  {:>8} DMs: tuned {} {:.3} vs fixed {:.3} GFLOP/s, speedup {:.3}",
                        p.num_dms, p.tuned, p.tuned_gflops, p.fixed_gflops, p.speedup
                    )?;
                }
            }
            for z in &sa.zero_dm {
                writeln!(
                    out,
                    "zero-dm {:>8} DMs: {:.3} vs real {:.3} GFLOP/s, ratio {:.3}",
                    z.num_dms, z.zero_dm_gflops, z.real_gflops, z.ratio
                )?;
            }
        }
        if let Some(r) = &self.roofline {
            writeln!(
                out,
                "roofline: {} GFLOP/s, {} GB/s, ridge {:.3} FLOP/byte",
                r.peak_gflops,
                r.peak_gbs,
                r.ridge()
            )?;
        }
        if let Some(d) = &self.deployment {
            writeln!(
                out,
                "deployment: {} beams of {} DMs ({}) at {} s/pass -> {} beams/device, {} devices",
                d.beams, d.num_dms, d.setup, d.time_per_pass, d.beams_per_device, d.devices
            )?;
        }
        for n in &self.notes {
            writeln!(out, "note: {n}")?;
        }
        f.write_str(&out)
    }
}
