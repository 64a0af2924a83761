//! Arithmetic intensity, roofline classification, real-time thresholds and
//! deployment sizing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, DedispError, Result};
use crate::kernels::{count_loads, KernelConfig};
use crate::setup::{DelayTable, ObservationSetup, BYTES_PER_ELEMENT};

/// AI bounds in FLOP/byte.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AiBounds {
    /// One addition per 4-byte input load; the true value is strictly below
    /// this once output and delay-table traffic are added.
    pub no_reuse: f64,
    /// Ceiling when every input element is loaded once:
    /// `1 / (4 (1/d + 1/s + 1/c))`.
    pub reuse_bound: f64,
}

pub fn ai_bounds(d: usize, s: usize, c: usize) -> Result<AiBounds> {
    if d == 0 || s == 0 || c == 0 {
        return Err(invalid("d, s and c must be >= 1"));
    }
    let inv = 1.0 / d as f64 + 1.0 / s as f64 + 1.0 / c as f64;
    Ok(AiBounds {
        no_reuse: 1.0 / BYTES_PER_ELEMENT as f64,
        reuse_bound: 1.0 / (BYTES_PER_ELEMENT as f64 * inv),
    })
}

/// Memory traffic of one pass, in elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficCounts {
    pub flops: u64,
    pub staged_loads: u64,
    pub output_writes: u64,
    pub delay_reads: u64,
}

impl TrafficCounts {
    /// Traffic of `cfg` on `table`: each output written once and each delay
    /// entry read once.
    pub fn for_config(table: &DelayTable, cfg: &KernelConfig, samples: usize) -> Result<Self> {
        let loads = count_loads(table, cfg, samples)?;
        let d = table.num_dms() as u64;
        let c = table.channels() as u64;
        let s = samples as u64;
        Ok(Self {
            flops: d * s * c,
            staged_loads: loads.staged_loads,
            output_writes: d * s,
            delay_reads: d * c,
        })
    }

    pub fn bytes(&self) -> u64 {
        BYTES_PER_ELEMENT * (self.staged_loads + self.output_writes + self.delay_reads)
    }

    pub fn ai(&self) -> Result<f64> {
        measured_ai(
            self.flops,
            self.staged_loads,
            self.output_writes,
            self.delay_reads,
        )
    }
}

pub fn measured_ai(
    flops: u64,
    staged_loads: u64,
    output_writes: u64,
    delay_reads: u64,
) -> Result<f64> {
    let elements = staged_loads + output_writes + delay_reads;
    if elements == 0 {
        return Err(invalid("no memory traffic to divide by"));
    }
    Ok(flops as f64 / (BYTES_PER_ELEMENT * elements) as f64)
}

/// GFLOP/s needed to dedisperse one second of data in one second.
pub fn realtime_threshold(setup: &ObservationSetup, num_dms: usize) -> Result<f64> {
    if num_dms == 0 {
        return Err(invalid("num_dms must be >= 1"));
    }
    Ok(num_dms as f64 * setup.samples_per_second as f64 * setup.channels as f64 / 1e9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub setup: String,
    pub num_dms: usize,
    pub beams: usize,
    pub time_per_pass: f64,
    pub beams_per_device: usize,
    pub devices: usize,
}

/// Devices needed to keep `beams` independent beams real-time, given the
/// measured time to dedisperse one second of one beam.
pub fn deployment_sizing(
    setup: &ObservationSetup,
    num_dms: usize,
    beams: usize,
    time_per_pass: f64,
) -> Result<DeploymentPlan> {
    if !(time_per_pass.is_finite() && time_per_pass > 0.0) {
        return Err(invalid(format!(
            "time per pass must be > 0, got {time_per_pass}"
        )));
    }
    if time_per_pass >= 1.0 {
        return Err(DedispError::NotRealTime(format!(
            "{time_per_pass} s per pass cannot keep up with one second of data"
        )));
    }
    if beams == 0 {
        return Err(invalid("beams must be >= 1"));
    }
    let beams_per_device = (1.0 / time_per_pass).floor() as usize;
    Ok(DeploymentPlan {
        setup: setup.name.clone(),
        num_dms,
        beams,
        time_per_pass,
        beams_per_device,
        devices: beams.div_ceil(beams_per_device),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    Memory,
    Compute,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::Memory => "memory-bound",
            Bound::Compute => "compute-bound",
        })
    }
}

/// A machine's peak compute and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roofline {
    pub peak_gflops: f64,
    pub peak_gbs: f64,
}

impl Roofline {
    pub fn new(peak_gflops: f64, peak_gbs: f64) -> Result<Self> {
        if !(peak_gflops > 0.0 && peak_gbs > 0.0 && peak_gflops.is_finite() && peak_gbs.is_finite())
        {
            return Err(invalid("roofline peaks must be finite and > 0"));
        }
        Ok(Self {
            peak_gflops,
            peak_gbs,
        })
    }

    /// AI at which bandwidth and compute ceilings meet.
    pub fn ridge(&self) -> f64 {
        self.peak_gflops / self.peak_gbs
    }

    pub fn attainable(&self, ai: f64) -> f64 {
        (ai * self.peak_gbs).min(self.peak_gflops)
    }

    pub fn classify(&self, ai: f64) -> Bound {
        if ai < self.ridge() {
            Bound::Memory
        } else {
            Bound::Compute
        }
    }
}

impl FromStr for Roofline {
    type Err = DedispError;

    /// Parses `peak_gflops,peak_gbs`.
    fn from_str(s: &str) -> Result<Self> {
        let (g, b) = s
            .split_once(',')
            .ok_or_else(|| invalid(format!("roofline '{s}' is not G,B")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| invalid(format!("roofline '{s}' is not numeric")))
        };
        Self::new(parse(g)?, parse(b)?)
    }
}

/// Reference accelerator from the bundled platform table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    pub name: String,
    pub compute_elements: String,
    pub roofline: Roofline,
}

const PLATFORMS_CSV: &str = include_str!("../data/platforms.csv");

/// The five accelerators of the bundled reference table, for annotation.
pub fn reference_platforms() -> Vec<Platform> {
    PLATFORMS_CSV
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            Platform {
                name: f[0].to_string(),
                compute_elements: f[1].to_string(),
                roofline: Roofline {
                    peak_gflops: f[2].parse().expect("bundled table is numeric"),
                    peak_gbs: f[3].parse().expect("bundled table is numeric"),
                },
            }
        })
        .collect()
}
