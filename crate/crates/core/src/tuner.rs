//! Exhaustive auto-tuning of [`KernelConfig`] per setup and instance.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DedispError, Result};
use crate::kernels::{dedisperse_tiled, KernelConfig, KernelLimits, WorkerPool};
use crate::setup::{instance_sizing, sizing_with_max_delay, DelayTable, ObservationSetup};
use crate::signal::{Filterbank, NOISE_RNG};

/// Timed executions per configuration unless told otherwise.
pub const DEFAULT_REPEATS: usize = 10;

/// Untimed executions before measuring.
pub const WARMUP_RUNS: usize = 1;

fn divisors(n: usize) -> Vec<usize> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n.is_multiple_of(i) {
            small.push(i);
            if i * i != n {
                large.push(n / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Every configuration that tiles a `num_dms x samples` output within `limits`,
/// in lexicographic order of (items_time, items_dm, work_time, work_dm).
pub fn enumerate_configs(
    num_dms: usize,
    samples: usize,
    limits: &KernelLimits,
) -> Result<Vec<KernelConfig>> {
    if num_dms == 0 || samples == 0 {
        return Err(invalid("d and s must be >= 1"));
    }
    let mut configs = Vec::new();
    for items_time in divisors(samples) {
        if items_time > limits.max_block_items {
            break;
        }
        for items_dm in divisors(num_dms) {
            if items_time * items_dm > limits.max_block_items {
                break;
            }
            for work_time in divisors(samples / items_time) {
                if work_time > limits.max_accumulators {
                    break;
                }
                for work_dm in divisors(num_dms / items_dm) {
                    if work_time * work_dm > limits.max_accumulators {
                        break;
                    }
                    configs.push(KernelConfig::new(items_time, items_dm, work_time, work_dm));
                }
            }
        }
    }
    if configs.is_empty() {
        return Err(DedispError::EmptySpace(format!(
            "no configuration fits d={num_dms}, s={samples} under limits {limits}"
        )));
    }
    Ok(configs)
}

/// Timings of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub config: KernelConfig,
    /// Wall-clock seconds of each timed run.
    pub runs: Vec<f64>,
    pub mean_time: f64,
    pub gflops: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl TuningRecord {
    /// Builds a record from measured run times and the pass's FLOP count.
    pub fn from_runs(config: KernelConfig, runs: Vec<f64>, flop: u64) -> Result<Self> {
        if runs.is_empty() {
            return Err(invalid("a record needs at least one run"));
        }
        if runs.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(invalid("run times must be finite and > 0"));
        }
        let mean_time = runs.iter().sum::<f64>() / runs.len() as f64;
        Ok(Self {
            config,
            gflops: gflops(flop, mean_time),
            runs,
            mean_time,
            warning: None,
        })
    }
}

pub fn gflops(flop: u64, seconds: f64) -> f64 {
    flop as f64 / seconds / 1e9
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..16 {
        let start = Instant::now();
        let mut now = Instant::now();
        while now == start {
            now = Instant::now();
        }
        best = best.min(now - start);
    }
    best
}

/// Runs `cfg` once untimed, then `repeats` timed passes.
pub fn benchmark(
    fb: &Filterbank,
    table: &DelayTable,
    cfg: &KernelConfig,
    repeats: usize,
    limits: &KernelLimits,
    pool: &WorkerPool,
) -> Result<TuningRecord> {
    if repeats == 0 {
        return Err(invalid("repeats must be >= 1"));
    }
    let flop = table.num_dms() as u64 * fb.setup().samples_per_second as u64 * fb.channels() as u64;
    for _ in 0..WARMUP_RUNS {
        std::hint::black_box(dedisperse_tiled(fb, table, cfg, limits, pool)?);
    }
    let mut runs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let out = dedisperse_tiled(fb, table, cfg, limits, pool)?;
        let elapsed = start.elapsed();
        std::hint::black_box(out);
        runs.push(elapsed.as_secs_f64().max(f64::MIN_POSITIVE));
    }
    let mut record = TuningRecord::from_runs(*cfg, runs, flop)?;
    let resolution = timer_resolution().as_secs_f64();
    if resolution > 0.01 * record.mean_time {
        record.warning = Some(format!(
            "timer resolution {resolution:.3e} s exceeds 1% of mean run time {:.3e} s",
            record.mean_time
        ));
    }
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuningMode {
    /// Delay table from the setup's DM grid.
    Real,
    /// Every shift forced to zero.
    ZeroDm,
}

impl fmt::Display for TuningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TuningMode::Real => "real",
            TuningMode::ZeroDm => "zero-dm",
        })
    }
}

/// How the measurements were taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningMetadata {
    pub repeats: usize,
    pub warmup_runs: usize,
    pub threads: usize,
    pub seed: u64,
    pub noise_rng: String,
    pub timer_resolution_s: f64,
    pub os: String,
    pub arch: String,
    pub crate_version: String,
}

impl TuningMetadata {
    pub fn collect(repeats: usize, threads: usize, seed: u64) -> Self {
        Self {
            repeats,
            warmup_runs: WARMUP_RUNS,
            threads,
            seed,
            noise_rng: NOISE_RNG.into(),
            timer_resolution_s: timer_resolution().as_secs_f64(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// All records of one (setup, instance) sweep plus summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub setup: ObservationSetup,
    pub num_dms: usize,
    pub mode: TuningMode,
    pub limits: KernelLimits,
    pub records: Vec<TuningRecord>,
    /// Index into `records` of the optimum.
    pub best: usize,
    pub mean_gflops: f64,
    /// Population standard deviation over `records`.
    pub stddev_gflops: f64,
    /// `None` when the spread is zero and the ratio is meaningless.
    pub snr_optimum: Option<f64>,
    pub chebyshev_bound: Option<f64>,
    pub metadata: Option<TuningMetadata>,
}

/// Summary statistics over a set of records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimumStats {
    pub best: usize,
    pub mean_gflops: f64,
    pub stddev_gflops: f64,
    pub snr_optimum: Option<f64>,
    pub chebyshev_bound: Option<f64>,
}

/// Index of the fastest record; ties go to fewer block items, then the
/// lexicographically smaller config.
pub fn select_best(records: &[TuningRecord]) -> Option<usize> {
    records
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            a.gflops
                .total_cmp(&b.gflops)
                .then(b.config.block_items().cmp(&a.config.block_items()))
                .then(b.config.cmp(&a.config))
        })
        .map(|(i, _)| i)
}

/// Upper bound on the probability of a draw at least `snr` deviations from
/// the mean: `min(1, 1/snr^2)`.
pub fn chebyshev_bound(snr: f64) -> f64 {
    if snr <= 1.0 {
        1.0
    } else {
        1.0 / (snr * snr)
    }
}

/// Recomputes every statistic from the record list alone.
pub fn optimum_stats(records: &[TuningRecord]) -> Result<OptimumStats> {
    let best = select_best(records).ok_or_else(|| invalid("no records"))?;
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.gflops).sum::<f64>() / n;
    let var = records
        .iter()
        .map(|r| (r.gflops - mean).powi(2))
        .sum::<f64>()
        / n;
    let stddev = var.sqrt();
    let degenerate = stddev <= 1e-12 * mean.abs().max(f64::MIN_POSITIVE);
    let snr = (!degenerate).then(|| ((records[best].gflops - mean) / stddev).max(0.0));
    Ok(OptimumStats {
        best,
        mean_gflops: mean,
        stddev_gflops: stddev,
        snr_optimum: snr,
        chebyshev_bound: snr.map(chebyshev_bound),
    })
}

impl TuningResult {
    pub fn from_records(
        setup: &ObservationSetup,
        num_dms: usize,
        mode: TuningMode,
        limits: KernelLimits,
        records: Vec<TuningRecord>,
        metadata: Option<TuningMetadata>,
    ) -> Result<Self> {
        let stats = optimum_stats(&records)?;
        Ok(Self {
            setup: setup.clone(),
            num_dms,
            mode,
            limits,
            records,
            best: stats.best,
            mean_gflops: stats.mean_gflops,
            stddev_gflops: stats.stddev_gflops,
            snr_optimum: stats.snr_optimum,
            chebyshev_bound: stats.chebyshev_bound,
            metadata,
        })
    }

    pub fn best_record(&self) -> &TuningRecord {
        &self.records[self.best]
    }

    pub fn is_degenerate(&self) -> bool {
        self.snr_optimum.is_none()
    }

    pub fn flop(&self) -> u64 {
        self.num_dms as u64 * self.setup.samples_per_second as u64 * self.setup.channels as u64
    }

    pub fn record_for(&self, cfg: &KernelConfig) -> Option<&TuningRecord> {
        self.records.iter().find(|r| r.config == *cfg)
    }

    /// Flat CSV: one row per record.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(
            out,
            "items_time,items_dm,work_time,work_dm,mean_time,gflops"
        )?;
        for r in &self.records {
            let c = r.config;
            writeln!(
                out,
                "{},{},{},{},{:e},{}",
                c.items_time, c.items_dm, c.work_time, c.work_dm, r.mean_time, r.gflops
            )?;
        }
        Ok(())
    }
}

/// Noise-only input sized for `table`.
pub fn synthetic_input(
    setup: &ObservationSetup,
    table: &DelayTable,
    seed: u64,
) -> Result<Filterbank> {
    let sizing = sizing_with_max_delay(setup, table.num_dms(), table.max_delay())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..setup.channels as usize * sizing.t)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Filterbank::new(setup.clone(), sizing.t, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub limits: KernelLimits,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            limits: KernelLimits::default(),
            repeats: DEFAULT_REPEATS,
            seed: 0,
        }
    }
}

fn tune_with_table(
    setup: &ObservationSetup,
    table: &DelayTable,
    mode: TuningMode,
    opts: &TuneOptions,
    pool: &WorkerPool,
) -> Result<TuningResult> {
    let s = setup.samples_per_second as usize;
    let configs = enumerate_configs(table.num_dms(), s, &opts.limits)?;
    let fb = synthetic_input(setup, table, opts.seed)?;
    let records = configs
        .iter()
        .map(|cfg| benchmark(&fb, table, cfg, opts.repeats, &opts.limits, pool))
        .collect::<Result<Vec<_>>>()?;
    let metadata = TuningMetadata::collect(opts.repeats, pool.threads(), opts.seed);
    TuningResult::from_records(
        setup,
        table.num_dms(),
        mode,
        opts.limits,
        records,
        Some(metadata),
    )
}

/// Benchmarks every configuration for `num_dms` trial DMs of `setup`.
pub fn tune(
    setup: &ObservationSetup,
    num_dms: usize,
    opts: &TuneOptions,
    pool: &WorkerPool,
) -> Result<TuningResult> {
    instance_sizing(setup, num_dms)?;
    let table = DelayTable::build(setup, num_dms)?;
    tune_with_table(setup, &table, TuningMode::Real, opts, pool)
}

/// As [`tune`], with every shift zero.
pub fn zero_dm_experiment(
    setup: &ObservationSetup,
    num_dms: usize,
    opts: &TuneOptions,
    pool: &WorkerPool,
) -> Result<TuningResult> {
    let table = DelayTable::zero_dm(setup, num_dms)?;
    tune_with_table(setup, &table, TuningMode::ZeroDm, opts, pool)
}

/// Optimum throughput with perfect reuse relative to the real setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroDmComparison {
    pub setup: String,
    pub num_dms: usize,
    pub real_gflops: f64,
    pub zero_dm_gflops: f64,
    pub ratio: f64,
}

pub fn compare_zero_dm(real: &TuningResult, zero: &TuningResult) -> Result<ZeroDmComparison> {
    if real.mode != TuningMode::Real || zero.mode != TuningMode::ZeroDm {
        return Err(invalid("expected one real and one zero-dm result"));
    }
    if real.setup != zero.setup || real.num_dms != zero.num_dms {
        return Err(invalid(format!(
            "cannot pair {}/{} with {}/{}",
            real.setup.name, real.num_dms, zero.setup.name, zero.num_dms
        )));
    }
    let real_gflops = real.best_record().gflops;
    let zero_dm_gflops = zero.best_record().gflops;
    Ok(ZeroDmComparison {
        setup: real.setup.name.clone(),
        num_dms: real.num_dms,
        real_gflops,
        zero_dm_gflops,
        ratio: zero_dm_gflops / real_gflops,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpeedup {
    pub num_dms: usize,
    pub tuned: KernelConfig,
    pub tuned_gflops: f64,
    pub fixed_gflops: f64,
    pub speedup: f64,
}

/// The single configuration that maximises summed throughput over instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedConfigReport {
    pub setup: String,
    pub config: KernelConfig,
    pub total_gflops: f64,
    pub per_instance: Vec<InstanceSpeedup>,
}

pub fn best_fixed_config(results: &[TuningResult]) -> Result<FixedConfigReport> {
    let first = results
        .first()
        .ok_or_else(|| invalid("no tuning results"))?;
    if let Some(other) = results.iter().find(|r| r.setup != first.setup) {
        return Err(invalid(format!(
            "results mix setups '{}' and '{}'",
            first.setup.name, other.setup.name
        )));
    }

    let mut common: HashSet<KernelConfig> = first.records.iter().map(|r| r.config).collect();
    for r in &results[1..] {
        let here: HashSet<KernelConfig> = r.records.iter().map(|r| r.config).collect();
        common.retain(|c| here.contains(c));
    }
    if common.is_empty() {
        return Err(DedispError::EmptySpace(format!(
            "no configuration was measured in all {} instances of '{}'",
            results.len(),
            first.setup.name
        )));
    }

    let mut totals: BTreeMap<KernelConfig, f64> = BTreeMap::new();
    for r in results {
        for rec in r.records.iter().filter(|rec| common.contains(&rec.config)) {
            *totals.entry(rec.config).or_default() += rec.gflops;
        }
    }
    let (config, total_gflops) = totals
        .into_iter()
        .max_by(|(ca, a), (cb, b)| {
            a.total_cmp(b)
                .then(cb.block_items().cmp(&ca.block_items()))
                .then(cb.cmp(ca))
        })
        .expect("common set is non-empty");

    let per_instance = results
        .iter()
        .map(|r| {
            let best = r.best_record();
            let fixed = r.record_for(&config).expect("config is common").gflops;
            InstanceSpeedup {
                num_dms: r.num_dms,
                tuned: best.config,
                tuned_gflops: best.gflops,
                fixed_gflops: fixed,
                speedup: best.gflops / fixed,
            }
        })
        .collect();

    Ok(FixedConfigReport {
        setup: first.setup.name.clone(),
        config,
        total_gflops,
        per_instance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over [min, max]; the last bin is closed.
pub fn histogram_values(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(invalid("bins must be >= 1"));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: min + range * i as f64 / bins as f64,
            hi: min + range * (i + 1) as f64 / bins as f64,
            count: 0,
        })
        .collect();
    for &v in values {
        let idx = if range > 0.0 {
            (((v - min) / range * bins as f64) as usize).min(bins - 1)
        } else {
            0
        };
        out[idx].count += 1;
    }
    Ok(out)
}

pub fn histogram(result: &TuningResult, bins: usize) -> Result<Vec<HistogramBin>> {
    let values: Vec<f64> = result.records.iter().map(|r| r.gflops).collect();
    histogram_values(&values, bins)
}
