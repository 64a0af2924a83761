//! Dedispersion kernels.
//!
//! [`dedisperse_reference`] is the plain triple loop over (DM, sample,
//! channel). [`dedisperse_tiled`] splits the d x s output into tiles of
//! `tile_dm x tile_time` elements; each tile is one task on the worker pool.
//! A tile first stages, per channel, the contiguous input range spanned by
//! its DMs' shifts, then every work-item accumulates its
//! `work_dm x work_time` block of outputs from that staging buffer. DMs whose
//! shifts coincide read the same staged samples, which is the data reuse the
//! configuration space trades against parallelism.
//!
//! Both kernels add channels in ascending order into one f32 accumulator per
//! output element, so their results are bit-identical for every valid
//! configuration.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DedispError, Result};
use crate::setup::DelayTable;
use crate::signal::Filterbank;

/// Dedispersed output: one row of `samples` sums per trial DM.
#[derive(Debug, Clone, PartialEq)]
pub struct DedispersedSeries {
    num_dms: usize,
    samples: usize,
    data: Vec<f32>,
}

impl DedispersedSeries {
    pub fn num_dms(&self) -> usize {
        self.num_dms
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn row(&self, dm: usize) -> &[f32] {
        &self.data[dm * self.samples..(dm + 1) * self.samples]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Trial index and value of the largest sample over all rows.
    pub fn peak(&self) -> (usize, usize, f32) {
        let mut best = (0, 0, f32::NEG_INFINITY);
        for dm in 0..self.num_dms {
            for (j, &v) in self.row(dm).iter().enumerate() {
                if v > best.2 {
                    best = (dm, j, v);
                }
            }
        }
        best
    }
}

/// Platform limits on block shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelLimits {
    /// Largest `items_time * items_dm`.
    pub max_block_items: usize,
    /// Largest `work_time * work_dm`.
    pub max_accumulators: usize,
}

impl Default for KernelLimits {
    fn default() -> Self {
        Self {
            max_block_items: 1024,
            max_accumulators: 256,
        }
    }
}

impl fmt::Display for KernelLimits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "items={},acc={}",
            self.max_block_items, self.max_accumulators
        )
    }
}

impl FromStr for KernelLimits {
    type Err = DedispError;

    /// Parses `items=I,acc=A`; either key may be omitted.
    fn from_str(s: &str) -> Result<Self> {
        let mut limits = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| invalid(format!("limit '{part}' is not key=value")))?;
            let v: usize = v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("limit '{part}' has a bad value")))?;
            match k.trim() {
                "items" => limits.max_block_items = v,
                "acc" => limits.max_accumulators = v,
                other => return Err(invalid(format!("unknown limit '{other}'"))),
            }
        }
        Ok(limits)
    }
}

/// The four tuning parameters of the tiled kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Work-items per block along time.
    pub items_time: usize,
    /// Work-items per block along DM.
    pub items_dm: usize,
    /// Outputs per work-item along time.
    pub work_time: usize,
    /// Outputs per work-item along DM.
    pub work_dm: usize,
}

impl KernelConfig {
    pub const fn new(items_time: usize, items_dm: usize, work_time: usize, work_dm: usize) -> Self {
        Self {
            items_time,
            items_dm,
            work_time,
            work_dm,
        }
    }

    pub fn tile_time(&self) -> usize {
        self.items_time * self.work_time
    }

    pub fn tile_dm(&self) -> usize {
        self.items_dm * self.work_dm
    }

    pub fn block_items(&self) -> usize {
        self.items_time * self.items_dm
    }

    pub fn accumulators(&self) -> usize {
        self.work_time * self.work_dm
    }

    /// Checks tiling and limits for a d x s output.
    pub fn validate(&self, num_dms: usize, samples: usize, limits: &KernelLimits) -> Result<()> {
        self.check_tiling(num_dms, samples)?;
        if self.block_items() > limits.max_block_items {
            return Err(invalid(format!(
                "{self}: {} items per block exceeds limit {}",
                self.block_items(),
                limits.max_block_items
            )));
        }
        if self.accumulators() > limits.max_accumulators {
            return Err(invalid(format!(
                "{self}: {} accumulators per item exceeds limit {}",
                self.accumulators(),
                limits.max_accumulators
            )));
        }
        Ok(())
    }

    fn check_tiling(&self, num_dms: usize, samples: usize) -> Result<()> {
        if [self.items_time, self.items_dm, self.work_time, self.work_dm].contains(&0) {
            return Err(invalid(format!("{self}: all parameters must be >= 1")));
        }
        if !samples.is_multiple_of(self.tile_time()) {
            return Err(invalid(format!(
                "{self}: tile_time {} does not divide {samples} samples",
                self.tile_time()
            )));
        }
        if !num_dms.is_multiple_of(self.tile_dm()) {
            return Err(invalid(format!(
                "{self}: tile_dm {} does not divide {num_dms} DMs",
                self.tile_dm()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for KernelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}/{}x{}",
            self.items_time, self.items_dm, self.work_time, self.work_dm
        )
    }
}

impl FromStr for KernelConfig {
    type Err = DedispError;

    /// Parses `items_time,items_dm,work_time,work_dm`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| invalid(format!("config '{s}' is not four integers")))?;
        match parts[..] {
            [a, b, c, d] => Ok(Self::new(a, b, c, d)),
            _ => Err(invalid(format!("config '{s}' needs exactly four integers"))),
        }
    }
}

/// Thread pool executing independent tiles.
pub struct WorkerPool {
    pool: rayon::ThreadPool,
}

impl WorkerPool {
    /// `threads == 0` uses the hardware concurrency.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("dedisp-{i}"))
            .build()
            .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorkerPool")
            .field("threads", &self.threads())
            .finish()
    }
}

/// Counters collected by [`dedisperse_tiled_instrumented`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KernelCounters {
    pub additions: u64,
    pub staged_loads: u64,
    pub output_writes: u64,
}

fn check_inputs(fb: &Filterbank, table: &DelayTable) -> Result<usize> {
    if table.channels() != fb.channels() {
        return Err(invalid(format!(
            "delay table has {} channels, filterbank has {}",
            table.channels(),
            fb.channels()
        )));
    }
    if table.setup().samples_per_second != fb.setup().samples_per_second {
        return Err(invalid(
            "delay table and filterbank disagree on sample rate",
        ));
    }
    let s = fb.setup().samples_per_second as usize;
    let needed = s + table.max_delay() as usize;
    if fb.samples() < needed {
        return Err(invalid(format!(
            "filterbank has {} samples per channel, needs s + max_delay = {needed}",
            fb.samples()
        )));
    }
    Ok(s)
}

/// Direct evaluation: one accumulator per output, channels in ascending order.
pub fn dedisperse_reference(fb: &Filterbank, table: &DelayTable) -> Result<DedispersedSeries> {
    let s = check_inputs(fb, table)?;
    let d = table.num_dms();
    let mut data = vec![0.0f32; d * s];
    for dm in 0..d {
        let shifts = table.row(dm);
        for sample in 0..s {
            let mut acc = 0.0f32;
            for (ch, &shift) in shifts.iter().enumerate() {
                acc += fb.channel(ch)[sample + shift as usize];
            }
            data[dm * s + sample] = acc;
        }
    }
    Ok(DedispersedSeries {
        num_dms: d,
        samples: s,
        data,
    })
}

pub fn dedisperse_tiled(
    fb: &Filterbank,
    table: &DelayTable,
    cfg: &KernelConfig,
    limits: &KernelLimits,
    pool: &WorkerPool,
) -> Result<DedispersedSeries> {
    run_tiled::<false>(fb, table, cfg, limits, pool).map(|(out, _)| out)
}

/// Same as [`dedisperse_tiled`], also counting additions and staged loads.
pub fn dedisperse_tiled_instrumented(
    fb: &Filterbank,
    table: &DelayTable,
    cfg: &KernelConfig,
    limits: &KernelLimits,
    pool: &WorkerPool,
) -> Result<(DedispersedSeries, KernelCounters)> {
    run_tiled::<true>(fb, table, cfg, limits, pool)
}

/// A DM band's output over a run of consecutive time tiles: `tile_dm` row
/// slices of `tiles * tile_time` each.
struct Task<'a> {
    dm0: usize,
    t0: usize,
    tiles: usize,
    rows: Vec<&'a mut [f32]>,
}

#[derive(Default)]
struct Scratch {
    staged: Vec<f32>,
    base: Vec<usize>,
    lo: Vec<u32>,
    /// Shift relative to the channel's staged origin, indexed [ch * tile_dm + dm].
    rel: Vec<u32>,
    acc: Vec<f32>,
}

/// Time tiles per task: enough tasks to balance the pool without one
/// allocation per tile.
fn tiles_per_task(bands: usize, time_tiles: usize, threads: usize) -> usize {
    let target = (4 * threads).div_ceil(bands).max(1);
    time_tiles.div_ceil(target.min(time_tiles))
}

fn run_tiled<const COUNT: bool>(
    fb: &Filterbank,
    table: &DelayTable,
    cfg: &KernelConfig,
    limits: &KernelLimits,
    pool: &WorkerPool,
) -> Result<(DedispersedSeries, KernelCounters)> {
    let s = check_inputs(fb, table)?;
    let d = table.num_dms();
    cfg.validate(d, s, limits)?;

    let tile_time = cfg.tile_time();
    let tile_dm = cfg.tile_dm();
    let bands = d / tile_dm;
    let time_tiles = s / tile_time;
    let span = tiles_per_task(bands, time_tiles, pool.threads()) * tile_time;
    let mut data = vec![0.0f32; d * s];

    let mut tasks: Vec<Task<'_>> = Vec::with_capacity(bands * s.div_ceil(span));
    for (band, block) in data.chunks_mut(tile_dm * s).enumerate() {
        let first = tasks.len();
        for t0 in (0..s).step_by(span) {
            tasks.push(Task {
                dm0: band * tile_dm,
                t0,
                tiles: span.min(s - t0) / tile_time,
                rows: Vec::with_capacity(tile_dm),
            });
        }
        for row in block.chunks_mut(s) {
            for (k, piece) in row.chunks_mut(span).enumerate() {
                tasks[first + k].rows.push(piece);
            }
        }
    }

    let additions = AtomicU64::new(0);
    let staged_loads = AtomicU64::new(0);
    pool.pool.install(|| {
        tasks
            .into_par_iter()
            .for_each_init(Scratch::default, |scratch, mut task| {
                for k in 0..task.tiles {
                    let (adds, loads) =
                        compute_tile::<COUNT>(fb, table, cfg, &mut task, k, scratch);
                    if COUNT {
                        additions.fetch_add(adds, Ordering::Relaxed);
                        staged_loads.fetch_add(loads, Ordering::Relaxed);
                    }
                }
            });
    });

    let counters = KernelCounters {
        additions: additions.into_inner(),
        staged_loads: staged_loads.into_inner(),
        output_writes: if COUNT { (d * s) as u64 } else { 0 },
    };
    Ok((
        DedispersedSeries {
            num_dms: d,
            samples: s,
            data,
        },
        counters,
    ))
}

fn compute_tile<const COUNT: bool>(
    fb: &Filterbank,
    table: &DelayTable,
    cfg: &KernelConfig,
    task: &mut Task<'_>,
    k: usize,
    scratch: &mut Scratch,
) -> (u64, u64) {
    let c = fb.channels();
    let tile_dm = cfg.tile_dm();
    let tile_time = cfg.tile_time();
    let offset = k * tile_time;
    let t0 = task.t0 + offset;

    // Stage each channel's window [t0 + lo, t0 + hi + tile_time).
    scratch.staged.clear();
    scratch.base.clear();
    scratch.lo.clear();
    scratch.rel.clear();
    for ch in 0..c {
        let mut lo = u32::MAX;
        let mut hi = 0;
        for dm in task.dm0..task.dm0 + tile_dm {
            let shift = table.get(dm, ch);
            lo = lo.min(shift);
            hi = hi.max(shift);
        }
        let start = t0 + lo as usize;
        let len = tile_time + (hi - lo) as usize;
        scratch.base.push(scratch.staged.len());
        scratch.lo.push(lo);
        scratch
            .staged
            .extend_from_slice(&fb.channel(ch)[start..start + len]);
        for dm in task.dm0..task.dm0 + tile_dm {
            scratch.rel.push(table.get(dm, ch) - lo);
        }
    }
    let loads = scratch.staged.len() as u64;

    let (work_time, work_dm) = (cfg.work_time, cfg.work_dm);
    scratch.acc.resize(cfg.accumulators(), 0.0);
    let mut adds = 0u64;
    for item_dm in 0..cfg.items_dm {
        let dm_base = item_dm * work_dm;
        for item_time in 0..cfg.items_time {
            let time_base = item_time * work_time;
            scratch.acc.fill(0.0);
            for ch in 0..c {
                let window = &scratch.staged[scratch.base[ch]..];
                let rel = &scratch.rel[ch * tile_dm + dm_base..ch * tile_dm + dm_base + work_dm];
                for (wd, &shift) in rel.iter().enumerate() {
                    let src = &window[shift as usize + time_base..][..work_time];
                    let acc = &mut scratch.acc[wd * work_time..(wd + 1) * work_time];
                    for (a, &v) in acc.iter_mut().zip(src) {
                        *a += v;
                    }
                    if COUNT {
                        adds += work_time as u64;
                    }
                }
            }
            for wd in 0..work_dm {
                task.rows[dm_base + wd][offset + time_base..offset + time_base + work_time]
                    .copy_from_slice(&scratch.acc[wd * work_time..(wd + 1) * work_time]);
            }
        }
    }
    (adds, loads)
}

/// Input traffic of a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadCounts {
    /// Elements copied into staging buffers, summed over tiles.
    pub staged_loads: u64,
    /// Distinct (channel, sample) input elements read at all.
    pub ideal_loads: u64,
}

/// Counts staged and ideal input loads for `cfg` over `samples` output samples.
///
/// Only the tiling is checked; platform limits do not affect traffic.
pub fn count_loads(table: &DelayTable, cfg: &KernelConfig, samples: usize) -> Result<LoadCounts> {
    let d = table.num_dms();
    cfg.check_tiling(d, samples)?;
    let c = table.channels();
    let tile_time = cfg.tile_time();
    let tile_dm = cfg.tile_dm();
    let time_tiles = (samples / tile_time) as u64;

    let mut staged = 0u64;
    for dm0 in (0..d).step_by(tile_dm) {
        for ch in 0..c {
            let shifts = (dm0..dm0 + tile_dm).map(|dm| table.get(dm, ch));
            let (lo, hi) = shifts.fold((u32::MAX, 0), |(lo, hi), v| (lo.min(v), hi.max(v)));
            staged += time_tiles * (tile_time as u64 + (hi - lo) as u64);
        }
    }

    // Union of [shift, shift + samples) over all DMs, per channel.
    let mut ideal = 0u64;
    let mut shifts = Vec::with_capacity(d);
    for ch in 0..c {
        shifts.clear();
        shifts.extend((0..d).map(|dm| table.get(dm, ch) as u64));
        shifts.sort_unstable();
        shifts.dedup();
        let mut covered_to = 0u64;
        for &start in &shifts {
            let end = start + samples as u64;
            ideal += end - start.max(covered_to);
            covered_to = end;
        }
    }

    Ok(LoadCounts {
        staged_loads: staged,
        ideal_loads: ideal,
    })
}
