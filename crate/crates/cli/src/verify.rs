//! Self-check suites on small instances. Output depends only on the seed.

use anyhow::Result;
use dedisp::{
    dedisperse_reference, dedisperse_tiled, enumerate_configs, generate, DelayTable, Filterbank,
    KernelLimits, ObservationSetup, PulseSpec, WorkerPool,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{VerifyArgs, VerifyFailed};

const INSTANCES: usize = 8;
const CONFIGS_PER_INSTANCE: usize = 24;
const MAX_DETAILS: usize = 5;

#[derive(Default)]
struct Suite {
    name: &'static str,
    cases: usize,
    failures: Vec<String>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            ..Default::default()
        }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures.push(detail());
        }
    }
}

fn mini_setup(rng: &mut ChaCha8Rng, k: usize) -> ObservationSetup {
    let s = *[16u32, 32, 48, 64].choose(rng).unwrap();
    let c = rng.gen_range(1..=24);
    let f_min = rng.gen_range(100.0..1500.0);
    let width = f_min * rng.gen_range(0.02..0.3) / c as f64;
    ObservationSetup {
        name: format!("mini-{k}"),
        samples_per_second: s,
        channels: c,
        f_min,
        channel_width: width,
        dm_first: 0.0,
        dm_step: rng.gen_range(0.05..2.0),
    }
}

/// Shifts off by one in a single entry, leaving the shape intact.
fn faulty(table: &DelayTable) -> Result<DelayTable> {
    let mut delays = table.as_slice().to_vec();
    let at = delays.len() / 2;
    delays[at] += 1;
    Ok(DelayTable::from_raw(
        table.setup(),
        table.num_dms(),
        delays,
    )?)
}

fn equivalence(rng: &mut ChaCha8Rng, pool: &WorkerPool, inject: bool) -> Result<Suite> {
    let mut suite = Suite::new("equivalence");
    let limits = KernelLimits::default();
    for k in 0..INSTANCES {
        let setup = mini_setup(rng, k);
        let d = rng.gen_range(1..=16);
        let table = DelayTable::build(&setup, d)?;
        let tiled_table = if inject {
            faulty(&table)?
        } else {
            table.clone()
        };
        // one spare sample so a perturbed table stays in bounds
        let t = setup.samples_per_second as usize + tiled_table.max_delay() as usize + 1;
        let data = (0..setup.channels as usize * t)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        let fb = Filterbank::new(setup.clone(), t, data)?;
        let reference = dedisperse_reference(&fb, &table)?;

        let space = enumerate_configs(d, setup.samples_per_second as usize, &limits)?;
        let mut picked: Vec<_> = space
            .choose_multiple(rng, CONFIGS_PER_INSTANCE)
            .copied()
            .collect();
        picked.sort();
        for cfg in picked {
            let tiled = dedisperse_tiled(&fb, &tiled_table, &cfg, &limits, pool)?;
            let mismatches = tiled
                .as_slice()
                .iter()
                .zip(reference.as_slice())
                .filter(|(a, b)| a.to_bits() != b.to_bits())
                .count();
            suite.check(mismatches == 0, || {
                format!(
                    "{} d={d} config {cfg}: {mismatches} outputs differ",
                    setup.name
                )
            });
        }
    }
    Ok(suite)
}

fn monotonicity(rng: &mut ChaCha8Rng) -> Result<Suite> {
    let mut suite = Suite::new("monotonicity");
    let mut setups = dedisp::builtin_setups();
    setups.extend((0..INSTANCES).map(|k| mini_setup(rng, k)));
    for setup in setups {
        let table = DelayTable::build(&setup, 64)?;
        let c = table.channels();
        let mut fault = None;
        for dm in 0..table.num_dms() {
            if table.get(dm, c - 1) != 0 {
                fault.get_or_insert(format!("dm {dm}: highest channel has a nonzero shift"));
            }
            for ch in 1..c {
                if table.get(dm, ch - 1) < table.get(dm, ch) {
                    fault.get_or_insert(format!(
                        "dm {dm}: shift rises from channel {} to {ch}",
                        ch - 1
                    ));
                }
            }
            if dm > 0 {
                for ch in 0..c {
                    if table.get(dm - 1, ch) > table.get(dm, ch) {
                        fault.get_or_insert(format!(
                            "channel {ch}: shift falls from dm {} to {dm}",
                            dm - 1
                        ));
                    }
                }
            }
        }
        suite.check(fault.is_none(), || {
            format!("{}: {}", setup.name, fault.unwrap())
        });
    }
    Ok(suite)
}

fn pulse_recovery(rng: &mut ChaCha8Rng, pool: &WorkerPool) -> Result<Suite> {
    let mut suite = Suite::new("pulse-recovery");
    let limits = KernelLimits::default();
    let setup = ObservationSetup {
        name: "pulse".into(),
        samples_per_second: 256,
        channels: 32,
        f_min: 200.0,
        channel_width: 1.0,
        dm_first: 0.0,
        dm_step: 1.0,
    };
    let d = 16;
    let table = DelayTable::build(&setup, d)?;
    let space = enumerate_configs(d, 256, &limits)?;
    for case in 0..INSTANCES {
        let k = rng.gen_range(0..d);
        let noisy = case % 2 == 1;
        let pulse = PulseSpec {
            dm: setup.trial_dm(k),
            t0: rng.gen_range(12..128) as f64 / 256.0,
            width: 1.0 / 256.0,
            amplitude: if noisy { 4.0 } else { 1.0 },
            noise_sigma: if noisy { 1.0 } else { 0.0 },
            seed: rng.gen(),
        };
        let fb = generate(&setup, 2 * 256, &pulse)?;
        let cfg = *space.choose(rng).unwrap();
        let out = dedisperse_tiled(&fb, &table, &cfg, &limits, pool)?;
        let (dm, col, _) = out.peak();
        let onset = (pulse.t0 * 256.0).round() as usize;
        let ok = if noisy {
            dm.abs_diff(k) <= 1 && col.abs_diff(onset) <= 1
        } else {
            dm == k && col == onset
        };
        suite.check(ok, || {
            format!("pulse at trial {k}, sample {onset}: peak at trial {dm}, sample {col} (config {cfg})")
        });
    }
    Ok(suite)
}

pub fn run(a: &VerifyArgs) -> Result<()> {
    let pool = WorkerPool::new(a.threads)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let suites = [
        equivalence(&mut rng, &pool, a.inject_fault)?,
        monotonicity(&mut rng)?,
        pulse_recovery(&mut rng, &pool)?,
    ];

    println!("{:<16} {:>6} {:>9}  status", "suite", "cases", "failures");
    for s in &suites {
        println!(
            "{:<16} {:>6} {:>9}  {}",
            s.name,
            s.cases,
            s.failures.len(),
            if s.failures.is_empty() {
                "PASS"
            } else {
                "FAIL"
            }
        );
    }
    for s in suites.iter().filter(|s| !s.failures.is_empty()) {
        println!("\n{} failures:", s.name);
        for f in s.failures.iter().take(MAX_DETAILS) {
            println!("  {f}");
        }
        if s.failures.len() > MAX_DETAILS {
            println!("  ... and {} more", s.failures.len() - MAX_DETAILS);
        }
    }
    if suites.iter().any(|s| !s.failures.is_empty()) {
        return Err(VerifyFailed.into());
    }
    println!("\nall suites passed (seed {})", a.seed);
    Ok(())
}
