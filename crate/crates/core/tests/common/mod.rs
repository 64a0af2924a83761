#![allow(dead_code)]

use dedisp::{DelayTable, Filterbank, ObservationSetup};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn setup(name: &str, s: u32, c: u32, f_min: f64, width: f64, dm_step: f64) -> ObservationSetup {
    ObservationSetup {
        name: name.into(),
        samples_per_second: s,
        channels: c,
        f_min,
        channel_width: width,
        dm_first: 0.0,
        dm_step,
    }
}

/// A random band somewhere between LOFAR-like and Apertif-like frequencies.
pub fn random_setup(rng: &mut ChaCha8Rng, s: u32, c: u32) -> ObservationSetup {
    let f_min = rng.gen_range(100.0..1500.0);
    let band = f_min * rng.gen_range(0.02..0.3);
    let width = band / c as f64;
    let dm_step = rng.gen_range(0.05..2.0);
    setup("random", s, c, f_min, width, dm_step)
}

/// Input covering `table`, samples drawn uniformly from `[lo, hi)`.
pub fn random_input(rng: &mut ChaCha8Rng, table: &DelayTable, lo: f32, hi: f32) -> Filterbank {
    let setup = table.setup().clone();
    let t = setup.samples_per_second as usize + table.max_delay() as usize;
    let data = (0..setup.channels as usize * t)
        .map(|_| rng.gen_range(lo..hi))
        .collect();
    Filterbank::new(setup, t, data).unwrap()
}

/// Distance in units in the last place between two finite f32.
pub fn ulps(a: f32, b: f32) -> u32 {
    if a == b {
        return 0;
    }
    let key = |v: f32| {
        let bits = v.to_bits() as i32 as i64;
        if bits < 0 {
            i32::MIN as i64 - bits
        } else {
            bits
        }
    };
    (key(a) - key(b)).unsigned_abs() as u32
}

/// Double-precision brute force: sum_ch input[ch][j + shift(ch, dm)],
/// recomputing shifts straight from the dispersion relation.
pub fn oracle_f64(fb: &Filterbank, num_dms: usize) -> Vec<f64> {
    let setup = fb.setup();
    let s = setup.samples_per_second as usize;
    let c = setup.channels as usize;
    let f_h = setup.f_min + (c - 1) as f64 * setup.channel_width;
    let mut out = vec![0.0f64; num_dms * s];
    for dm_index in 0..num_dms {
        let dm = setup.dm_first + dm_index as f64 * setup.dm_step;
        for ch in 0..c {
            let f = setup.f_min + ch as f64 * setup.channel_width;
            let k = 4150.0 * dm * (1.0 / (f * f) - 1.0 / (f_h * f_h));
            let shift = (k * s as f64).round() as usize;
            let row = fb.channel(ch);
            for j in 0..s {
                out[dm_index * s + j] += row[j + shift] as f64;
            }
        }
    }
    out
}

pub fn verdict(id: &str, name: &str, ok: bool, detail: &str) {
    println!(
        "[{}] {id} {name}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "{id} {name} failed: {detail}");
}
