//! Observational setups, dispersion delays and problem sizing.
//!
//! Channel `i` of a setup is centred on `f_min + i * channel_width` MHz. All
//! delays are measured relative to the highest channel, so the last column of
//! every [`DelayTable`] is zero.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, DedispError, Result};

/// Dispersion constant in s MHz^2 cm^3 / pc, as used throughout this crate.
///
/// The more precise value is 4148.808; the rounded value keeps delay tables
/// reproducible against published figures.
pub const DISPERSION_CONSTANT: f64 = 4150.0;

/// Default cap on the size of a delay table, in bytes.
pub const DEFAULT_TABLE_CAP_BYTES: u64 = 1 << 30;

/// Bytes per stored sample, output element and delay entry.
pub const BYTES_PER_ELEMENT: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSetup {
    pub name: String,
    pub samples_per_second: u32,
    pub channels: u32,
    /// Centre frequency of channel 0, MHz.
    pub f_min: f64,
    /// MHz, positive.
    pub channel_width: f64,
    /// First trial DM, pc/cm^3.
    pub dm_first: f64,
    /// Increment between trial DMs, pc/cm^3.
    pub dm_step: f64,
}

impl ObservationSetup {
    pub fn apertif() -> Self {
        Self {
            name: "Apertif".into(),
            samples_per_second: 20_000,
            channels: 1_024,
            f_min: 1_420.0,
            channel_width: 0.29,
            dm_first: 0.0,
            dm_step: 0.25,
        }
    }

    pub fn lofar() -> Self {
        Self {
            name: "LOFAR".into(),
            samples_per_second: 200_000,
            channels: 32,
            f_min: 138.0,
            channel_width: 0.19,
            dm_first: 0.0,
            dm_step: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.f_min, self.channel_width, self.dm_first, self.dm_step]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid(format!(
                "setup '{}' has non-finite fields",
                self.name
            )));
        }
        if self.f_min <= 0.0 {
            return Err(invalid(format!("f_min must be > 0, got {}", self.f_min)));
        }
        if self.channel_width <= 0.0 {
            return Err(invalid(format!(
                "channel_width must be > 0, got {}",
                self.channel_width
            )));
        }
        if self.channels == 0 {
            return Err(invalid("channels must be >= 1"));
        }
        if self.samples_per_second == 0 {
            return Err(invalid("samples_per_second must be >= 1"));
        }
        if self.dm_step <= 0.0 {
            return Err(invalid(format!(
                "dm_step must be > 0, got {}",
                self.dm_step
            )));
        }
        if self.dm_first < 0.0 {
            return Err(invalid(format!(
                "dm_first must be >= 0, got {}",
                self.dm_first
            )));
        }
        Ok(())
    }

    pub fn channel_frequency(&self, channel: usize) -> f64 {
        self.f_min + channel as f64 * self.channel_width
    }

    /// Highest channel centre frequency, the delay reference.
    pub fn f_high(&self) -> f64 {
        self.channel_frequency(self.channels as usize - 1)
    }

    pub fn trial_dm(&self, index: usize) -> f64 {
        self.dm_first + index as f64 * self.dm_step
    }

    /// Delay of `channel` relative to the highest channel for `dm`, seconds.
    pub fn channel_delay_seconds(&self, dm: f64, channel: usize) -> f64 {
        // Inputs are validated by construction, so the unchecked form is safe.
        dispersion_delay(dm, self.channel_frequency(channel), self.f_high())
    }

    /// Integer sample shift for `channel` at `dm`.
    pub fn channel_delay_samples(&self, dm: f64, channel: usize) -> u32 {
        let samples = self.channel_delay_seconds(dm, channel) * self.samples_per_second as f64;
        samples.round() as u32
    }

    /// Parses a `key=value` setup file. Blank lines and `#` comments are ignored.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut name = None;
        let mut sps = None;
        let mut channels = None;
        let mut f_min = None;
        let mut width = None;
        let mut dm_first = None;
        let mut dm_step = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| invalid(format!("line {}: bad {what} '{value}'", lineno + 1));
            match key {
                "name" => name = Some(value.to_string()),
                "samples_per_second" => sps = Some(value.parse().map_err(|_| bad(key))?),
                "channels" => channels = Some(value.parse().map_err(|_| bad(key))?),
                "f_min" => f_min = Some(value.parse().map_err(|_| bad(key))?),
                "channel_width" => width = Some(value.parse().map_err(|_| bad(key))?),
                "dm_first" => dm_first = Some(value.parse().map_err(|_| bad(key))?),
                "dm_step" => dm_step = Some(value.parse().map_err(|_| bad(key))?),
                other => {
                    return Err(invalid(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }

        let missing = |k: &str| invalid(format!("setup file is missing '{k}'"));
        let setup = Self {
            name: name.ok_or_else(|| missing("name"))?,
            samples_per_second: sps.ok_or_else(|| missing("samples_per_second"))?,
            channels: channels.ok_or_else(|| missing("channels"))?,
            f_min: f_min.ok_or_else(|| missing("f_min"))?,
            channel_width: width.ok_or_else(|| missing("channel_width"))?,
            dm_first: dm_first.ok_or_else(|| missing("dm_first"))?,
            dm_step: dm_step.ok_or_else(|| missing("dm_step"))?,
        };
        setup.validate()?;
        Ok(setup)
    }

    pub fn to_config(&self) -> String {
        format!(
            "name={}\nsamples_per_second={}\nchannels={}\nf_min={}\nchannel_width={}\ndm_first={}\ndm_step={}\n",
            self.name,
            self.samples_per_second,
            self.channels,
            self.f_min,
            self.channel_width,
            self.dm_first,
            self.dm_step
        )
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_config(&text)
    }

    /// Resolves a builtin name (case-insensitive) or a path to a setup file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(setup) = lookup(name_or_path) {
            return Ok(setup);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::from_file(path);
        }
        Err(invalid(format!(
            "'{name_or_path}' is neither a builtin setup nor a readable file"
        )))
    }
}

impl fmt::Display for ObservationSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} ch, {:.3}-{:.3} MHz, {} samples/s, DM {}+{}k)",
            self.name,
            self.channels,
            self.f_min,
            self.f_high(),
            self.samples_per_second,
            self.dm_first,
            self.dm_step
        )
    }
}

pub fn builtin_setups() -> Vec<ObservationSetup> {
    vec![ObservationSetup::apertif(), ObservationSetup::lofar()]
}

pub fn lookup(name: &str) -> Option<ObservationSetup> {
    builtin_setups()
        .into_iter()
        .find(|s| s.name.eq_ignore_ascii_case(name))
}

fn dispersion_delay(dm: f64, f_i: f64, f_h: f64) -> f64 {
    DISPERSION_CONSTANT * dm * (1.0 / (f_i * f_i) - 1.0 / (f_h * f_h))
}

/// Dispersion delay in seconds of frequency `f_i` relative to `f_h` (both MHz).
pub fn delay_seconds(dm: f64, f_i: f64, f_h: f64) -> Result<f64> {
    if !(dm.is_finite() && f_i.is_finite() && f_h.is_finite()) {
        return Err(invalid("delay inputs must be finite"));
    }
    if dm < 0.0 {
        return Err(invalid(format!("dm must be >= 0, got {dm}")));
    }
    if f_i <= 0.0 || f_h <= 0.0 {
        return Err(invalid("frequencies must be > 0"));
    }
    if f_i > f_h {
        return Err(invalid(format!("f_i ({f_i}) must not exceed f_h ({f_h})")));
    }
    Ok(dispersion_delay(dm, f_i, f_h))
}

/// Per-(DM, channel) integer sample shifts, stored DM-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTable {
    setup: ObservationSetup,
    num_dms: usize,
    delays: Vec<u32>,
    max_delay: u32,
}

impl DelayTable {
    pub fn build(setup: &ObservationSetup, num_dms: usize) -> Result<Self> {
        Self::build_capped(setup, num_dms, DEFAULT_TABLE_CAP_BYTES)
    }

    pub fn build_capped(setup: &ObservationSetup, num_dms: usize, cap_bytes: u64) -> Result<Self> {
        setup.validate()?;
        let channels = setup.channels as usize;
        let entries = check_table_size(num_dms, channels, cap_bytes)?;
        let mut delays = Vec::with_capacity(entries);
        for dm_index in 0..num_dms {
            let dm = setup.trial_dm(dm_index);
            delays.extend((0..channels).map(|ch| setup.channel_delay_samples(dm, ch)));
        }
        Ok(Self::from_parts(setup.clone(), num_dms, delays))
    }

    /// Table with every shift zero, as if all trial DMs were 0.
    pub fn zero_dm(setup: &ObservationSetup, num_dms: usize) -> Result<Self> {
        setup.validate()?;
        let entries = check_table_size(num_dms, setup.channels as usize, DEFAULT_TABLE_CAP_BYTES)?;
        Ok(Self::from_parts(setup.clone(), num_dms, vec![0; entries]))
    }

    /// Wraps externally computed shifts. Only the shape is checked.
    pub fn from_raw(setup: &ObservationSetup, num_dms: usize, delays: Vec<u32>) -> Result<Self> {
        setup.validate()?;
        if num_dms == 0 {
            return Err(invalid("num_dms must be >= 1"));
        }
        if delays.len() != num_dms * setup.channels as usize {
            return Err(invalid(format!(
                "expected {} delays, got {}",
                num_dms * setup.channels as usize,
                delays.len()
            )));
        }
        Ok(Self::from_parts(setup.clone(), num_dms, delays))
    }

    fn from_parts(setup: ObservationSetup, num_dms: usize, delays: Vec<u32>) -> Self {
        let max_delay = delays.iter().copied().max().unwrap_or(0);
        Self {
            setup,
            num_dms,
            delays,
            max_delay,
        }
    }

    pub fn setup(&self) -> &ObservationSetup {
        &self.setup
    }

    pub fn num_dms(&self) -> usize {
        self.num_dms
    }

    pub fn channels(&self) -> usize {
        self.setup.channels as usize
    }

    pub fn max_delay(&self) -> u32 {
        self.max_delay
    }

    #[inline]
    pub fn get(&self, dm: usize, channel: usize) -> u32 {
        self.delays[dm * self.channels() + channel]
    }

    /// Shifts of every channel for one trial DM.
    #[inline]
    pub fn row(&self, dm: usize) -> &[u32] {
        let c = self.channels();
        &self.delays[dm * c..(dm + 1) * c]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.delays
    }

    pub fn is_all_zero(&self) -> bool {
        self.max_delay == 0
    }
}

fn check_table_size(num_dms: usize, channels: usize, cap_bytes: u64) -> Result<usize> {
    if num_dms == 0 {
        return Err(invalid("num_dms must be >= 1"));
    }
    let entries = num_dms
        .checked_mul(channels)
        .ok_or_else(|| DedispError::Capacity("delay table size overflows".into()))?;
    let bytes = (entries as u64).saturating_mul(BYTES_PER_ELEMENT);
    if bytes > cap_bytes {
        return Err(DedispError::Capacity(format!(
            "delay table of {num_dms} x {channels} needs {bytes} bytes, cap is {cap_bytes}"
        )));
    }
    Ok(entries)
}

/// One input instance: a setup plus a number of trial DMs, with derived sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub setup: ObservationSetup,
    pub num_dms: usize,
    /// Largest shift in samples over the whole DM range.
    pub max_delay: u32,
    /// Input samples per channel.
    pub t: usize,
    /// Additions performed by one dedispersion pass, d * s * c.
    pub flop: u64,
}

impl ProblemInstance {
    pub fn samples_per_second(&self) -> usize {
        self.setup.samples_per_second as usize
    }

    pub fn channels(&self) -> usize {
        self.setup.channels as usize
    }

    pub fn flop_per_dm(&self) -> u64 {
        self.setup.samples_per_second as u64 * self.setup.channels as u64
    }

    pub fn input_bytes(&self) -> u64 {
        self.channels() as u64 * self.t as u64 * BYTES_PER_ELEMENT
    }

    pub fn output_bytes(&self) -> u64 {
        self.num_dms as u64 * self.samples_per_second() as u64 * BYTES_PER_ELEMENT
    }

    pub fn table_bytes(&self) -> u64 {
        self.num_dms as u64 * self.channels() as u64 * BYTES_PER_ELEMENT
    }

    /// Input, output and delay table together.
    pub fn footprint_bytes(&self) -> u64 {
        self.input_bytes()
            .saturating_add(self.output_bytes())
            .saturating_add(self.table_bytes())
    }
}

pub fn instance_sizing(setup: &ObservationSetup, num_dms: usize) -> Result<ProblemInstance> {
    setup.validate()?;
    if num_dms == 0 {
        return Err(invalid("num_dms must be >= 1"));
    }
    // Shifts grow with DM and shrink with frequency, so the extreme entry is
    // the lowest channel at the last trial DM.
    let max_delay = setup.channel_delay_samples(setup.trial_dm(num_dms - 1), 0);
    sizing_with_max_delay(setup, num_dms, max_delay)
}

/// Sizing for a table whose maximum shift is already known, e.g. a zero-DM table.
pub fn sizing_with_max_delay(
    setup: &ObservationSetup,
    num_dms: usize,
    max_delay: u32,
) -> Result<ProblemInstance> {
    let overflow = || DedispError::Capacity(format!("sizing of {num_dms} DMs overflows"));
    let s = setup.samples_per_second as u64;
    let span = s.checked_add(max_delay as u64).ok_or_else(overflow)?;
    let seconds = span.div_ceil(s);
    let t = s.checked_mul(seconds).ok_or_else(overflow)?;
    let flop = (num_dms as u64)
        .checked_mul(s)
        .and_then(|v| v.checked_mul(setup.channels as u64))
        .ok_or_else(overflow)?;
    Ok(ProblemInstance {
        setup: setup.clone(),
        num_dms,
        max_delay,
        t: usize::try_from(t).map_err(|_| overflow())?,
        flop,
    })
}

/// Powers of two from 2 to 4096.
pub fn default_instances() -> Vec<usize> {
    (1..=12).map(|p| 1usize << p).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mini() -> ObservationSetup {
        ObservationSetup {
            name: "mini".into(),
            samples_per_second: 64,
            channels: 16,
            f_min: 120.0,
            channel_width: 2.0,
            dm_first: 0.0,
            dm_step: 0.5,
        }
    }

    #[test]
    fn delay_zero_cases() {
        assert_eq!(delay_seconds(0.0, 138.0, 145.0).unwrap(), 0.0);
        assert_eq!(delay_seconds(10.0, 1720.0, 1720.0).unwrap(), 0.0);
    }

    #[test]
    fn delay_apertif_band_edges() {
        // 4150 * 0.25 * (1/1420^2 - 1/1720^2), evaluated by hand in higher precision.
        let expected = 1037.5 * (1.0 / 2_016_400.0 - 1.0 / 2_958_400.0);
        assert_abs_diff_eq!(expected, 1.6383e-4, epsilon = 1e-8);
        let got = delay_seconds(0.25, 1420.0, 1720.0).unwrap();
        assert_abs_diff_eq!(got, 1.6383e-4, epsilon = 1e-8);
    }

    #[test]
    fn delay_rejects_bad_inputs() {
        assert!(delay_seconds(-1.0, 100.0, 200.0).is_err());
        assert!(delay_seconds(1.0, 0.0, 200.0).is_err());
        assert!(delay_seconds(1.0, 300.0, 200.0).is_err());
        assert!(delay_seconds(f64::NAN, 100.0, 200.0).is_err());
        assert!(delay_seconds(1.0, 100.0, f64::INFINITY).is_err());
    }

    #[test]
    fn delay_linear_in_dm() {
        for &dm in &[0.25, 1.0, 17.5, 300.0] {
            let one = delay_seconds(dm, 1420.0, 1720.0).unwrap();
            let two = delay_seconds(2.0 * dm, 1420.0, 1720.0).unwrap();
            assert_eq!(two, 2.0 * one);
        }
    }

    #[test]
    fn builtin_constants() {
        let a = lookup("Apertif").unwrap();
        assert_eq!(a.samples_per_second, 20_000);
        assert_eq!(a.channels, 1_024);
        assert_eq!(a.dm_step, 0.25);
        let l = lookup("lofar").unwrap();
        assert_eq!(l.channels, 32);
        assert_eq!(l.samples_per_second, 200_000);
        assert_eq!(builtin_setups().len(), 2);
        assert!(lookup("GBT").is_none());
    }

    #[test]
    fn lofar_single_dm_table_is_zero() {
        let t = DelayTable::build(&ObservationSetup::lofar(), 1).unwrap();
        assert!(t.as_slice().iter().all(|&d| d == 0));
        assert_eq!(t.max_delay(), 0);
    }

    #[test]
    fn apertif_first_step_entry() {
        let t = DelayTable::build(&ObservationSetup::apertif(), 2).unwrap();
        assert_eq!(t.get(1, 0), 3);
    }

    #[test]
    fn highest_channel_column_is_zero() {
        for setup in builtin_setups().into_iter().chain([mini()]) {
            let t = DelayTable::build(&setup, 64).unwrap();
            let last = t.channels() - 1;
            assert!((0..t.num_dms()).all(|dm| t.get(dm, last) == 0));
            assert!(t.row(0).iter().all(|&d| d == 0));
        }
    }

    #[test]
    fn table_monotone_full_scan() {
        for setup in builtin_setups().into_iter().chain([mini()]) {
            let t = DelayTable::build(&setup, 48).unwrap();
            for dm in 0..t.num_dms() {
                for ch in 1..t.channels() {
                    assert!(t.get(dm, ch - 1) >= t.get(dm, ch));
                }
            }
            for ch in 0..t.channels() {
                for dm in 1..t.num_dms() {
                    assert!(t.get(dm - 1, ch) <= t.get(dm, ch));
                }
            }
        }
    }

    #[test]
    fn table_cap_enforced() {
        let err = DelayTable::build_capped(&ObservationSetup::apertif(), 4096, 1024).unwrap_err();
        assert!(matches!(err, DedispError::Capacity(_)));
    }

    #[test]
    fn flop_per_dm_matches_published_rates() {
        let a = instance_sizing(&ObservationSetup::apertif(), 7).unwrap();
        assert_eq!(a.flop_per_dm(), 20_480_000);
        assert_eq!(a.flop, 7 * 20_480_000);
        let l = instance_sizing(&ObservationSetup::lofar(), 3).unwrap();
        assert_eq!(l.flop_per_dm(), 6_400_000);
    }

    #[test]
    fn sizing_without_shift_is_one_second() {
        let p = sizing_with_max_delay(&ObservationSetup::apertif(), 64, 0).unwrap();
        assert_eq!(p.t, 20_000);
        let p = instance_sizing(&ObservationSetup::lofar(), 1).unwrap();
        assert_eq!(p.t, 200_000);
    }

    #[test]
    fn sizing_matches_table_max_delay() {
        for setup in builtin_setups() {
            for d in [2, 64, 513] {
                let p = instance_sizing(&setup, d).unwrap();
                let t = DelayTable::build(&setup, d).unwrap();
                assert_eq!(p.max_delay, t.max_delay());
                let s = setup.samples_per_second as usize;
                assert_eq!(p.t % s, 0);
                assert!(p.t >= s + p.max_delay as usize);
                assert!(p.t - s < p.max_delay as usize + s);
            }
        }
    }

    #[test]
    fn sizing_rejects_zero_dms() {
        assert!(instance_sizing(&ObservationSetup::lofar(), 0).is_err());
    }

    #[test]
    fn config_round_trip_and_errors() {
        let s = mini();
        let parsed = ObservationSetup::parse_config(&s.to_config()).unwrap();
        assert_eq!(parsed, s);

        let text = "# comment\nname = x\nsamples_per_second=10\nchannels=4\nf_min=100\nchannel_width=1\ndm_first=0\ndm_step=1 # trailing\n";
        assert_eq!(ObservationSetup::parse_config(text).unwrap().channels, 4);

        assert!(ObservationSetup::parse_config("name=x\n").is_err());
        assert!(ObservationSetup::parse_config(&format!("{}colour=red\n", s.to_config())).is_err());
        let negative = s.to_config().replace("channel_width=2", "channel_width=-2");
        assert!(ObservationSetup::parse_config(&negative).is_err());
    }

    #[test]
    fn default_sweep_has_twelve_instances() {
        let v = default_instances();
        assert_eq!(v.len(), 12);
        assert_eq!(v[0], 2);
        assert_eq!(v[11], 4096);
    }
}
