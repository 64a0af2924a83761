//! Filterbank data: synthetic dispersed pulses, raw channel-major files and a
//! SIGPROC-style header subset.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, DedispError, Result};
use crate::setup::{ObservationSetup, DEFAULT_TABLE_CAP_BYTES};

/// Name of the generator used for synthetic noise.
pub const NOISE_RNG: &str = "ChaCha8Rng";

/// Trial DM grid assigned to setups read from SIGPROC files, which carry none.
pub const SIGPROC_DM_STEP: f64 = 0.25;

/// Channelized time series, channel-major, channel 0 lowest in frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    setup: ObservationSetup,
    t: usize,
    data: Vec<f32>,
}

impl Filterbank {
    pub fn new(setup: ObservationSetup, t: usize, data: Vec<f32>) -> Result<Self> {
        setup.validate()?;
        let expected = (setup.channels as usize)
            .checked_mul(t)
            .ok_or_else(|| DedispError::Capacity("filterbank size overflows".into()))?;
        if data.len() != expected {
            return Err(invalid(format!(
                "filterbank needs {} x {t} = {expected} samples, got {}",
                setup.channels,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite sample at index {pos}")));
        }
        Ok(Self { setup, t, data })
    }

    pub fn zeros(setup: ObservationSetup, t: usize) -> Result<Self> {
        let n = setup.channels as usize * t;
        Self::new(setup, t, vec![0.0; n])
    }

    pub fn setup(&self) -> &ObservationSetup {
        &self.setup
    }

    pub fn channels(&self) -> usize {
        self.setup.channels as usize
    }

    pub fn samples(&self) -> usize {
        self.t
    }

    #[inline]
    pub fn channel(&self, ch: usize) -> &[f32] {
        &self.data[ch * self.t..(ch + 1) * self.t]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Multiplies every sample by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        let data = self.data.iter().map(|v| v * factor).collect();
        Self::new(self.setup.clone(), self.t, data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// DM of the injected pulse, pc/cm^3.
    pub dm: f64,
    /// Arrival time at the highest channel, seconds.
    pub t0: f64,
    /// Boxcar width, seconds.
    pub width: f64,
    pub amplitude: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl PulseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dm.is_finite() && self.dm >= 0.0) {
            return Err(invalid(format!(
                "pulse dm must be finite and >= 0, got {}",
                self.dm
            )));
        }
        if !(self.t0.is_finite() && self.t0 >= 0.0) {
            return Err(invalid(format!(
                "pulse t0 must be finite and >= 0, got {}",
                self.t0
            )));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(invalid(format!(
                "pulse width must be > 0, got {}",
                self.width
            )));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(invalid("pulse amplitude must be finite and >= 0"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(invalid("noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }

    /// Seconds from `t0` until the pulse has fully passed the lowest channel.
    pub fn sweep_seconds(&self, setup: &ObservationSetup) -> f64 {
        setup.channel_delay_seconds(self.dm, 0) + self.width
    }
}

/// Synthesises a dispersed boxcar pulse on top of Gaussian noise.
///
/// Each channel's boxcar starts at sample `round((t0 + delay) * s)` and lasts
/// `max(1, round(width * s))` samples, where `delay` is that channel's
/// dispersion delay for the pulse DM. This puts the onsets on the same grid
/// as the delay table, so a pulse injected at a trial DM lines up exactly.
pub fn generate(setup: &ObservationSetup, t: usize, pulse: &PulseSpec) -> Result<Filterbank> {
    setup.validate()?;
    pulse.validate()?;
    if t == 0 {
        return Err(invalid("t must be >= 1"));
    }
    let s = setup.samples_per_second as f64;
    let window = t as f64 / s;
    if pulse.t0 + pulse.sweep_seconds(setup) >= window {
        return Err(invalid(format!(
            "pulse sweep ends at {:.6} s, beyond the {:.6} s window",
            pulse.t0 + pulse.sweep_seconds(setup),
            window
        )));
    }
    let channels = setup.channels as usize;
    let bytes = (channels as u64).saturating_mul(t as u64).saturating_mul(4);
    if bytes > 4 * DEFAULT_TABLE_CAP_BYTES {
        return Err(DedispError::Capacity(format!(
            "filterbank of {bytes} bytes is too large"
        )));
    }

    let mut data = vec![0.0f32; channels * t];
    if pulse.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f32, pulse.noise_sigma)
            .map_err(|e| invalid(format!("noise distribution: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(pulse.seed);
        for v in data.iter_mut() {
            *v = normal.sample(&mut rng);
        }
    }

    if pulse.amplitude > 0.0 {
        let len = ((pulse.width * s).round() as usize).max(1);
        for ch in 0..channels {
            let onset =
                ((pulse.t0 + setup.channel_delay_seconds(pulse.dm, ch)) * s).round() as usize;
            let end = (onset + len).min(t);
            for v in &mut data[ch * t + onset.min(t)..ch * t + end] {
                *v += pulse.amplitude;
            }
        }
    }

    Filterbank::new(setup.clone(), t, data)
}

/// Writes channel-major little-endian f32 samples.
pub fn write_raw(fb: &Filterbank, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in fb.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_raw(path: impl AsRef<Path>, setup: &ObservationSetup, t: usize) -> Result<Filterbank> {
    let bytes = std::fs::read(path)?;
    decode_raw(&bytes, setup, t)
}

pub fn decode_raw(bytes: &[u8], setup: &ObservationSetup, t: usize) -> Result<Filterbank> {
    let expected = (setup.channels as u64) * (t as u64) * 4;
    if bytes.len() as u64 != expected {
        return Err(format_err(
            bytes.len().min(expected as usize) as u64,
            format!("raw file has {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Filterbank::new(setup.clone(), t, data)
}

#[derive(Debug, Clone, Copy)]
enum Value {
    Int,
    Double,
    Str,
}

fn keyword_kind(key: &str) -> Option<Value> {
    use Value::*;
    Some(match key {
        "nchans" | "nbits" | "nifs" | "telescope_id" | "machine_id" | "data_type" | "nbeams"
        | "ibeam" | "barycentric" | "pulsarcentric" => Int,
        "tsamp" | "fch1" | "foff" | "tstart" | "src_raj" | "src_dej" | "az_start" | "za_start"
        | "refdm" => Double,
        "source_name" | "rawdatafile" => Str,
        _ => return None,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                format_err(self.pos as u64, format!("need {n} bytes, header truncated"))
            })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn i32(&mut self) -> Result<i32> {
        let b = self.take(4)?;
        Ok(i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }

    fn string(&mut self) -> Result<String> {
        let at = self.pos as u64;
        let len = self.i32()?;
        if !(1..=80).contains(&len) {
            return Err(format_err(at, format!("implausible string length {len}")));
        }
        let b = self.take(len as usize)?;
        if !b.iter().all(|c| c.is_ascii() && !c.is_ascii_control()) {
            return Err(format_err(at + 4, "string is not printable ASCII"));
        }
        Ok(String::from_utf8_lossy(b).into_owned())
    }
}

/// Header fields understood by the reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigprocHeader {
    pub nchans: u32,
    pub tsamp: f64,
    pub fch1: f64,
    pub foff: f64,
    pub nbits: u32,
    pub nifs: u32,
    pub source_name: Option<String>,
}

pub fn read_sigproc(path: impl AsRef<Path>) -> Result<(ObservationSetup, Filterbank)> {
    let bytes = std::fs::read(path)?;
    parse_sigproc(&bytes)
}

/// Parses a SIGPROC filterbank image. Never panics; malformed input yields a
/// [`DedispError::Format`] carrying the offending byte offset.
pub fn parse_sigproc(bytes: &[u8]) -> Result<(ObservationSetup, Filterbank)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let first = cur.string()?;
    if first != "HEADER_START" {
        return Err(format_err(0, "missing HEADER_START sentinel"));
    }

    let mut nchans = None;
    let mut tsamp = None;
    let mut fch1 = None;
    let mut foff = None;
    let mut nbits = None;
    let mut nifs = None;
    let mut source_name = None;

    loop {
        let at = cur.pos as u64;
        let key = cur.string()?;
        if key == "HEADER_END" {
            break;
        }
        let value_at = cur.pos as u64;
        match (key.as_str(), keyword_kind(&key)) {
            ("nchans", _) => nchans = Some((cur.i32()?, value_at)),
            ("nbits", _) => nbits = Some((cur.i32()?, value_at)),
            ("nifs", _) => nifs = Some((cur.i32()?, value_at)),
            ("tsamp", _) => tsamp = Some((cur.f64()?, value_at)),
            ("fch1", _) => fch1 = Some((cur.f64()?, value_at)),
            ("foff", _) => foff = Some((cur.f64()?, value_at)),
            ("source_name", _) => source_name = Some(cur.string()?),
            (_, Some(Value::Int)) => {
                cur.i32()?;
            }
            (_, Some(Value::Double)) => {
                cur.f64()?;
            }
            (_, Some(Value::Str)) => {
                cur.string()?;
            }
            (other, None) => {
                return Err(format_err(at, format!("unsupported keyword '{other}'")));
            }
        }
    }
    let data_start = cur.pos as u64;
    let missing = |k: &str| format_err(data_start, format!("header lacks '{k}'"));

    let (nchans, at) = nchans.ok_or_else(|| missing("nchans"))?;
    if !(1..=1 << 20).contains(&nchans) {
        return Err(format_err(at, format!("unsupported nchans {nchans}")));
    }
    let (nbits, at) = nbits.ok_or_else(|| missing("nbits"))?;
    if nbits != 32 {
        return Err(format_err(
            at,
            format!("unsupported nbits {nbits}, only 32 is read"),
        ));
    }
    let (nifs, at) = nifs.unwrap_or((1, data_start));
    if nifs != 1 {
        return Err(format_err(
            at,
            format!("unsupported nifs {nifs}, only 1 is read"),
        ));
    }
    let (tsamp, at) = tsamp.ok_or_else(|| missing("tsamp"))?;
    if !(tsamp.is_finite() && tsamp > 0.0) {
        return Err(format_err(at, format!("invalid tsamp {tsamp}")));
    }
    let rate = (1.0 / tsamp).round();
    if !(rate >= 1.0 && rate <= u32::MAX as f64) {
        return Err(format_err(
            at,
            format!("tsamp {tsamp} gives unusable sample rate"),
        ));
    }
    let (fch1, at) = fch1.ok_or_else(|| missing("fch1"))?;
    if !(fch1.is_finite() && fch1 > 0.0) {
        return Err(format_err(at, format!("invalid fch1 {fch1}")));
    }
    let (foff, at) = foff.ok_or_else(|| missing("foff"))?;
    if !(foff.is_finite() && foff != 0.0) {
        return Err(format_err(at, format!("invalid foff {foff}")));
    }
    let f_last = fch1 + (nchans - 1) as f64 * foff;
    let f_min = fch1.min(f_last);
    if !(f_min.is_finite() && f_min > 0.0) {
        return Err(format_err(
            at,
            format!("band reaches non-positive frequency {f_min}"),
        ));
    }

    let nchans = nchans as usize;
    let payload = &bytes[cur.pos..];
    let frame = nchans * 4;
    if payload.is_empty() || !payload.len().is_multiple_of(frame) {
        return Err(format_err(
            data_start + (payload.len() - payload.len() % frame) as u64,
            format!(
                "payload of {} bytes is not a whole number of {frame}-byte samples",
                payload.len()
            ),
        ));
    }
    let t = payload.len() / frame;

    let setup = ObservationSetup {
        name: source_name.unwrap_or_else(|| "sigproc".into()),
        samples_per_second: rate as u32,
        channels: nchans as u32,
        f_min,
        channel_width: foff.abs(),
        dm_first: 0.0,
        dm_step: SIGPROC_DM_STEP,
    };

    // Time-major, highest frequency first when foff < 0; transpose into
    // channel-major with channel 0 lowest.
    let mut data = vec![0.0f32; nchans * t];
    for (j, sample) in payload.chunks_exact(frame).enumerate() {
        for (k, b) in sample.chunks_exact(4).enumerate() {
            let ch = if foff < 0.0 { nchans - 1 - k } else { k };
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(format_err(
                    data_start + (j * frame + k * 4) as u64,
                    "non-finite sample",
                ));
            }
            data[ch * t + j] = v;
        }
    }
    let fb = Filterbank::new(setup.clone(), t, data)?;
    Ok((setup, fb))
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as i32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Encodes a filterbank in the SIGPROC subset read by [`parse_sigproc`],
/// highest frequency first.
pub fn encode_sigproc(fb: &Filterbank) -> Vec<u8> {
    let setup = fb.setup();
    let c = fb.channels();
    let mut out = Vec::with_capacity(256 + c * fb.samples() * 4);
    put_str(&mut out, "HEADER_START");
    put_str(&mut out, "source_name");
    put_str(&mut out, &setup.name);
    put_str(&mut out, "nchans");
    out.extend_from_slice(&(c as i32).to_le_bytes());
    put_str(&mut out, "tsamp");
    out.extend_from_slice(&(1.0 / setup.samples_per_second as f64).to_le_bytes());
    put_str(&mut out, "fch1");
    out.extend_from_slice(&setup.f_high().to_le_bytes());
    put_str(&mut out, "foff");
    out.extend_from_slice(&(-setup.channel_width).to_le_bytes());
    put_str(&mut out, "nbits");
    out.extend_from_slice(&32i32.to_le_bytes());
    put_str(&mut out, "nifs");
    out.extend_from_slice(&1i32.to_le_bytes());
    put_str(&mut out, "HEADER_END");
    for j in 0..fb.samples() {
        for ch in (0..c).rev() {
            out.extend_from_slice(&fb.channel(ch)[j].to_le_bytes());
        }
    }
    out
}

pub fn write_sigproc(fb: &Filterbank, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_sigproc(fb))?;
    Ok(())
}
