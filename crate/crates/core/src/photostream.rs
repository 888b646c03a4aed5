//! Thermal photon time-tag synthesis and detector models.
//!
//! A stationary circular complex Gaussian field with spectrum S(ν) is
//! synthesized block by block; its intensity drives a doubly stochastic
//! Poisson process whose events are timestamped at 1 ps resolution.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::coherence::DetectorResponse;
use crate::spectral::SpectralDensity;
use crate::{Error, Result};

/// Timestamp resolution of every [`EventStream`], in seconds.
pub const RESOLUTION: f64 = 1e-12;

/// Smallest allowed synthesis block.
pub const MIN_BLOCK_LENGTH: usize = 1 << 14;

/// Largest allowed mean number of events per field sample.
pub const MAX_OCCUPANCY: f64 = 0.1;

/// Seed role tags. The values are part of the reproducibility contract.
pub mod role {
    pub const FIELD: u64 = 1;
    pub const EVENTS: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const DETECTOR_A: u64 = 4;
    pub const DETECTOR_B: u64 = 5;
    pub const CROSSTALK: u64 = 6;
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(master, role, index)` using splitmix64 finalizers.
pub fn derive_seed(master: u64, role: u64, index: u64) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let r = mix64(role.wrapping_add(GOLDEN));
    let i = mix64(index.wrapping_mul(GOLDEN).wrapping_add(r));
    mix64(master ^ r ^ i.rotate_left(17))
}

pub fn rng_for(master: u64, role: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, role, index))
}

pub fn seconds_to_ps(t: f64) -> u64 {
    (t / RESOLUTION).round() as u64
}

/// Sampled complex field on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrace {
    dt: f64,
    samples: Vec<Complex64>,
}

impl FieldTrace {
    pub fn new(dt: f64, samples: Vec<Complex64>) -> Result<Self> {
        if !(dt > 0.0) || samples.len() < 2 {
            return Err(Error::domain("field trace needs dt > 0 and at least 2 samples"));
        }
        let trace = Self { dt, samples };
        if !(trace.mean_intensity() > 0.0) {
            return Err(Error::domain("field trace has zero mean intensity"));
        }
        Ok(trace)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn mean_intensity(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }
}

/// Sorted picosecond timestamps of one detector channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    channel: u16,
    timestamps: Vec<u64>,
}

impl EventStream {
    pub fn new(channel: u16, timestamps: Vec<u64>) -> Result<Self> {
        if let Some(index) = first_unsorted(&timestamps) {
            return Err(Error::Unsorted { index });
        }
        Ok(Self { channel, timestamps })
    }

    pub fn from_unsorted(channel: u16, mut timestamps: Vec<u64>) -> Self {
        timestamps.sort_unstable();
        Self { channel, timestamps }
    }

    pub fn empty(channel: u16) -> Self {
        Self {
            channel,
            timestamps: Vec::new(),
        }
    }

    pub fn channel(&self) -> u16 {
        self.channel
    }

    pub fn with_channel(mut self, channel: u16) -> Self {
        self.channel = channel;
        self
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn into_timestamps(self) -> Vec<u64> {
        self.timestamps
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn resolution(&self) -> f64 {
        RESOLUTION
    }

    /// Adds `offset` picoseconds to every timestamp.
    pub fn shifted(&self, offset: u64) -> Self {
        Self {
            channel: self.channel,
            timestamps: self.timestamps.iter().map(|t| t + offset).collect(),
        }
    }
}

pub(crate) fn first_unsorted(ts: &[u64]) -> Option<usize> {
    ts.windows(2).position(|w| w[1] < w[0]).map(|i| i + 1)
}

/// Parameters shared by field and event synthesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisConfig {
    pub master_seed: u64,
    /// Seconds of light to synthesize.
    pub duration: f64,
    /// Photon rate reaching each of the two detectors of a 50/50 splitter.
    pub mean_rate: f64,
    /// Field samples per independent synthesis block.
    pub block_length: usize,
    /// Number of independent, equally bright modes summed in intensity.
    pub modes: u32,
}

impl SynthesisConfig {
    pub fn new(master_seed: u64, duration: f64, mean_rate: f64, block_length: usize) -> Result<Self> {
        let cfg = Self {
            master_seed,
            duration,
            mean_rate,
            block_length,
            modes: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_modes(mut self, modes: u32) -> Result<Self> {
        self.modes = modes;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::domain("synthesis duration must be positive"));
        }
        if !(self.mean_rate > 0.0) || !self.mean_rate.is_finite() {
            return Err(Error::domain("synthesis mean rate must be positive"));
        }
        if self.block_length < MIN_BLOCK_LENGTH {
            return Err(Error::domain(format!(
                "block length {} is below the minimum of {MIN_BLOCK_LENGTH} samples",
                self.block_length
            )));
        }
        if self.modes < 1 {
            return Err(Error::domain("mode count must be ≥ 1"));
        }
        Ok(())
    }

    /// Rate of the undivided source stream: twice the per-detector rate.
    pub fn source_rate(&self) -> f64 {
        2.0 * self.mean_rate
    }
}

/// Field sample step for a spectrum: the reciprocal of four times its grid span.
pub fn field_step(s: &SpectralDensity) -> f64 {
    1.0 / (4.0 * s.span())
}

/// Shortest power-of-two block satisfying the length constraints for `s`.
pub fn auto_block_length(s: &SpectralDensity) -> usize {
    let needed = (100.0 * s.equivalent_coherence_time() / field_step(s)).ceil() as usize;
    needed.max(MIN_BLOCK_LENGTH).next_power_of_two()
}

/// Block generator: spectral amplitudes on the FFT bins of one block.
struct BlockSynth {
    n: usize,
    amplitudes: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl BlockSynth {
    fn new(s: &SpectralDensity, n: usize) -> Result<Self> {
        let span = s.span();
        if !(span > 0.0) {
            return Err(Error::DegenerateSpectrum("spectrum grid has zero span".into()));
        }
        let dt = field_step(s);
        let tau_c = s.equivalent_coherence_time();
        if n as f64 * dt < 100.0 * tau_c {
            return Err(Error::BlockTooShort {
                block_s: n as f64 * dt,
                required_s: 100.0 * tau_c,
            });
        }
        if dt > tau_c / 20.0 {
            return Err(Error::domain(format!(
                "field step {dt:e} s exceeds a twentieth of the coherence time {tau_c:e} s"
            )));
        }
        let center = s.nu_start() + 0.5 * span;
        let df = 1.0 / (n as f64 * dt);
        let mut power: Vec<f64> = (0..n)
            .map(|k| {
                let f = if k < n / 2 { k as f64 } else { k as f64 - n as f64 } * df;
                s.interpolate(center + f).max(0.0)
            })
            .collect();
        let total: f64 = power.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateSpectrum(
                "no spectral power falls on the synthesis frequency bins".into(),
            ));
        }
        power.iter_mut().for_each(|p| *p = (*p / total).sqrt());
        let fft = FftPlanner::new().plan_fft_inverse(n);
        Ok(Self {
            n,
            amplitudes: power,
            fft,
        })
    }

    /// One block of field with unit mean intensity.
    fn field(&self, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = self
            .amplitudes
            .iter()
            .map(|&a| {
                if a == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im) * (a * FRAC_1_SQRT_2)
            })
            .collect();
        self.fft.process(&mut buf);
        buf
    }

    /// Mode-averaged intensity of one block.
    fn intensity(&self, master: u64, modes: u32, block: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for m in 0..modes {
            let mut rng = rng_for(derive_seed(master, role::FIELD, m as u64), role::FIELD, block);
            for (o, z) in out.iter_mut().zip(self.field(&mut rng)) {
                *o += z.norm_sqr();
            }
        }
        if modes > 1 {
            let inv = 1.0 / modes as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        out
    }
}

/// Field of duration `cfg.duration` (single mode), block-wise independent.
pub fn synthesize_field(s: &SpectralDensity, cfg: &SynthesisConfig) -> Result<FieldTrace> {
    cfg.validate()?;
    let synth = BlockSynth::new(s, cfg.block_length)?;
    let dt = field_step(s);
    let total = (cfg.duration / dt).ceil() as usize;
    let blocks = total.div_ceil(cfg.block_length);
    let parts: Vec<Vec<Complex64>> = (0..blocks as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(derive_seed(cfg.master_seed, role::FIELD, 0), role::FIELD, b);
            synth.field(&mut rng)
        })
        .collect();
    let mut samples: Vec<Complex64> = parts.into_iter().flatten().collect();
    samples.truncate(total.max(2));
    FieldTrace::new(dt, samples)
}

/// Poisson arrivals driven by `intensity`, with mean `scale·I` events per sample.
/// Arrivals are placed uniformly within their sample interval.
fn arrivals(
    intensity: &[f64],
    scale: f64,
    first_sample: u64,
    dt: f64,
    limit_ps: u64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<u64>,
) {
    let mut need: f64 = Exp1.sample(rng);
    for (i, &inten) in intensity.iter().enumerate() {
        let lam = scale * inten;
        let mut used = 0.0;
        while need <= lam - used {
            used += need;
            let t = ((first_sample + i as u64) as f64 + used / lam) * dt;
            let ps = seconds_to_ps(t);
            if ps <= limit_ps {
                out.push(ps);
            }
            need = Exp1.sample(rng);
        }
        need -= lam - used;
    }
}

fn check_occupancy(rate: f64, dt: f64) -> Result<()> {
    let occupancy = rate * dt;
    if occupancy > MAX_OCCUPANCY {
        return Err(Error::Occupancy { occupancy });
    }
    Ok(())
}

/// Photon events of rate `rate` from a given field; the rate is relative to
/// the trace's own mean intensity.
pub fn generate_events(field: &FieldTrace, rate: f64, seed: u64) -> Result<EventStream> {
    if !(rate > 0.0) {
        return Err(Error::domain("event rate must be positive"));
    }
    check_occupancy(rate, field.dt)?;
    let intensity = field.intensity();
    let scale = rate * field.dt / field.mean_intensity();
    let limit = seconds_to_ps(field.len() as f64 * field.dt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    arrivals(&intensity, scale, 0, field.dt, limit, &mut rng, &mut out);
    Ok(EventStream {
        channel: 0,
        timestamps: out,
    })
}

/// Streams field blocks straight into events without holding the whole trace.
/// The source rate is [`SynthesisConfig::source_rate`]; intensity is
/// normalized to its ensemble mean so blocks carry no per-block rescaling.
pub fn synthesize_events(s: &SpectralDensity, cfg: &SynthesisConfig) -> Result<EventStream> {
    cfg.validate()?;
    let dt = field_step(s);
    let rate = cfg.source_rate();
    check_occupancy(rate, dt)?;
    let synth = BlockSynth::new(s, cfg.block_length)?;
    let limit = seconds_to_ps(cfg.duration);
    let total = (cfg.duration / dt).ceil() as u64;
    let n = cfg.block_length as u64;
    let blocks = total.div_ceil(n);
    let scale = rate * dt;
    let parts: Vec<Vec<u64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut intensity = synth.intensity(cfg.master_seed, cfg.modes, b);
            let first = b * n;
            intensity.truncate((total - first).min(n) as usize);
            let mut rng = rng_for(cfg.master_seed, role::EVENTS, b);
            let mut out = Vec::with_capacity((scale * intensity.len() as f64 * 1.2) as usize + 16);
            arrivals(&intensity, scale, first, dt, limit, &mut rng, &mut out);
            out
        })
        .collect();
    let mut timestamps = Vec::with_capacity(parts.iter().map(Vec::len).sum());
    for p in parts {
        timestamps.extend(p);
    }
    Ok(EventStream {
        channel: 0,
        timestamps,
    })
}

/// Routes each event to channel 0 with probability `ratio`, else channel 1.
pub fn beamsplit(events: &EventStream, ratio: f64, seed: u64) -> Result<(EventStream, EventStream)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::domain("beamsplitter ratio must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity((events.len() as f64 * ratio * 1.01) as usize + 16);
    let mut b = Vec::with_capacity((events.len() as f64 * (1.0 - ratio) * 1.01) as usize + 16);
    for &t in &events.timestamps {
        if rng.random::<f64>() < ratio {
            a.push(t);
        } else {
            b.push(t);
        }
    }
    Ok((
        EventStream {
            channel: 0,
            timestamps: a,
        },
        EventStream {
            channel: 1,
            timestamps: b,
        },
    ))
}

/// Single-photon detector with non-paralyzable dead time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub response: DetectorResponse,
    /// Seconds.
    pub dead_time: f64,
    /// Hz.
    pub dark_rate: f64,
}

impl DetectorModel {
    pub fn new(efficiency: f64, response: DetectorResponse, dead_time: f64, dark_rate: f64) -> Result<Self> {
        let det = Self {
            efficiency,
            response,
            dead_time,
            dark_rate,
        };
        det.validate()?;
        Ok(det)
    }

    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            response: DetectorResponse::ideal(),
            dead_time: 0.0,
            dark_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::domain("detector efficiency must lie in [0, 1]"));
        }
        if !(self.dead_time >= 0.0) || !self.dead_time.is_finite() {
            return Err(Error::domain("detector dead time must be ≥ 0"));
        }
        if !(self.dark_rate >= 0.0) || !self.dark_rate.is_finite() {
            return Err(Error::domain("detector dark rate must be ≥ 0"));
        }
        DetectorResponse::new(
            self.response.core_fwhm,
            self.response.tail_weight,
            self.response.tail_decay,
        )?;
        Ok(())
    }
}

/// Efficiency thinning, dark counts, timing jitter and dead time, in that order.
/// Events jittered outside `[0, duration]` are lost.
pub fn apply_detector(events: &EventStream, det: &DetectorModel, duration: f64, seed: u64) -> Result<EventStream> {
    det.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = seconds_to_ps(duration);

    let mut ts: Vec<u64> = if det.efficiency < 1.0 {
        events
            .timestamps
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < det.efficiency)
            .collect()
    } else {
        events.timestamps.clone()
    };

    let mut resort = false;
    let expected_dark = det.dark_rate * duration;
    if expected_dark > 0.0 {
        let n = Poisson::new(expected_dark)
            .map_err(|e| Error::domain(e.to_string()))?
            .sample(&mut rng) as u64;
        ts.extend((0..n).map(|_| rng.random_range(0..=limit)));
        resort = true;
    }

    if !det.response.is_ideal() {
        let mut jittered = Vec::with_capacity(ts.len());
        for &t in &ts {
            let j = (det.response.sample(&mut rng) / RESOLUTION).round() as i64;
            let shifted = t as i64 + j;
            if shifted >= 0 && shifted as u64 <= limit {
                jittered.push(shifted as u64);
            }
        }
        ts = jittered;
        resort = true;
    }
    if resort {
        ts.sort_unstable();
    }

    if det.dead_time > 0.0 {
        let dead = seconds_to_ps(det.dead_time);
        let mut last: Option<u64> = None;
        ts.retain(|&t| match last {
            Some(l) if t - l < dead => false,
            _ => {
                last = Some(t);
                true
            }
        });
    }

    Ok(EventStream {
        channel: events.channel,
        timestamps: ts,
    })
}

/// Each event spawns, with probability `prob`, a false event on the other
/// channel after an exponential delay of mean `delay_mean`.
pub fn crosstalk_inject(
    a: &EventStream,
    b: &EventStream,
    prob: f64,
    delay_mean: f64,
    seed: u64,
) -> Result<(EventStream, EventStream)> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::domain("crosstalk probability must lie in [0, 1]"));
    }
    if prob == 0.0 {
        return Ok((a.clone(), b.clone()));
    }
    if !(delay_mean > 0.0) {
        return Err(Error::domain("crosstalk delay mean must be positive"));
    }
    let delay = Exp::new(1.0 / delay_mean).map_err(|e| Error::domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spawn = |src: &[u64]| -> Vec<u64> {
        src.iter()
            .filter_map(|&t| {
                if rng.random::<f64>() < prob {
                    Some(t + seconds_to_ps(delay.sample(&mut rng)))
                } else {
                    None
                }
            })
            .collect()
    };
    let into_b = spawn(&a.timestamps);
    let into_a = spawn(&b.timestamps);
    let merge = |base: &[u64], extra: Vec<u64>| {
        let mut v = Vec::with_capacity(base.len() + extra.len());
        v.extend_from_slice(base);
        v.extend(extra);
        v.sort_unstable();
        v
    };
    Ok((
        EventStream {
            channel: a.channel,
            timestamps: merge(&a.timestamps, into_a),
        },
        EventStream {
            channel: b.channel,
            timestamps: merge(&b.timestamps, into_b),
        },
    ))
}

const PBT1_MAGIC: &[u8; 4] = b"PBT1";
const PBT1_VERSION: u16 = 1;
const PBT1_HEADER: usize = 16;

pub fn write_pbt1<W: Write>(stream: &EventStream, mut out: W) -> std::io::Result<()> {
    out.write_all(PBT1_MAGIC)?;
    out.write_all(&PBT1_VERSION.to_le_bytes())?;
    out.write_all(&stream.channel.to_le_bytes())?;
    out.write_all(&(stream.timestamps.len() as u64).to_le_bytes())?;
    for t in &stream.timestamps {
        out.write_all(&t.to_le_bytes())?;
    }
    out.flush()
}

pub fn read_pbt1<R: Read>(mut input: R) -> Result<EventStream> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::format(0, format!("read failed: {e}")))?;
    parse_pbt1(&bytes)
}

pub fn parse_pbt1(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < PBT1_HEADER {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated header ({} of {PBT1_HEADER} bytes)", bytes.len()),
        ));
    }
    if &bytes[0..4] != PBT1_MAGIC {
        return Err(Error::format(0, "bad magic, expected `PBT1`"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != PBT1_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let channel = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[PBT1_HEADER..];
    let available = (body.len() / 8) as u64;
    if available < count {
        return Err(Error::format(
            (PBT1_HEADER as u64) + available * 8,
            format!("truncated records: header declares {count}, file holds {available}"),
        ));
    }
    if body.len() as u64 != count * 8 {
        return Err(Error::format(
            PBT1_HEADER as u64 + count * 8,
            "trailing bytes after the declared records",
        ));
    }
    let timestamps: Vec<u64> = body
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = first_unsorted(&timestamps) {
        return Err(Error::format(
            (PBT1_HEADER + 8 * i) as u64,
            format!("timestamps not sorted at record {i}"),
        ));
    }
    Ok(EventStream {
        channel,
        timestamps,
    })
}

pub fn save_pbt1(stream: &EventStream, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_pbt1(stream, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_pbt1(path: &Path) -> Result<EventStream> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pbt1(BufReader::new(file))
}
