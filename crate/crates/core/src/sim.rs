//! Baseband GPS L1 C/A signal synthesis with transmitter hardware
//! signatures, navigation-message framing, multipath, and spoofing/replay
//! attacker overlays.
//!
//! All generation is a pure function of the configuration and seeds. Samples
//! are produced in fixed-size chunks whose noise RNG streams are derived from
//! the chunk index, so rendering is deterministic regardless of how chunks are
//! scheduled across threads.

use std::f64::consts::TAU;

use num_complex::{Complex32, Complex64};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prn::{self, CaCode, CHIP_RATE, CODE_LENGTH, L1_FREQ};
use crate::seed::{self, TAG_NAV, TAG_NOISE, TAG_PHASE, TAG_SPOOF};

pub const NAV_BIT_RATE: f64 = 50.0;
pub const SUBFRAME_BITS: usize = 300;
pub const FRAME_BITS: usize = 1500;
pub const PREAMBLE: [u8; 8] = [1, 0, 0, 0, 1, 0, 1, 1];
pub const CODE_PERIODS_PER_BIT: usize = 20;
pub const DEFAULT_SAMPLE_RATE: f64 = 2.046e6;
pub const DEFAULT_NOISE_STD: f64 = 0.1;

const CHUNK: usize = 1 << 16;
const MAX_TAPS: usize = 9;

/// Transmit-chain imperfections that make one emitter's correlator outputs
/// distinguishable from another's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSignature {
    /// Amplitude ratio between +1 and -1 data symbols.
    pub gain_asymmetry: f64,
    /// Centered FIR applied to the spread waveform at the sample rate.
    pub filter_taps: Vec<f64>,
    /// Carrier phase random-walk step, radians per millisecond.
    pub phase_noise_std: f64,
}

impl Default for HardwareSignature {
    fn default() -> Self {
        Self::ideal()
    }
}

impl HardwareSignature {
    pub fn ideal() -> Self {
        Self {
            gain_asymmetry: 1.0,
            filter_taps: vec![1.0],
            phase_noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain_asymmetry > 0.8 && self.gain_asymmetry < 1.25) {
            return Err(Error::invalid(format!(
                "gain_asymmetry {} outside (0.8, 1.25)",
                self.gain_asymmetry
            )));
        }
        if self.filter_taps.is_empty() || self.filter_taps.len() > MAX_TAPS {
            return Err(Error::invalid(format!(
                "filter needs 1..={MAX_TAPS} taps, got {}",
                self.filter_taps.len()
            )));
        }
        let sum: f64 = self.filter_taps.iter().sum();
        if self.filter_taps.iter().any(|t| !t.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("filter taps must sum to 1, got {sum}")));
        }
        if !(self.phase_noise_std >= 0.0 && self.phase_noise_std.is_finite()) {
            return Err(Error::invalid("phase_noise_std must be finite and >= 0"));
        }
        Ok(())
    }

    /// Amplitudes for (+1, -1) symbols, normalized to unit mean power.
    pub fn symbol_amplitudes(&self) -> (f64, f64) {
        let g = self.gain_asymmetry;
        let k = (2.0 / (1.0 + g * g)).sqrt();
        (g * k, k)
    }

    /// Prompt correlation of the filtered code against an unfiltered replica,
    /// relative to an unfiltered signal.
    pub fn correlation_gain(&self, code: &CaCode, sample_rate: f64) -> f64 {
        let n = samples_per_period(sample_rate);
        let chips = prn::sample_code(code, sample_rate, CHIP_RATE, 0.0, n).expect("sample rate validated by caller");
        let c = self.filter_taps.len() / 2;
        let mut num = 0.0;
        for i in 0..n {
            let y: f64 = self
                .filter_taps
                .iter()
                .enumerate()
                .map(|(j, &t)| t * f64::from(chips[(i + n + c - j) % n]))
                .sum();
            num += y * f64::from(chips[i]);
        }
        num / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatelliteScenario {
    pub prn: u8,
    /// Hz.
    pub doppler: f64,
    /// Chips at the stream start.
    pub code_phase: f64,
    /// Radians at the stream start.
    pub carrier_phase: f64,
    /// dB-Hz.
    pub cn0: f64,
    #[serde(default)]
    pub signature: HardwareSignature,
    pub nav_seed: u64,
}

impl SatelliteScenario {
    pub fn validate(&self) -> Result<()> {
        prn::validate_prn(self.prn)?;
        if !(20.0..=60.0).contains(&self.cn0) {
            return Err(Error::invalid(format!(
                "PRN {}: cn0 {} outside [20, 60] dB-Hz",
                self.prn, self.cn0
            )));
        }
        if !(self.doppler.abs() <= 10e3) {
            return Err(Error::invalid(format!(
                "PRN {}: |doppler| {} exceeds 10 kHz",
                self.prn, self.doppler
            )));
        }
        if !self.code_phase.is_finite() || !self.carrier_phase.is_finite() {
            return Err(Error::invalid(format!("PRN {}: non-finite phase", self.prn)));
        }
        self.signature.validate()
    }

    /// Code rate including code Doppler, chips/s.
    pub fn chip_rate(&self) -> f64 {
        CHIP_RATE * (1.0 + self.doppler / L1_FREQ)
    }

    /// True code phase (chips, mod 1023) at time `t` after the stream start.
    pub fn code_phase_at(&self, t: f64) -> f64 {
        (self.code_phase + self.chip_rate() * t).rem_euclid(CODE_LENGTH as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Spoofing,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerMode {
    Over,
    Matched,
    Under,
    /// Explicit offset in dB relative to the genuine signal.
    Adjusted(f64),
}

impl PowerMode {
    /// Attacker-to-genuine power offset in dB. A replayer retransmits the
    /// recorded band, so matching it means unity gain.
    pub fn offset_db(self, mode: AttackMode) -> f64 {
        match (self, mode) {
            (PowerMode::Over, _) => 6.0,
            (PowerMode::Matched, AttackMode::Spoofing) => 0.5,
            (PowerMode::Matched, AttackMode::Replay) => 0.0,
            (PowerMode::Under, _) => -3.0,
            (PowerMode::Adjusted(db), _) => db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub mode: AttackMode,
    pub power: PowerMode,
    /// Seconds after the stream start.
    pub takeover_time: f64,
    /// Phase-aligned takeover with the genuine signal left in place.
    #[serde(default)]
    pub seamless: bool,
    #[serde(default)]
    pub spoofer_signature: HardwareSignature,
    /// Replay latency, seconds.
    #[serde(default)]
    pub delay: f64,
    /// Carrier phase offset of a non-seamless spoofer, radians.
    #[serde(default)]
    pub phase_offset: f64,
    #[serde(default)]
    pub seed: u64,
    /// Add fresh front-end noise on top of a replayed band.
    #[serde(default = "default_true")]
    pub receiver_noise: bool,
}

fn default_true() -> bool {
    true
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.takeover_time >= 0.0) {
            return Err(Error::invalid("takeover_time must be >= 0"));
        }
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            return Err(Error::invalid("replay delay must be finite and >= 0"));
        }
        if let PowerMode::Adjusted(db) = self.power {
            if !db.is_finite() {
                return Err(Error::invalid("adjusted power must be finite"));
            }
        }
        self.spoofer_signature.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Label {
    Genuine = 0,
    Spoofed = 1,
    Mixed = 2,
}

impl Label {
    pub fn is_attack(self) -> bool {
        self != Label::Genuine
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Spoofed => "spoofed",
            Label::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genuine" => Ok(Label::Genuine),
            "spoofed" => Ok(Label::Spoofed),
            "mixed" => Ok(Label::Mixed),
            other => Err(Error::invalid(format!("unknown label `{other}`"))),
        }
    }
}

/// Complex baseband samples with per-sample ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct IqStream {
    pub samples: Vec<Complex32>,
    pub sample_rate: f64,
    pub t0: f64,
    pub labels: Vec<Label>,
}

impl IqStream {
    pub fn new(samples: Vec<Complex32>, sample_rate: f64, t0: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let labels = vec![Label::Genuine; samples.len()];
        Ok(Self {
            samples,
            sample_rate,
            t0,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn timeline(&self) -> LabelTimeline {
        LabelTimeline::from_labels(&self.labels, self.sample_rate, self.t0)
    }
}

/// Run-length encoded ground-truth labels on a time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTimeline {
    pub sample_rate: f64,
    pub t0: f64,
    /// `(start_sample, end_sample_exclusive, label)`, contiguous and ordered.
    pub segments: Vec<(u64, u64, Label)>,
}

impl LabelTimeline {
    pub fn from_labels(labels: &[Label], sample_rate: f64, t0: f64) -> Self {
        let mut segments: Vec<(u64, u64, Label)> = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            match segments.last_mut() {
                Some(seg) if seg.2 == l => seg.1 = i as u64 + 1,
                _ => segments.push((i as u64, i as u64 + 1, l)),
            }
        }
        Self {
            sample_rate,
            t0,
            segments,
        }
    }

    /// All-genuine timeline of `len` samples.
    pub fn genuine(len: u64, sample_rate: f64, t0: f64) -> Self {
        Self {
            sample_rate,
            t0,
            segments: if len == 0 {
                vec![]
            } else {
                vec![(0, len, Label::Genuine)]
            },
        }
    }

    /// Samples of `[t_start, t_end)` under each label, indexed by `Label as usize`.
    /// Times outside the timeline count as genuine.
    fn coverage(&self, t_start: f64, t_end: f64) -> [u64; 3] {
        let a = ((t_start - self.t0) * self.sample_rate).round().max(0.0) as u64;
        let b = ((t_end - self.t0) * self.sample_rate).round().max(0.0) as u64;
        let b = b.max(a + 1);
        let mut counts = [0u64; 3];
        for &(s, e, l) in &self.segments {
            let lo = s.max(a);
            let hi = e.min(b);
            if hi > lo {
                counts[l as usize] += hi - lo;
            }
        }
        let covered: u64 = counts.iter().sum();
        counts[0] += (b - a).saturating_sub(covered);
        counts
    }

    /// Label covering the most samples of `[t_start, t_end)`; ties go to the
    /// attack labels. Times outside the timeline count as genuine.
    pub fn dominant(&self, t_start: f64, t_end: f64) -> Label {
        let counts = self.coverage(t_start, t_end);
        [Label::Genuine, Label::Mixed, Label::Spoofed]
            .into_iter()
            .max_by_key(|&l| counts[l as usize])
            .expect("non-empty")
    }

    /// True when a single label covers all of `[t_start, t_end)`.
    pub fn is_uniform(&self, t_start: f64, t_end: f64) -> bool {
        self.coverage(t_start, t_end).iter().filter(|&&c| c > 0).count() == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub sample_rate: f64,
    pub duration: f64,
    /// Per-component noise standard deviation; also the reference floor for
    /// setting signal amplitudes from C/N0.
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_true")]
    pub add_noise: bool,
    pub noise_seed: u64,
}

fn default_noise_std() -> f64 {
    DEFAULT_NOISE_STD
}

impl SynthConfig {
    pub fn new(duration: f64, noise_seed: u64) -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            duration,
            noise_std: DEFAULT_NOISE_STD,
            add_noise: true,
            noise_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate >= 2.0 * CHIP_RATE && self.sample_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "sample rate {} below 2.046 MHz",
                self.sample_rate
            )));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::invalid("duration must be positive"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be positive"));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    /// Carrier amplitude that yields `cn0` dB-Hz against the noise floor.
    pub fn amplitude_for_cn0(&self, cn0: f64) -> f64 {
        let cn0_lin = 10f64.powf(cn0 / 10.0);
        (cn0_lin * 2.0 * self.noise_std * self.noise_std / self.sample_rate).sqrt()
    }
}

pub fn samples_per_period(sample_rate: f64) -> usize {
    (sample_rate * CODE_LENGTH as f64 / CHIP_RATE).round() as usize
}

/// Navigation bits as BPSK symbols (0 -> +1, 1 -> -1) at 50 bps. Every
/// 300-bit subframe opens with the 8-bit preamble; the payload is
/// pseudorandom.
pub fn synthesize_nav_bits(prn: u8, nav_seed: u64, duration: f64) -> Result<Vec<i8>> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::invalid("duration must be positive"));
    }
    let n = (duration * NAV_BIT_RATE - 1e-9).ceil() as usize;
    let mut rng = seed::rng(nav_seed, &[TAG_NAV, u64::from(prn)]);
    Ok((0..n)
        .map(|i| {
            let pos = i % SUBFRAME_BITS;
            let bit = if pos < PREAMBLE.len() {
                PREAMBLE[pos]
            } else {
                rng.random::<bool>() as u8
            };
            1 - 2 * bit as i8
        })
        .collect())
}

/// Carrier phase random walk sampled once per millisecond.
fn phase_walk(std: f64, seed: u64, prn: u8, tag: u64, n_ms: usize) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; n_ms];
    }
    let mut rng = seed::rng(seed, &[tag, u64::from(prn)]);
    let step = Normal::new(0.0, std).expect("validated std");
    let mut acc = 0.0;
    (0..n_ms)
        .map(|_| {
            let v = acc;
            acc += step.sample(&mut rng);
            v
        })
        .collect()
}

/// One satellite (or spoofer channel) ready to render.
struct Emitter {
    chips: Vec<f64>,
    taps: Vec<f64>,
    amp_pos: f64,
    amp_neg: f64,
    code_phase: f64,
    chips_per_sample: f64,
    carrier_phase: f64,
    rad_per_sample: f64,
    symbols: Vec<i8>,
    walk: Vec<f64>,
    samples_per_ms: f64,
}

impl Emitter {
    fn new(
        sat: &SatelliteScenario,
        signature: &HardwareSignature,
        amplitude: f64,
        carrier_phase: f64,
        cfg: &SynthConfig,
        walk_seed: u64,
        walk_tag: u64,
    ) -> Result<Self> {
        let code = prn::generate_ca_code(sat.prn)?;
        let (p, n) = signature.symbol_amplitudes();
        let duration = cfg.duration + 1.0;
        let n_ms = (duration * 1e3).ceil() as usize + 1;
        Ok(Self {
            chips: code.chips().iter().map(|&c| f64::from(c)).collect(),
            taps: signature.filter_taps.clone(),
            amp_pos: amplitude * p,
            amp_neg: amplitude * n,
            code_phase: sat.code_phase,
            chips_per_sample: sat.chip_rate() / cfg.sample_rate,
            carrier_phase,
            rad_per_sample: TAU * sat.doppler / cfg.sample_rate,
            symbols: synthesize_nav_bits(sat.prn, sat.nav_seed, duration)?,
            walk: phase_walk(signature.phase_noise_std, walk_seed, sat.prn, walk_tag, n_ms),
            samples_per_ms: cfg.sample_rate / 1e3,
        })
    }

    fn baseband(&self, m: i64) -> f64 {
        let phase = self.code_phase + m as f64 * self.chips_per_sample;
        let chip = self.chips[(phase.floor() as i64).rem_euclid(CODE_LENGTH as i64) as usize];
        let bit = (phase / (CODE_LENGTH * CODE_PERIODS_PER_BIT) as f64).floor().max(0.0) as usize;
        let sym = self.symbols[bit.min(self.symbols.len() - 1)];
        if sym > 0 {
            chip * self.amp_pos
        } else {
            -chip * self.amp_neg
        }
    }

    /// Adds `sign *` this emitter's samples for indices `start..start + out.len()`.
    fn render_into(&self, start: usize, out: &mut [Complex64], sign: f64) {
        let len = out.len();
        if len == 0 {
            return;
        }
        let ntaps = self.taps.len();
        let c = (ntaps / 2) as i64;
        // Baseband over [start - (ntaps - 1 - c), start + len + c).
        let lo = start as i64 - (ntaps as i64 - 1 - c);
        let base: Vec<f64> = (lo..start as i64 + len as i64 + c).map(|m| self.baseband(m)).collect();
        let mut i = 0;
        while i < len {
            let abs = start + i;
            let ms = (abs as f64 / self.samples_per_ms).floor() as usize;
            let ms_end = ((ms + 1) as f64 * self.samples_per_ms).ceil() as usize;
            let seg_end = (ms_end.max(abs + 1) - start).min(len);
            let theta = self.carrier_phase + self.rad_per_sample * abs as f64 + self.walk[ms.min(self.walk.len() - 1)];
            let mut phasor = Complex64::from_polar(sign, theta);
            let rot = Complex64::from_polar(1.0, self.rad_per_sample);
            for k in i..seg_end {
                // base index of sample k at offset j: k + (ntaps - 1 - c) - j + c
                let centre = k + ntaps - 1;
                let y: f64 = self.taps.iter().enumerate().map(|(j, &t)| t * base[centre - j]).sum();
                out[k] += phasor * y;
                phasor *= rot;
            }
            i = seg_end;
        }
    }
}

fn check_distinct(scenarios: &[SatelliteScenario]) -> Result<()> {
    let mut seen = [false; 33];
    for s in scenarios {
        s.validate()?;
        let slot = &mut seen[usize::from(s.prn)];
        if *slot {
            return Err(Error::invalid(format!("duplicate PRN {}", s.prn)));
        }
        *slot = true;
    }
    Ok(())
}

fn genuine_emitter(sat: &SatelliteScenario, cfg: &SynthConfig) -> Result<Emitter> {
    let code = prn::generate_ca_code(sat.prn)?;
    let gain = sat.signature.correlation_gain(&code, cfg.sample_rate);
    let amplitude = cfg.amplitude_for_cn0(sat.cn0) / gain;
    Emitter::new(
        sat,
        &sat.signature,
        amplitude,
        sat.carrier_phase,
        cfg,
        cfg.noise_seed,
        TAG_PHASE,
    )
}

fn add_noise(chunk_idx: usize, buf: &mut [Complex64], std: f64, seed: u64, tag: u64) {
    let mut rng = seed::rng(seed, &[tag, chunk_idx as u64]);
    for v in buf.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(re * std, im * std);
    }
}

fn to_c32(v: Complex64) -> Complex32 {
    Complex32::new(v.re as f32, v.im as f32)
}

/// Genuine sky: every listed satellite plus complex AWGN.
pub fn synthesize_genuine(scenarios: &[SatelliteScenario], cfg: &SynthConfig) -> Result<IqStream> {
    cfg.validate()?;
    check_distinct(scenarios)?;
    let emitters = scenarios
        .iter()
        .map(|s| genuine_emitter(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let n = cfg.num_samples();
    let mut samples = vec![Complex32::new(0.0, 0.0); n];
    samples.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, out)| {
        let mut acc = vec![Complex64::new(0.0, 0.0); out.len()];
        for e in &emitters {
            e.render_into(ci * CHUNK, &mut acc, 1.0);
        }
        if cfg.add_noise {
            add_noise(ci, &mut acc, cfg.noise_std, cfg.noise_seed, TAG_NOISE);
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o = to_c32(a);
        }
    });
    IqStream::new(samples, cfg.sample_rate, 0.0)
}

/// `out(t) = sum_k gain_k * iq(t - delay_k)`, delays rounded to whole samples.
pub fn apply_multipath(iq: &IqStream, taps: &[(f64, Complex64)]) -> Result<IqStream> {
    let mut shifted = Vec::with_capacity(taps.len());
    for &(delay, gain) in taps {
        if !(delay >= 0.0 && delay.is_finite()) {
            return Err(Error::invalid(format!("multipath delay {delay} must be >= 0")));
        }
        shifted.push(((delay * iq.sample_rate).round() as usize, gain));
    }
    let mut samples = vec![Complex32::new(0.0, 0.0); iq.len()];
    samples.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, out)| {
        let base = ci * CHUNK;
        for (k, o) in out.iter_mut().enumerate() {
            let i = base + k;
            let mut acc = Complex64::new(0.0, 0.0);
            for &(d, g) in &shifted {
                if i >= d {
                    let x = iq.samples[i - d];
                    acc += g * Complex64::new(f64::from(x.re), f64::from(x.im));
                }
            }
            *o = to_c32(acc);
        }
    });
    Ok(IqStream {
        samples,
        sample_rate: iq.sample_rate,
        t0: iq.t0,
        labels: iq.labels.clone(),
    })
}

/// Replay transmitter transform applied to one recorded sample.
struct ReplayChain<'a> {
    recording: &'a [Complex32],
    taps: &'a [f64],
    amp_pos: f64,
    amp_neg: f64,
    gain: f64,
    walk: Vec<f64>,
    samples_per_ms: f64,
    delay: usize,
}

impl ReplayChain<'_> {
    fn sample(&self, i: usize) -> Complex64 {
        let c = self.taps.len() / 2;
        let mut y = Complex64::new(0.0, 0.0);
        for (j, &t) in self.taps.iter().enumerate() {
            // source index i - delay + c - j
            let src = i as i64 - self.delay as i64 + c as i64 - j as i64;
            if src >= 0 && (src as usize) < self.recording.len() {
                let x = self.recording[src as usize];
                y += Complex64::new(f64::from(x.re), f64::from(x.im)) * t;
            }
        }
        let y = if y.re >= 0.0 {
            y * self.amp_pos
        } else {
            y * self.amp_neg
        };
        let ms = (i as f64 / self.samples_per_ms).floor() as usize;
        let phi = self.walk[ms.min(self.walk.len() - 1)];
        let y = if phi == 0.0 {
            y
        } else {
            y * Complex64::from_polar(1.0, phi)
        };
        y * self.gain
    }
}

/// Overlays an attacker on a genuine stream from `takeover_time` onward.
///
/// `targets` are the scenarios of the satellites being attacked and `synth`
/// the configuration that produced `genuine`; both are needed to cancel the
/// genuine components in non-seamless spoofing and to set attacker power.
/// Replay mode retransmits `recording`.
pub fn spoof_overlay(
    genuine: &IqStream,
    attack: &AttackConfig,
    targets: &[SatelliteScenario],
    synth: &SynthConfig,
    recording: Option<&IqStream>,
) -> Result<IqStream> {
    attack.validate()?;
    check_distinct(targets)?;
    if attack.mode == AttackMode::Replay && recording.is_none() {
        return Err(Error::invalid("replay attack requires a recorded source stream"));
    }
    let mut out = genuine.clone();
    let n = genuine.len();
    let k0 = ((attack.takeover_time - genuine.t0) * genuine.sample_rate)
        .ceil()
        .max(0.0);
    if k0 >= n as f64 {
        return Ok(out);
    }
    let k0 = k0 as usize;
    let offset_db = attack.power.offset_db(attack.mode);
    let power_gain = 10f64.powf(offset_db / 20.0);
    let label = if !attack.seamless || offset_db > 0.0 {
        Label::Spoofed
    } else {
        Label::Mixed
    };
    out.labels[k0..].fill(label);

    match attack.mode {
        AttackMode::Spoofing => {
            let removed = if attack.seamless {
                Vec::new()
            } else {
                targets
                    .iter()
                    .map(|s| genuine_emitter(s, synth))
                    .collect::<Result<Vec<_>>>()?
            };
            let phase_offset = if attack.seamless { 0.0 } else { attack.phase_offset };
            let spoofers = targets
                .iter()
                .map(|s| {
                    let code = prn::generate_ca_code(s.prn)?;
                    let gain = attack.spoofer_signature.correlation_gain(&code, synth.sample_rate);
                    let amplitude = synth.amplitude_for_cn0(s.cn0) * power_gain / gain;
                    Emitter::new(
                        s,
                        &attack.spoofer_signature,
                        amplitude,
                        s.carrier_phase + phase_offset,
                        synth,
                        attack.seed,
                        TAG_SPOOF,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let tail = &mut out.samples[k0..];
            tail.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, buf)| {
                let start = k0 + ci * CHUNK;
                let mut acc: Vec<Complex64> = buf
                    .iter()
                    .map(|x| Complex64::new(f64::from(x.re), f64::from(x.im)))
                    .collect();
                for e in &removed {
                    e.render_into(start, &mut acc, -1.0);
                }
                for e in &spoofers {
                    e.render_into(start, &mut acc, 1.0);
                }
                for (o, a) in buf.iter_mut().zip(acc) {
                    *o = to_c32(a);
                }
            });
        }
        AttackMode::Replay => {
            let recording = recording.expect("checked above");
            let sig = &attack.spoofer_signature;
            let fir_gain = match targets.first() {
                Some(s) => sig.correlation_gain(&prn::generate_ca_code(s.prn)?, synth.sample_rate),
                None => 1.0,
            };
            let (amp_pos, amp_neg) = sig.symbol_amplitudes();
            let n_ms = (n as f64 / genuine.sample_rate * 1e3).ceil() as usize + 1;
            let chain = ReplayChain {
                recording: &recording.samples,
                taps: &sig.filter_taps,
                amp_pos,
                amp_neg,
                gain: power_gain / fir_gain,
                walk: phase_walk(sig.phase_noise_std, attack.seed, 0, TAG_SPOOF, n_ms),
                samples_per_ms: genuine.sample_rate / 1e3,
                delay: (attack.delay * genuine.sample_rate).round() as usize,
            };
            let noise_std = synth.noise_std;
            let tail = &mut out.samples[k0..];
            tail.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, buf)| {
                let start = k0 + ci * CHUNK;
                let mut acc: Vec<Complex64> = (0..buf.len()).map(|k| chain.sample(start + k)).collect();
                if attack.seamless {
                    for (a, x) in acc.iter_mut().zip(buf.iter()) {
                        *a += Complex64::new(f64::from(x.re), f64::from(x.im));
                    }
                }
                if attack.receiver_noise {
                    add_noise(ci, &mut acc, noise_std, attack.seed, TAG_SPOOF);
                }
                for (o, a) in buf.iter_mut().zip(acc) {
                    *o = to_c32(a);
                }
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sat(prn: u8) -> SatelliteScenario {
        SatelliteScenario {
            prn,
            doppler: 1000.0,
            code_phase: 100.25,
            carrier_phase: 0.3,
            cn0: 45.0,
            signature: HardwareSignature::ideal(),
            nav_seed: 7,
        }
    }

    #[test]
    fn nav_frame_structure() {
        let bits = synthesize_nav_bits(3, 9, 30.0).unwrap();
        assert_eq!(bits.len(), FRAME_BITS);
        for sf in bits.chunks(SUBFRAME_BITS) {
            let pre: Vec<i8> = PREAMBLE.iter().map(|&b| 1 - 2 * b as i8).collect();
            assert_eq!(&sf[..8], &pre[..]);
        }
        assert_eq!(synthesize_nav_bits(3, 9, 6.0).unwrap().len(), SUBFRAME_BITS);
        assert_eq!(bits, synthesize_nav_bits(3, 9, 30.0).unwrap());
        assert_ne!(bits, synthesize_nav_bits(3, 10, 30.0).unwrap());
        assert!(synthesize_nav_bits(3, 9, 0.0).is_err());
    }

    #[test]
    fn signature_validation() {
        let mut s = HardwareSignature::ideal();
        assert!(s.validate().is_ok());
        s.filter_taps = vec![0.5, 0.4];
        assert!(s.validate().is_err());
        s.filter_taps = vec![0.1; 10];
        assert!(s.validate().is_err());
        s = HardwareSignature::ideal();
        s.gain_asymmetry = 1.3;
        assert!(s.validate().is_err());
    }

    #[test]
    fn symbol_amplitudes_preserve_power() {
        let s = HardwareSignature {
            gain_asymmetry: 1.2,
            ..HardwareSignature::ideal()
        };
        let (p, n) = s.symbol_amplitudes();
        assert!((p / n - 1.2).abs() < 1e-12);
        assert!(((p * p + n * n) / 2.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_filter_gain_is_exactly_one() {
        let code = prn::generate_ca_code(4).unwrap();
        assert_eq!(
            HardwareSignature::ideal().correlation_gain(&code, DEFAULT_SAMPLE_RATE),
            1.0
        );
    }

    #[test]
    fn duplicate_prns_rejected() {
        let cfg = SynthConfig::new(0.01, 1);
        let err = synthesize_genuine(&[sat(3), sat(3)], &cfg).unwrap_err();
        assert!(err.to_string().contains("duplicate PRN 3"));
    }

    #[test]
    fn synthesis_is_deterministic() {
        let cfg = SynthConfig::new(0.05, 42);
        let a = synthesize_genuine(&[sat(1), sat(2)], &cfg).unwrap();
        let b = synthesize_genuine(&[sat(1), sat(2)], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 102_300);
        assert!(a.labels.iter().all(|&l| l == Label::Genuine));
    }

    #[test]
    fn identity_and_empty_multipath() {
        let cfg = SynthConfig::new(0.01, 2);
        let g = synthesize_genuine(&[sat(5)], &cfg).unwrap();
        let same = apply_multipath(&g, &[(0.0, Complex64::new(1.0, 0.0))]).unwrap();
        assert_eq!(same.samples, g.samples);
        let zero = apply_multipath(&g, &[]).unwrap();
        assert!(zero.samples.iter().all(|x| x.re == 0.0 && x.im == 0.0));
        assert_eq!(zero.labels, g.labels);
        assert!(apply_multipath(&g, &[(-1.0, Complex64::new(1.0, 0.0))]).is_err());
    }

    fn attack(mode: AttackMode, power: PowerMode, takeover: f64) -> AttackConfig {
        AttackConfig {
            mode,
            power,
            takeover_time: takeover,
            seamless: false,
            spoofer_signature: HardwareSignature::ideal(),
            delay: 0.0,
            phase_offset: 0.0,
            seed: 3,
            receiver_noise: false,
        }
    }

    #[test]
    fn late_takeover_is_a_no_op() {
        let cfg = SynthConfig::new(0.02, 2);
        let g = synthesize_genuine(&[sat(5)], &cfg).unwrap();
        let a = attack(AttackMode::Spoofing, PowerMode::Over, 1.0);
        let out = spoof_overlay(&g, &a, &[sat(5)], &cfg, None).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn perfect_replay_is_bit_exact() {
        let cfg = SynthConfig::new(0.02, 2);
        let g = synthesize_genuine(&[sat(5), sat(9)], &cfg).unwrap();
        let a = attack(AttackMode::Replay, PowerMode::Matched, 0.01);
        let out = spoof_overlay(&g, &a, &[sat(5), sat(9)], &cfg, Some(&g)).unwrap();
        assert_eq!(out.samples, g.samples);
        let k0 = 20_460;
        assert!(out.labels[..k0].iter().all(|&l| l == Label::Genuine));
        assert!(out.labels[k0..].iter().all(|&l| l == Label::Spoofed));
    }

    #[test]
    fn replay_requires_recording() {
        let cfg = SynthConfig::new(0.01, 2);
        let g = synthesize_genuine(&[sat(5)], &cfg).unwrap();
        let a = attack(AttackMode::Replay, PowerMode::Matched, 0.0);
        assert!(matches!(
            spoof_overlay(&g, &a, &[sat(5)], &cfg, None),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn seamless_underpowered_is_mixed() {
        let cfg = SynthConfig::new(0.01, 2);
        let g = synthesize_genuine(&[sat(5)], &cfg).unwrap();
        let mut a = attack(AttackMode::Spoofing, PowerMode::Under, 0.0);
        a.seamless = true;
        let out = spoof_overlay(&g, &a, &[sat(5)], &cfg, None).unwrap();
        assert!(out.labels.iter().all(|&l| l == Label::Mixed));
    }

    #[test]
    fn dominant_label() {
        let labels = [
            Label::Genuine,
            Label::Genuine,
            Label::Spoofed,
            Label::Spoofed,
            Label::Spoofed,
        ];
        let tl = LabelTimeline::from_labels(&labels, 1.0, 0.0);
        assert_eq!(tl.segments.len(), 2);
        assert_eq!(tl.dominant(0.0, 2.0), Label::Genuine);
        assert_eq!(tl.dominant(1.0, 5.0), Label::Spoofed);
        assert_eq!(tl.dominant(1.0, 3.0), Label::Spoofed);
        assert_eq!(tl.dominant(10.0, 12.0), Label::Genuine);
    }
}
