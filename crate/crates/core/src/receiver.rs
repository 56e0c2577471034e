//! Single-channel GPS L1 C/A receiver: acquisition, early/prompt/late
//! tracking, and the code and carrier lock detectors.

use std::f64::consts::{PI, TAU};

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prn::{self, CHIP_RATE, CODE_LENGTH, L1_FREQ};
use crate::sim::{samples_per_period, IqStream};

/// Ceiling reported by the C/N0 estimator when the noise estimate vanishes.
pub const CN0_CEILING: f64 = 100.0;
/// NWPR block length in epochs.
pub const NWPR_BLOCK: usize = 5;
pub const MIN_LOCK_WINDOW: usize = 20;
const CODE_PERIOD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    /// Search spans `-doppler_range..=doppler_range` Hz.
    pub doppler_range: f64,
    pub doppler_bin: f64,
    /// Code periods accumulated non-coherently.
    pub periods: usize,
    /// Peak to second-peak ratio required to declare acquisition.
    pub threshold: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            doppler_range: 5000.0,
            doppler_bin: 250.0,
            periods: 10,
            threshold: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionResult {
    pub prn: u8,
    /// Chips, at the stream start, in `[0, 1023)`.
    pub code_phase: f64,
    pub doppler: f64,
    pub peak_metric: f64,
    pub acquired: bool,
    /// Carrier phase of the first code period's correlation, radians.
    pub carrier_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingConfig {
    /// Seconds; a whole number of code periods.
    pub integration_time: f64,
    /// Early-late spacing, chips.
    pub el_spacing: f64,
    pub dll_bandwidth: f64,
    pub pll_bandwidth: f64,
    /// dB-Hz.
    pub gamma_code: f64,
    /// Threshold on the cos(2 * phase error) estimate.
    pub gamma_carrier: f64,
    /// Epochs in the C/N0 and carrier-lock estimation window.
    pub lock_window: usize,
    /// Consecutive code-lock failures that end the channel.
    pub loss_of_lock_epochs: usize,
    /// Frequency-lock assist bandwidth during pull-in, Hz.
    pub fll_bandwidth: f64,
    pub pull_in_epochs: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            integration_time: 1e-3,
            el_spacing: 0.5,
            dll_bandwidth: 2.0,
            pll_bandwidth: 25.0,
            gamma_code: 32.0,
            gamma_carrier: 0.5,
            lock_window: MIN_LOCK_WINDOW,
            loss_of_lock_epochs: 50,
            fll_bandwidth: 10.0,
            pull_in_epochs: 200,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        let periods = self.integration_time / CODE_PERIOD;
        if !(periods >= 1.0 && (periods - periods.round()).abs() < 1e-9 && periods <= 20.0) {
            return Err(Error::invalid(format!(
                "integration time {} s must be 1..=20 whole code periods",
                self.integration_time
            )));
        }
        if !(self.el_spacing > 0.0 && self.el_spacing <= 1.0) {
            return Err(Error::invalid("el_spacing must lie in (0, 1]"));
        }
        if !(self.dll_bandwidth > 0.0 && self.pll_bandwidth > 0.0 && self.fll_bandwidth > 0.0) {
            return Err(Error::invalid("loop bandwidths must be positive"));
        }
        if self.lock_window < MIN_LOCK_WINDOW {
            return Err(Error::invalid(format!(
                "lock window must be at least {MIN_LOCK_WINDOW} epochs"
            )));
        }
        Ok(())
    }

    fn periods(&self) -> usize {
        (self.integration_time / CODE_PERIOD).round() as usize
    }
}

/// One integration interval of a tracking channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorEpoch {
    pub t: f64,
    pub e: Complex64,
    pub p: Complex64,
    pub l: Complex64,
    pub cn0_est: Option<f64>,
    pub clt_est: Option<f64>,
    /// Estimated incoming code phase at `t`, chips.
    pub code_phase: f64,
    /// Hz.
    pub doppler: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LockStatus {
    Pass,
    FailCode,
    FailCarrier,
    FailBoth,
}

impl LockStatus {
    pub fn passed(self) -> bool {
        self == LockStatus::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChannelStatus {
    Completed,
    LossOfLock { epoch: usize, t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrack {
    pub prn: u8,
    pub epochs: Vec<CorrelatorEpoch>,
    pub status: ChannelStatus,
}

/// Matched-filter product of an incoming sample and a replica, written out
/// as `(I*I_rep + Q*Q_rep) + j(Q*I_rep - Q_rep*I)`.
pub fn matched_product(x: Complex64, replica: Complex64) -> Complex64 {
    Complex64::new(
        x.re * replica.re + x.im * replica.im,
        x.im * replica.re - replica.im * x.re,
    )
}

fn mix_period(samples: &[Complex32], start: usize, n: usize, doppler: f64, fs: f64) -> Vec<Complex64> {
    let w = -TAU * doppler / fs;
    let rot = Complex64::from_polar(1.0, w);
    let mut ph = Complex64::from_polar(1.0, w * start as f64);
    samples[start..start + n]
        .iter()
        .map(|x| {
            let v = Complex64::new(f64::from(x.re), f64::from(x.im)) * ph;
            ph *= rot;
            v
        })
        .collect()
}

/// Coherent correlation of one code period at a fixed sample lag.
fn correlate_at(samples: &[Complex32], start: usize, replica: &[i8], lag: usize, doppler: f64, fs: f64) -> Complex64 {
    let n = replica.len();
    let mixed = mix_period(samples, start, n, doppler, fs);
    mixed
        .iter()
        .enumerate()
        .map(|(i, &x)| x * f64::from(replica[(i + n - lag) % n]))
        .sum()
}

/// Serial-frequency, parallel-code-phase search followed by a fine Doppler
/// refinement around the winning cell.
pub fn acquire(iq: &IqStream, prn: u8, doppler_range: f64, doppler_bin: f64) -> Result<AcquisitionResult> {
    let cfg = AcquisitionConfig {
        doppler_range,
        doppler_bin,
        ..AcquisitionConfig::default()
    };
    acquire_with(iq, prn, &cfg)
}

pub fn acquire_with(iq: &IqStream, prn: u8, cfg: &AcquisitionConfig) -> Result<AcquisitionResult> {
    let code = prn::generate_ca_code(prn)?;
    let fs = iq.sample_rate;
    let n = samples_per_period(fs);
    if iq.len() < 2 * n {
        return Err(Error::invalid(format!(
            "acquisition needs at least two code periods ({} samples), got {}",
            2 * n,
            iq.len()
        )));
    }
    if !(cfg.doppler_bin > 0.0 && cfg.doppler_bin <= 1.0 / (2.0 * CODE_PERIOD)) {
        return Err(Error::invalid(format!(
            "doppler bin {} Hz must lie in (0, 500] Hz",
            cfg.doppler_bin
        )));
    }
    if !(cfg.doppler_range >= 0.0 && cfg.doppler_range.is_finite()) {
        return Err(Error::invalid("doppler range must be finite and >= 0"));
    }
    let periods = cfg.periods.clamp(1, iq.len() / n);
    let replica = prn::sample_code(&code, fs, CHIP_RATE, 0.0, n)?;

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut rep_fft: Vec<Complex64> = replica.iter().map(|&c| Complex64::new(f64::from(c), 0.0)).collect();
    fwd.process(&mut rep_fft);
    for v in rep_fft.iter_mut() {
        *v = v.conj();
    }

    let nbins = (cfg.doppler_range / cfg.doppler_bin).floor() as i64;
    let mut best = (f64::MIN, 0usize, 0.0f64);
    let mut best_row = Vec::new();
    for b in -nbins..=nbins {
        let f = b as f64 * cfg.doppler_bin;
        let mut power = vec![0.0f64; n];
        for p in 0..periods {
            let mut buf = mix_period(&iq.samples, p * n, n, f, fs);
            fwd.process(&mut buf);
            for (x, r) in buf.iter_mut().zip(&rep_fft) {
                *x *= r;
            }
            inv.process(&mut buf);
            for (acc, v) in power.iter_mut().zip(&buf) {
                *acc += v.norm_sqr();
            }
        }
        let (k, &peak) = power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("n > 0");
        if peak > best.0 {
            best = (peak, k, f);
            best_row = power;
        }
    }
    let (peak, lag, coarse) = best;
    let exclusion = (fs / CHIP_RATE).ceil() as usize;
    let second = best_row
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let d = k.abs_diff(lag);
            d.min(n - d) > exclusion
        })
        .map(|(_, &v)| v)
        .fold(0.0f64, f64::max);
    let peak_metric = if second > 0.0 { peak / second } else { f64::INFINITY };

    // Fine search at the winning lag.
    let steps = 10;
    let mut fine = (f64::MIN, coarse);
    for s in -steps..=steps {
        let f = coarse + s as f64 * cfg.doppler_bin / (2 * steps) as f64;
        let pw: f64 = (0..periods)
            .map(|p| correlate_at(&iq.samples, p * n, &replica, lag, f, fs).norm_sqr())
            .sum();
        if pw > fine.0 {
            fine = (pw, f);
        }
    }
    let doppler = fine.1;
    let carrier_phase = correlate_at(&iq.samples, 0, &replica, lag, doppler, fs).arg();
    let step = CHIP_RATE / fs;
    let code_phase = (((n - lag) % n) as f64 * step).rem_euclid(CODE_LENGTH as f64);
    Ok(AcquisitionResult {
        prn,
        code_phase,
        doppler,
        peak_metric,
        acquired: peak_metric >= cfg.threshold,
        carrier_phase,
    })
}

/// Narrowband-to-wideband power ratio C/N0 estimate, dB-Hz. Data bits are
/// wiped off with the sign of the in-phase prompt before the narrowband sum.
pub fn estimate_cn0(prompts: &[Complex64], integration_time: f64) -> Option<f64> {
    if prompts.len() < MIN_LOCK_WINDOW {
        return None;
    }
    let blocks = prompts.len() / NWPR_BLOCK;
    let used = &prompts[prompts.len() - blocks * NWPR_BLOCK..];
    let mut np = 0.0;
    for block in used.chunks_exact(NWPR_BLOCK) {
        let mut nb = Complex64::new(0.0, 0.0);
        let mut wbp = 0.0;
        for &p in block {
            nb += if p.re < 0.0 { -p } else { p };
            wbp += p.norm_sqr();
        }
        if wbp == 0.0 {
            return None;
        }
        np += nb.norm_sqr() / wbp;
    }
    np /= blocks as f64;
    let k = NWPR_BLOCK as f64;
    let ratio = (np - 1.0) / (k - np) / integration_time;
    let db = if np >= k || !ratio.is_finite() {
        CN0_CEILING
    } else if ratio <= 0.0 {
        0.0
    } else {
        10.0 * ratio.log10()
    };
    Some(db.clamp(0.0, CN0_CEILING))
}

/// Estimate of cos(2 * carrier phase error): `(sum I^2 - sum Q^2) / (sum I^2 + sum Q^2)`.
pub fn carrier_lock_metric(prompts: &[Complex64]) -> Option<f64> {
    if prompts.len() < MIN_LOCK_WINDOW {
        return None;
    }
    let (i2, q2) = prompts
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.re * p.re, b + p.im * p.im));
    let den = i2 + q2;
    if den == 0.0 {
        return None;
    }
    Some(((i2 - q2) / den).clamp(-1.0, 1.0))
}

pub fn lock_tests(epoch: &CorrelatorEpoch, cfg: &TrackingConfig) -> LockStatus {
    let code_ok = epoch.cn0_est.is_some_and(|c| c >= cfg.gamma_code);
    let carrier_ok = epoch.clt_est.is_some_and(|c| c >= cfg.gamma_carrier);
    match (code_ok, carrier_ok) {
        (true, true) => LockStatus::Pass,
        (false, true) => LockStatus::FailCode,
        (true, false) => LockStatus::FailCarrier,
        (false, false) => LockStatus::FailBoth,
    }
}

/// Replica value averaged over the code interval `[phase - width/2, phase + width/2)`.
fn integrated_chip(chips: &[f32], phase: f64, width: f64) -> f64 {
    let len = CODE_LENGTH as f64;
    let lo = (phase - width / 2.0).rem_euclid(len);
    let idx = lo as usize % CODE_LENGTH;
    let first = f64::from(chips[idx]);
    let boundary = lo.floor() + 1.0;
    let hi = lo + width;
    if hi <= boundary {
        return first;
    }
    let next = f64::from(chips[(idx + 1) % CODE_LENGTH]);
    let w = (boundary - lo) / width;
    w * first + (1.0 - w) * next
}

/// Code-period-aligned early/prompt/late tracking with a carrier-aided
/// first-order DLL and a second-order Costas PLL (frequency-assisted during
/// pull-in).
pub fn track_channel(iq: &IqStream, init: &AcquisitionResult, cfg: &TrackingConfig) -> Result<ChannelTrack> {
    cfg.validate()?;
    if !init.acquired {
        return Err(Error::invalid(format!("PRN {} was not acquired", init.prn)));
    }
    let code = prn::generate_ca_code(init.prn)?;
    let chips: Vec<f32> = code.to_f32();
    let fs = iq.sample_rate;
    let t_int = cfg.integration_time;
    let span = (CODE_LENGTH * cfg.periods()) as f64;
    let half = cfg.el_spacing / 2.0;
    let samples = &iq.samples;

    // PLL and DLL gains.
    let zeta = std::f64::consts::FRAC_1_SQRT_2;
    let wn = cfg.pll_bandwidth * 8.0 * zeta / (4.0 * zeta * zeta + 1.0);
    let k_dll = 4.0 * cfg.dll_bandwidth;
    let k_fll = 4.0 * cfg.fll_bandwidth * t_int;

    let code_rate = |f: f64, corr: f64| (CHIP_RATE * (1.0 + f / L1_FREQ) + corr) / fs;

    // Advance to the first code period boundary.
    let mut freq = init.doppler;
    let mut freq_int = 0.0; // Hz, PLL integrator state
    let rate0 = code_rate(freq, 0.0);
    let mut pos = if init.code_phase > 0.0 {
        ((CODE_LENGTH as f64 - init.code_phase) / rate0).ceil() as usize
    } else {
        0
    };
    let mut code_phase = (init.code_phase + pos as f64 * rate0).rem_euclid(CODE_LENGTH as f64);
    if code_phase > CODE_LENGTH as f64 - 1.0 {
        code_phase -= CODE_LENGTH as f64;
    }
    let mut theta = init.carrier_phase + TAU * freq * pos as f64 / fs;
    let mut code_corr = 0.0; // chips/s
    let t_first = iq.t0 + pos as f64 / fs;

    let mut epochs: Vec<CorrelatorEpoch> = Vec::new();
    let mut history: Vec<Complex64> = Vec::new();
    let mut prev_p: Option<Complex64> = None;
    let mut fails = 0usize;
    let mut status = ChannelStatus::Completed;

    loop {
        let rate = code_rate(freq, code_corr);
        let n = ((span - code_phase) / rate).ceil().max(1.0) as usize;
        if pos + n > samples.len() {
            break;
        }
        let w = -TAU * freq / fs;
        let rot = Complex64::from_polar(1.0, w);
        let mut ph = Complex64::from_polar(1.0, -theta);
        let (mut e, mut p, mut l) = (
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
        );
        let len = CODE_LENGTH as f64;
        for (i, x) in samples[pos..pos + n].iter().enumerate() {
            let phase = code_phase + i as f64 * rate;
            let v = Complex64::new(f64::from(x.re), f64::from(x.im)) * ph;
            e += v * integrated_chip(&chips, phase + half, rate);
            p += v * integrated_chip(&chips, phase, rate);
            l += v * integrated_chip(&chips, phase - half, rate);
            ph *= rot;
        }
        let k = epochs.len();
        let t = t_first + k as f64 * t_int;
        let t_actual = iq.t0 + pos as f64 / fs;
        let est_phase = (code_phase + rate * fs * (t - t_actual)).rem_euclid(len);

        code_phase += n as f64 * rate - span;
        theta = (theta + TAU * freq * n as f64 / fs).rem_euclid(TAU);
        pos += n;

        history.push(p);
        if history.len() > cfg.lock_window {
            history.remove(0);
        }
        let cn0_est = estimate_cn0(&history, t_int);
        let clt_est = carrier_lock_metric(&history);
        epochs.push(CorrelatorEpoch {
            t,
            e,
            p,
            l,
            cn0_est,
            clt_est,
            code_phase: est_phase,
            doppler: freq,
        });

        // Delay lock loop.
        let (ea, la) = (e.norm(), l.norm());
        let d = if ea + la > 0.0 { (ea - la) / (ea + la) } else { 0.0 };
        let chip_err = d * (2.0 - cfg.el_spacing) / 2.0;
        code_corr = k_dll * chip_err;

        // Phase lock loop.
        let phase_err = if p.re != 0.0 {
            (p.im / p.re).atan()
        } else if p.im != 0.0 {
            PI / 2.0 * p.im.signum()
        } else {
            0.0
        };
        freq_int += wn * wn * t_int * phase_err / TAU;
        if k < cfg.pull_in_epochs {
            if let Some(q) = prev_p {
                let cross = q.re * p.im - p.re * q.im;
                let dot = q.re * p.re + q.im * p.im;
                if dot != 0.0 {
                    let f_err = (cross / dot).atan() / (TAU * t_int);
                    freq_int += k_fll * f_err;
                }
            }
        }
        prev_p = Some(p);
        freq = init.doppler + freq_int + 2.0 * zeta * wn * phase_err / TAU;

        if cn0_est.is_some_and(|c| c < cfg.gamma_code) {
            fails += 1;
            if fails >= cfg.loss_of_lock_epochs {
                status = ChannelStatus::LossOfLock { epoch: k, t };
                break;
            }
        } else {
            fails = 0;
        }
    }

    Ok(ChannelTrack {
        prn: init.prn,
        epochs,
        status,
    })
}

/// Tracks several acquired channels of the same stream concurrently.
pub fn track_all(iq: &IqStream, inits: &[AcquisitionResult], cfg: &TrackingConfig) -> Result<Vec<ChannelTrack>> {
    inits.par_iter().map(|a| track_channel(iq, a, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch(cn0: f64, clt: f64) -> CorrelatorEpoch {
        CorrelatorEpoch {
            t: 0.0,
            e: Complex64::new(0.0, 0.0),
            p: Complex64::new(0.0, 0.0),
            l: Complex64::new(0.0, 0.0),
            cn0_est: Some(cn0),
            clt_est: Some(clt),
            code_phase: 0.0,
            doppler: 0.0,
        }
    }

    #[test]
    fn lock_test_outcomes() {
        let cfg = TrackingConfig::default();
        assert_eq!(lock_tests(&epoch(40.0, 0.9), &cfg), LockStatus::Pass);
        assert_eq!(lock_tests(&epoch(30.0, 0.9), &cfg), LockStatus::FailCode);
        assert_eq!(lock_tests(&epoch(40.0, 0.3), &cfg), LockStatus::FailCarrier);
        assert_eq!(lock_tests(&epoch(30.0, 0.3), &cfg), LockStatus::FailBoth);
        let mut none = epoch(40.0, 0.9);
        none.cn0_est = None;
        assert_eq!(lock_tests(&none, &cfg), LockStatus::FailCode);
    }

    #[test]
    fn carrier_lock_metric_cases() {
        let locked: Vec<_> = (0..20)
            .map(|i| Complex64::new(if i % 3 == 0 { -5.0 } else { 5.0 }, 0.0))
            .collect();
        assert_eq!(carrier_lock_metric(&locked), Some(1.0));
        let quad: Vec<_> = (0..20).map(|_| Complex64::new(0.0, 3.0)).collect();
        assert_eq!(carrier_lock_metric(&quad), Some(-1.0));
        let diag: Vec<_> = (0..20).map(|_| Complex64::from_polar(2.0, PI / 4.0)).collect();
        assert!(carrier_lock_metric(&diag).unwrap().abs() < 1e-12);
        assert_eq!(carrier_lock_metric(&[Complex64::new(0.0, 0.0); 20]), None);
        assert_eq!(carrier_lock_metric(&locked[..19]), None);
    }

    #[test]
    fn cn0_needs_a_full_window() {
        let p = vec![Complex64::new(1.0, 0.0); 19];
        assert_eq!(estimate_cn0(&p, 1e-3), None);
    }

    #[test]
    fn cn0_saturates_without_noise() {
        let p: Vec<_> = (0..20)
            .map(|i| Complex64::new(if (i / 7) % 2 == 0 { 3.0 } else { -3.0 }, 0.0))
            .collect();
        assert!(estimate_cn0(&p, 1e-3).unwrap() > 55.0);
    }

    #[test]
    fn matched_product_expansion() {
        let x = Complex64::new(0.3, -1.7);
        let r = Complex64::new(-0.8, 0.25);
        assert_eq!(matched_product(x, r), x * r.conj());
    }

    #[test]
    fn tracking_config_validation() {
        let mut c = TrackingConfig::default();
        assert!(c.validate().is_ok());
        c.integration_time = 1.5e-3;
        assert!(c.validate().is_err());
        c = TrackingConfig::default();
        c.el_spacing = 1.5;
        assert!(c.validate().is_err());
        c = TrackingConfig::default();
        c.lock_window = 10;
        assert!(c.validate().is_err());
    }
}
