//! Six-dimensional high/low correlator fingerprints.
//!
//! Epochs that fail either lock test are dropped. The survivors are grouped
//! into non-overlapping windows, and each window is summarised by the mean of
//! the strictly positive and the strictly negative real parts of the early,
//! prompt and late correlators. Epochs with a real part of exactly zero count
//! toward neither side.
//!
//! A window that starts on a navigation bit edge holds a single bit and so
//! only one prompt sign. With `bit_sync` on, the extractor locates the bit
//! edges from prompt sign flips and starts every window half a bit after one,
//! so that any bit transition falls mid-window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::receiver::{lock_tests, CorrelatorEpoch, TrackingConfig};

pub const FEATURE_DIM: usize = 6;
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = ["e_high", "e_low", "p_high", "p_low", "l_high", "l_low"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Timestamp of the window's first epoch.
    pub t_start: f64,
    /// End of the window's last integration interval.
    pub t: f64,
    pub prn: u8,
    pub e_high: f64,
    pub e_low: f64,
    pub p_high: f64,
    pub p_low: f64,
    pub l_high: f64,
    pub l_low: f64,
}

impl FeatureVector {
    pub fn values(&self) -> [f64; FEATURE_DIM] {
        [
            self.e_high,
            self.e_low,
            self.p_high,
            self.p_low,
            self.l_high,
            self.l_low,
        ]
    }

    pub fn from_values(t_start: f64, t: f64, prn: u8, v: [f64; FEATURE_DIM]) -> Self {
        Self {
            t_start,
            t,
            prn,
            e_high: v[0],
            e_low: v[1],
            p_high: v[2],
            p_low: v[3],
            l_high: v[4],
            l_low: v[5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureWindowConfig {
    pub window_len: usize,
    pub min_pos: usize,
    pub min_neg: usize,
    /// Align windows to the navigation bit edges found in the prompt signs.
    /// Off, windows simply follow each other from the first surviving epoch.
    pub bit_sync: bool,
}

impl Default for FeatureWindowConfig {
    fn default() -> Self {
        Self {
            window_len: 20,
            min_pos: 3,
            min_neg: 3,
            bit_sync: true,
        }
    }
}

impl FeatureWindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.window_len < self.min_pos + self.min_neg {
            return Err(Error::invalid(format!(
                "window_len {} must be positive and at least min_pos + min_neg = {}",
                self.window_len,
                self.min_pos + self.min_neg
            )));
        }
        Ok(())
    }
}

#[derive(Default, Clone, Copy)]
struct SignSplit {
    pos_sum: f64,
    pos_n: usize,
    neg_sum: f64,
    neg_n: usize,
}

impl SignSplit {
    fn push(&mut self, x: f64) {
        if x > 0.0 {
            self.pos_sum += x;
            self.pos_n += 1;
        } else if x < 0.0 {
            self.neg_sum += x;
            self.neg_n += 1;
        }
    }

    fn means(&self) -> Option<(f64, f64)> {
        (self.pos_n > 0 && self.neg_n > 0).then(|| (self.pos_sum / self.pos_n as f64, self.neg_sum / self.neg_n as f64))
    }
}

/// Reduces one window of lock-filtered epochs to a feature vector, or `None`
/// when the prompt sign mix is too thin or any side of E/P/L is empty.
pub fn window_features(
    window: &[CorrelatorEpoch],
    prn: u8,
    cfg: &FeatureWindowConfig,
    integration_time: f64,
) -> Option<FeatureVector> {
    let (first, last) = (window.first()?, window.last()?);
    let mut split = [SignSplit::default(); 3];
    for ep in window {
        split[0].push(ep.e.re);
        split[1].push(ep.p.re);
        split[2].push(ep.l.re);
    }
    if split[1].pos_n < cfg.min_pos || split[1].neg_n < cfg.min_neg {
        return None;
    }
    let (eh, el) = split[0].means()?;
    let (ph, pl) = split[1].means()?;
    let (lh, ll) = split[2].means()?;
    Some(FeatureVector::from_values(
        first.t,
        last.t + integration_time,
        prn,
        [eh, el, ph, pl, lh, ll],
    ))
}

/// Navigation bit duration in seconds.
const BIT_PERIOD: f64 = 0.02;
/// Weight kept by every edge-histogram bin each time a sign flip is seen.
const EDGE_DECAY: f64 = 0.8;
/// Weight the leading bin needs before its phase is trusted.
const EDGE_MIN: f64 = 3.0;

/// Running estimate of where bit edges fall, as a phase in epochs modulo the
/// bit period. Old flips fade out so that a change of transmitter is followed.
#[derive(Debug, Clone)]
struct BitSync {
    bins: Vec<f64>,
    last: Option<(i64, bool)>,
}

impl BitSync {
    fn new(period: usize) -> Self {
        Self {
            bins: vec![0.0; period],
            last: None,
        }
    }

    fn observe(&mut self, slot: i64, p_re: f64) {
        if p_re == 0.0 {
            self.last = None;
            return;
        }
        let positive = p_re > 0.0;
        if let Some((prev, was_positive)) = self.last {
            if prev + 1 == slot && was_positive != positive {
                self.bins.iter_mut().for_each(|b| *b *= EDGE_DECAY);
                let at = slot.rem_euclid(self.bins.len() as i64) as usize;
                self.bins[at] += 1.0;
            }
        }
        self.last = Some((slot, positive));
    }

    fn forget_last(&mut self) {
        self.last = None;
    }

    /// Slot phase of the bit edges, once one phase clearly dominates.
    fn edge(&self) -> Option<usize> {
        let (mut best, mut second, mut at) = (0.0, 0.0, 0);
        for (i, &b) in self.bins.iter().enumerate() {
            if b > best {
                (second, best, at) = (best, b, i);
            } else if b > second {
                second = b;
            }
        }
        (best >= EDGE_MIN && best >= 2.0 * second).then_some(at)
    }
}

/// Streaming form of [`extract_features`]: holds at most one window of
/// surviving epochs.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    prn: u8,
    cfg: FeatureWindowConfig,
    trk: TrackingConfig,
    buf: Vec<CorrelatorEpoch>,
    sync: Option<BitSync>,
    t_ref: Option<f64>,
    last_slot: i64,
    passed: usize,
    dropped: usize,
}

impl FeatureExtractor {
    pub fn new(prn: u8, cfg: FeatureWindowConfig, trk: TrackingConfig) -> Result<Self> {
        cfg.validate()?;
        trk.validate()?;
        let period = (BIT_PERIOD / trk.integration_time).round() as usize;
        let sync = (cfg.bit_sync && period >= 2).then(|| BitSync::new(period));
        Ok(Self {
            prn,
            cfg,
            trk,
            buf: Vec::with_capacity(cfg.window_len),
            sync,
            t_ref: None,
            last_slot: 0,
            passed: 0,
            dropped: 0,
        })
    }

    pub fn push(&mut self, epoch: &CorrelatorEpoch) -> Option<FeatureVector> {
        let t_ref = *self.t_ref.get_or_insert(epoch.t);
        let slot = ((epoch.t - t_ref) / self.trk.integration_time).round() as i64;
        if !lock_tests(epoch, &self.trk).passed() {
            self.dropped += 1;
            if let Some(sync) = &mut self.sync {
                sync.forget_last();
                self.buf.clear();
            }
            return None;
        }
        self.passed += 1;
        if let Some(sync) = &mut self.sync {
            sync.observe(slot, epoch.p.re);
            if !self.buf.is_empty() && slot != self.last_slot + 1 {
                self.buf.clear();
            }
            if self.buf.is_empty() {
                let period = sync.bins.len() as i64;
                let edge = sync.edge()? as i64;
                if (slot - edge - period / 2).rem_euclid(period) != 0 {
                    return None;
                }
            }
            self.last_slot = slot;
        }
        self.buf.push(*epoch);
        if self.buf.len() < self.cfg.window_len {
            return None;
        }
        let out = window_features(&self.buf, self.prn, &self.cfg, self.trk.integration_time);
        self.buf.clear();
        out
    }

    /// Largest number of epochs ever held at once.
    pub fn capacity_bound(&self) -> usize {
        self.cfg.window_len
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Epochs that passed / failed the lock tests so far.
    pub fn counts(&self) -> (usize, usize) {
        (self.passed, self.dropped)
    }
}

pub fn extract_features(
    epochs: &[CorrelatorEpoch],
    prn: u8,
    cfg: &FeatureWindowConfig,
    trk: &TrackingConfig,
) -> Result<Vec<FeatureVector>> {
    let mut ex = FeatureExtractor::new(prn, *cfg, trk.clone())?;
    Ok(epochs.iter().filter_map(|e| ex.push(e)).collect())
}

/// Provenance of one pooled feature row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowTag {
    pub dataset: String,
    pub prn: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<[f64; FEATURE_DIM]>,
    pub tags: Vec<RowTag>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Builds a matrix from untyped rows, rejecting any row whose length is not 6.
    pub fn from_rows(rows: &[Vec<f64>], tags: Vec<RowTag>) -> Result<Self> {
        if rows.len() != tags.len() {
            return Err(Error::invalid(format!("{} rows but {} tags", rows.len(), tags.len())));
        }
        let mut out = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let arr: [f64; FEATURE_DIM] = r
                .as_slice()
                .try_into()
                .map_err(|_| Error::invalid(format!("row {i} has dimension {}, expected {FEATURE_DIM}", r.len())))?;
            out.push(arr);
        }
        Ok(Self { rows: out, tags })
    }

    pub fn select(&self, mut keep: impl FnMut(&RowTag) -> bool) -> Self {
        let (rows, tags) = self
            .rows
            .iter()
            .zip(&self.tags)
            .filter(|(_, t)| keep(t))
            .map(|(r, t)| (*r, t.clone()))
            .unzip();
        Self { rows, tags }
    }
}

/// Pools per-dataset feature sequences, tagging each row with its dataset id
/// and PRN.
pub fn feature_template(datasets: &[(String, Vec<FeatureVector>)]) -> FeatureMatrix {
    let mut m = FeatureMatrix::default();
    for (id, fvs) in datasets {
        for f in fvs {
            m.rows.push(f.values());
            m.tags.push(RowTag {
                dataset: id.clone(),
                prn: f.prn,
            });
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn ep(t: f64, re: f64) -> CorrelatorEpoch {
        CorrelatorEpoch {
            t,
            e: Complex64::new(0.8 * re, 0.0),
            p: Complex64::new(re, 0.0),
            l: Complex64::new(0.7 * re, 0.0),
            cn0_est: Some(45.0),
            clt_est: Some(0.95),
            code_phase: 0.0,
            doppler: 0.0,
        }
    }

    fn alternating(n: usize) -> Vec<CorrelatorEpoch> {
        (0..n)
            .map(|i| ep(i as f64 * 1e-3, if i % 2 == 0 { 4.0 } else { -4.0 }))
            .collect()
    }

    fn unsynced() -> FeatureWindowConfig {
        FeatureWindowConfig {
            bit_sync: false,
            ..Default::default()
        }
    }

    /// 20-epoch bits with the given signs, starting exactly on a bit edge.
    fn bits(signs: &[f64]) -> Vec<CorrelatorEpoch> {
        signs
            .iter()
            .flat_map(|&s| std::iter::repeat_n(s, 20))
            .enumerate()
            .map(|(i, s)| ep(i as f64 * 1e-3, 4.0 * s))
            .collect()
    }

    #[test]
    fn balanced_constant_window() {
        let f = extract_features(&alternating(40), 3, &unsynced(), &Default::default()).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].p_high, 4.0);
        assert_eq!(f[0].p_low, -4.0);
        assert!((f[0].e_high - 3.2).abs() < 1e-12);
        assert_eq!(f[0].t_start, 0.0);
        assert!((f[0].t - 0.02).abs() < 1e-12);
    }

    #[test]
    fn lock_failures_drop_everything() {
        let mut eps = alternating(60);
        for e in &mut eps {
            e.cn0_est = Some(20.0);
        }
        let f = extract_features(&eps, 3, &unsynced(), &Default::default()).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn edge_aligned_windows_need_bit_sync() {
        let signs: Vec<f64> = (0..40)
            .map(|i| if (i * 7 + i / 3) % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let eps = bits(&signs);
        assert!(extract_features(&eps, 5, &unsynced(), &Default::default())
            .unwrap()
            .is_empty());

        let f = extract_features(&eps, 5, &Default::default(), &Default::default()).unwrap();
        let flips = signs.windows(2).filter(|w| w[0] != w[1]).count();
        assert!(f.len() >= flips / 2, "{} windows for {flips} flips", f.len());
        for v in &f {
            let start = (v.t_start * 1e3).round() as i64;
            assert_eq!(start.rem_euclid(20), 10, "window at {}", v.t_start);
            assert_eq!((v.p_high, v.p_low), (4.0, -4.0));
        }
    }

    #[test]
    fn bit_sync_follows_a_shifted_transmitter() {
        let signs: Vec<f64> = (0..60)
            .map(|i| if (i * 5 + i / 4) % 3 == 0 { 1.0 } else { -1.0 })
            .collect();
        let mut eps = bits(&signs);
        // From epoch 600 on, the bit edges move 7 epochs later.
        let shifted: Vec<f64> = eps.iter().map(|e| e.p.re).collect();
        for (i, e) in eps.iter_mut().enumerate().skip(600) {
            let v = shifted[i - 7];
            *e = ep(e.t, v);
        }
        let f = extract_features(&eps, 5, &Default::default(), &Default::default()).unwrap();
        let late: Vec<_> = f.iter().filter(|v| v.t_start > 0.9).collect();
        assert!(!late.is_empty());
        for v in late {
            let start = (v.t_start * 1e3).round() as i64;
            assert_eq!(start.rem_euclid(20), 17, "window at {}", v.t_start);
        }
    }

    #[test]
    fn one_sided_windows_are_skipped() {
        let eps: Vec<_> = (0..20).map(|i| ep(i as f64, 2.0)).collect();
        let f = extract_features(&eps, 1, &unsynced(), &Default::default()).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn zero_real_parts_count_on_neither_side() {
        let mut eps = alternating(20);
        eps[0].p.re = 0.0;
        let w = window_features(&eps, 1, &Default::default(), 1e-3).unwrap();
        assert_eq!(w.p_high, 4.0);
    }

    #[test]
    fn empty_input() {
        let f = extract_features(&[], 1, &Default::default(), &Default::default()).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn config_validation() {
        let bad = FeatureWindowConfig {
            window_len: 5,
            min_pos: 3,
            min_neg: 3,
            bit_sync: true,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn template_union_and_tags() {
        let mk = |n: usize, prn: u8| -> Vec<FeatureVector> {
            (0..n)
                .map(|i| FeatureVector::from_values(0.0, i as f64, prn, [1.0, -1.0, 2.0, -2.0, 1.0, -1.0]))
                .collect()
        };
        let m = feature_template(&[("a".into(), mk(10, 3)), ("b".into(), mk(15, 9))]);
        assert_eq!(m.len(), 25);
        assert_eq!(
            m.tags[12],
            RowTag {
                dataset: "b".into(),
                prn: 9
            }
        );
        assert!(feature_template(&[]).is_empty());
        assert_eq!(m.select(|t| t.prn == 3).len(), 10);
    }

    #[test]
    fn from_rows_checks_dimension() {
        let tag = RowTag {
            dataset: "x".into(),
            prn: 1,
        };
        assert!(FeatureMatrix::from_rows(&[vec![0.0; 5]], vec![tag.clone()]).is_err());
        assert!(FeatureMatrix::from_rows(&[vec![0.0; 6]], vec![tag]).is_ok());
    }
}
