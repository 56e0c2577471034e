//! Training, equal-error-rate thresholding, evaluation, cross-validation,
//! streaming decisions and attacker-timing metrics.
//!
//! Rates use "accepted as authentic" as the positive outcome: FPR is the
//! fraction of spoofed sample points accepted, FNR the fraction of genuine
//! sample points rejected. [`EvalReport::swapped`] flips the convention.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureMatrix, FeatureVector, FeatureWindowConfig, FEATURE_DIM};
use crate::mvn::{log_mean_exp, Averaging, MvnModel, DEFAULT_EPS};
use crate::receiver::{CorrelatorEpoch, TrackingConfig};
use crate::seed::{self, TAG_SPLIT};
use crate::sim::{Label, LabelTimeline};

pub const PVT_MIN_PRNS: usize = 4;
pub const LOCK_SECONDS: f64 = 30.0;
/// Decisions closer than this are treated as adjacent.
const GAP_TOLERANCE_S: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Authentic,
    Malicious,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Authentic => "authentic",
            Verdict::Malicious => "malicious",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    /// Set at the equal-error point between held-out genuine and spoofed scores.
    Eer,
    /// No spoofed scores were available; set at a low quantile of genuine scores.
    GenuineQuantile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorProfile {
    pub model: MvnModel,
    pub log_threshold: f64,
    pub n_avg: usize,
    pub averaging: Averaging,
    pub window: FeatureWindowConfig,
    pub trained_on: Vec<String>,
    pub threshold_source: ThresholdSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub holdout_fraction: f64,
    pub seed: u64,
    pub eps: f64,
    pub n_avg: usize,
    pub averaging: Averaging,
    /// Genuine-score quantile used when no spoofed data is supplied.
    pub fallback_quantile: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.2,
            seed: 0,
            eps: DEFAULT_EPS,
            n_avg: 1,
            averaging: Averaging::Scores,
            fallback_quantile: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::invalid("holdout fraction must lie in [0, 1)"));
        }
        if self.n_avg == 0 {
            return Err(Error::invalid("n_avg must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.fallback_quantile) {
            return Err(Error::invalid("fallback quantile must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fpr: f64,
    pub fnr: f64,
    /// Equal error rate of the evaluated score sets themselves.
    pub eer: f64,
    pub threshold: f64,
    pub n_avg: usize,
    pub counts: Counts,
}

impl EvalReport {
    pub fn from_counts(counts: Counts, eer: f64, threshold: f64, n_avg: usize) -> Self {
        Self {
            fpr: ratio(counts.fp, counts.fp + counts.tn),
            fnr: ratio(counts.fn_, counts.fn_ + counts.tp),
            eer,
            threshold,
            n_avg,
            counts,
        }
    }

    /// The same report with "rejected as malicious" as the positive outcome.
    pub fn swapped(&self) -> Self {
        let c = Counts {
            tp: self.counts.tn,
            tn: self.counts.tp,
            fp: self.counts.fn_,
            fn_: self.counts.fp,
        };
        Self::from_counts(c, self.eer, self.threshold, self.n_avg)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn check_scores(name: &str, s: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::invalid(format!("{name} score set is empty")));
    }
    if s.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid(format!("{name} scores contain NaN")));
    }
    Ok(())
}

/// Equal-error threshold over the sorted union of scores.
///
/// Candidate cut points are the distinct score values `t`, with
/// FPR(t) = share of spoofed scores `>= t` and FNR(t) = share of genuine
/// scores `< t`. The difference FPR - FNR is non-increasing in `t`, so its
/// sign change is found by bisection and the neighbours on either side are
/// compared; ties go to the lower FNR. The returned threshold sits strictly
/// between the chosen `t` and the next lower distinct score, so that
/// `score > threshold` accepts exactly the scores `>= t`. Returns
/// `(threshold, max(FPR, FNR))`.
pub fn eer_threshold(genuine: &[f64], spoofed: &[f64]) -> Result<(f64, f64)> {
    check_scores("genuine", genuine)?;
    check_scores("spoofed", spoofed)?;
    let mut g = genuine.to_vec();
    let mut s = spoofed.to_vec();
    g.sort_by(f64::total_cmp);
    s.sort_by(f64::total_cmp);
    let mut u: Vec<f64> = g.iter().chain(&s).copied().collect();
    u.sort_by(f64::total_cmp);
    u.dedup();

    let (ng, ns) = (g.len() as f64, s.len() as f64);
    let rates = |t: f64| {
        let s_below = s.partition_point(|&v| v < t);
        let g_below = g.partition_point(|&v| v < t);
        ((s.len() - s_below) as f64 / ns, g_below as f64 / ng)
    };
    let diff = |i: usize| {
        let (fpr, fnr) = rates(u[i]);
        fpr - fnr
    };
    // First index with FPR - FNR <= 0.
    let (mut lo, mut hi) = (0usize, u.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if diff(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for i in [lo.checked_sub(1), (lo < u.len()).then_some(lo)].into_iter().flatten() {
        let (fpr, fnr) = rates(u[i]);
        let gap = (fpr - fnr).abs();
        let better = match best {
            None => true,
            Some((_, bg, bfnr)) => gap < bg || (gap == bg && fnr < bfnr),
        };
        if better {
            best = Some((i, gap, fnr));
        }
    }
    let (i, _, _) = best.expect("non-empty union");
    let t = u[i];
    let (fpr, fnr) = rates(t);
    Ok((cut_below(&u, i), fpr.max(fnr)))
}

/// A finite value `c` with `u[i-1] <= c < u[i]`.
fn cut_below(u: &[f64], i: usize) -> f64 {
    let t = u[i];
    if t == f64::NEG_INFINITY {
        return f64::MIN;
    }
    let lower = if t == f64::INFINITY { f64::MAX } else { t.next_down() };
    match i.checked_sub(1).map(|j| u[j]) {
        Some(p) if p.is_finite() => {
            let mid = p + (t - p) / 2.0;
            if mid < t && mid >= p {
                mid
            } else {
                lower
            }
        }
        _ => lower,
    }
}

/// Log of the mean density of one block; Authentic iff strictly above the
/// profile threshold.
pub fn classify(window_scores: &[f64], profile: &DetectorProfile) -> Result<Verdict> {
    if window_scores.len() != profile.n_avg {
        return Err(Error::invalid(format!(
            "expected {} scores per decision, got {}",
            profile.n_avg,
            window_scores.len()
        )));
    }
    Ok(verdict(log_mean_exp(window_scores), profile.log_threshold))
}

fn verdict(score: f64, threshold: f64) -> Verdict {
    if score > threshold {
        Verdict::Authentic
    } else {
        Verdict::Malicious
    }
}

/// Groups rows by provenance tag (first-appearance order) so blocks never
/// straddle two channels.
fn groups(m: &FeatureMatrix) -> Vec<Vec<[f64; FEATURE_DIM]>> {
    let mut order: Vec<&crate::features::RowTag> = Vec::new();
    let mut by_tag: std::collections::HashMap<&crate::features::RowTag, Vec<[f64; FEATURE_DIM]>> =
        std::collections::HashMap::new();
    for (r, t) in m.rows.iter().zip(&m.tags) {
        by_tag
            .entry(t)
            .or_insert_with(|| {
                order.push(t);
                Vec::new()
            })
            .push(*r);
    }
    order
        .into_iter()
        .map(|t| by_tag.remove(t).unwrap_or_default())
        .collect()
}

/// Scores of disjoint `n`-row blocks, formed within each (dataset, PRN) group.
/// Trailing rows that do not fill a block are discarded.
pub fn block_scores(model: &MvnModel, m: &FeatureMatrix, n: usize, averaging: Averaging) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("block size must be at least 1"));
    }
    let mut out = Vec::new();
    for g in groups(m) {
        for block in g.chunks_exact(n) {
            out.push(model.avg_log_score(block, averaging)?);
        }
    }
    Ok(out)
}

/// Disjoint-block averages of per-sample log scores.
pub fn average_blocks(scores: &[f64], n: usize) -> Vec<f64> {
    scores.chunks_exact(n.max(1)).map(log_mean_exp).collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).floor() as usize;
    sorted[idx]
}

/// Fits the genuine model on a seeded `1 - holdout` share of `genuine` and
/// places the threshold at the equal-error point between the held-out genuine
/// blocks and all spoofed blocks.
pub fn train(genuine: &FeatureMatrix, spoofed: &FeatureMatrix, cfg: &TrainConfig) -> Result<DetectorProfile> {
    cfg.validate()?;
    let mut idx: Vec<usize> = (0..genuine.len()).collect();
    idx.shuffle(&mut seed::rng(cfg.seed, &[TAG_SPLIT]));
    let n_hold = (genuine.len() as f64 * cfg.holdout_fraction).round() as usize;
    let (hold_idx, fit_idx) = idx.split_at(n_hold);
    let mut hold_idx = hold_idx.to_vec();
    let mut fit_idx = fit_idx.to_vec();
    hold_idx.sort_unstable();
    fit_idx.sort_unstable();
    let pick = |ix: &[usize]| FeatureMatrix {
        rows: ix.iter().map(|&i| genuine.rows[i]).collect(),
        tags: ix.iter().map(|&i| genuine.tags[i].clone()).collect(),
    };
    let fit_set = pick(&fit_idx);
    let hold_set = if hold_idx.is_empty() {
        fit_set.clone()
    } else {
        pick(&hold_idx)
    };
    if fit_set.len() <= FEATURE_DIM {
        return Err(Error::InsufficientSamples {
            needed: FEATURE_DIM,
            got: fit_set.len(),
        });
    }
    let model = MvnModel::fit(&fit_set.rows, cfg.eps)?;
    let g_scores = block_scores(&model, &hold_set, cfg.n_avg, cfg.averaging)?;
    if g_scores.is_empty() {
        return Err(Error::InsufficientSamples {
            needed: cfg.n_avg,
            got: hold_set.len(),
        });
    }
    let s_scores = block_scores(&model, spoofed, cfg.n_avg, cfg.averaging)?;
    let (log_threshold, threshold_source) = if s_scores.is_empty() {
        let mut sorted = g_scores.clone();
        sorted.sort_by(f64::total_cmp);
        let q = quantile(&sorted, cfg.fallback_quantile);
        (q.next_down(), ThresholdSource::GenuineQuantile)
    } else {
        (eer_threshold(&g_scores, &s_scores)?.0, ThresholdSource::Eer)
    };
    let mut trained_on: Vec<String> = genuine
        .tags
        .iter()
        .chain(&spoofed.tags)
        .map(|t| t.dataset.clone())
        .collect();
    trained_on.sort();
    trained_on.dedup();
    Ok(DetectorProfile {
        model,
        log_threshold,
        n_avg: cfg.n_avg,
        averaging: cfg.averaging,
        window: FeatureWindowConfig::default(),
        trained_on,
        threshold_source,
    })
}

/// Applies the profile to disjoint `n_avg` blocks of both classes.
pub fn evaluate(profile: &DetectorProfile, genuine: &FeatureMatrix, spoofed: &FeatureMatrix) -> Result<EvalReport> {
    let g = block_scores(&profile.model, genuine, profile.n_avg, profile.averaging)?;
    let s = block_scores(&profile.model, spoofed, profile.n_avg, profile.averaging)?;
    for (scores, m) in [(&g, genuine), (&s, spoofed)] {
        if scores.is_empty() {
            return Err(Error::InsufficientSamples {
                needed: profile.n_avg,
                got: m.len(),
            });
        }
    }
    Ok(evaluate_scores(&g, &s, profile.log_threshold, profile.n_avg))
}

pub fn evaluate_scores(genuine: &[f64], spoofed: &[f64], threshold: f64, n_avg: usize) -> EvalReport {
    let mut c = Counts::default();
    for &v in genuine {
        match verdict(v, threshold) {
            Verdict::Authentic => c.tp += 1,
            Verdict::Malicious => c.fn_ += 1,
        }
    }
    for &v in spoofed {
        match verdict(v, threshold) {
            Verdict::Authentic => c.fp += 1,
            Verdict::Malicious => c.tn += 1,
        }
    }
    let eer = eer_threshold(genuine, spoofed)
        .map(|(_, e)| e)
        .unwrap_or_else(|_| ratio(c.fp, c.fp + c.tn).max(ratio(c.fn_, c.fn_ + c.tp)));
    EvalReport::from_counts(c, eer, threshold, n_avg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub id: String,
    pub genuine: FeatureMatrix,
    pub spoofed: FeatureMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub held_out: String,
    pub report: EvalReport,
}

/// Leave-one-dataset-out cross-validation.
pub fn kfold_xval(folds: &[Fold], cfg: &TrainConfig) -> Result<Vec<FoldReport>> {
    if folds.len() < 2 {
        return Err(Error::invalid(format!(
            "cross-validation needs at least 2 datasets, got {}",
            folds.len()
        )));
    }
    let mut out = Vec::with_capacity(folds.len());
    for (i, test) in folds.iter().enumerate() {
        let mut g = FeatureMatrix::default();
        let mut s = FeatureMatrix::default();
        for (j, f) in folds.iter().enumerate() {
            if j != i {
                g.rows.extend_from_slice(&f.genuine.rows);
                g.tags.extend_from_slice(&f.genuine.tags);
                s.rows.extend_from_slice(&f.spoofed.rows);
                s.tags.extend_from_slice(&f.spoofed.tags);
            }
        }
        let profile = train(&g, &s, cfg)?;
        out.push(FoldReport {
            held_out: test.id.clone(),
            report: evaluate(&profile, &test.genuine, &test.spoofed)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub t_start: f64,
    pub t_end: f64,
    pub prn: u8,
    pub score_log: f64,
    pub verdict: Verdict,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamResult {
    pub decisions: Vec<Decision>,
    /// Decisions passed downstream (Authentic).
    pub passed: usize,
    /// Decisions dropped (Malicious).
    pub dropped: usize,
}

/// Sliding blocks of `n_avg` consecutive feature vectors of one channel.
pub fn detect_features(
    features: &[FeatureVector],
    profile: &DetectorProfile,
    timeline: Option<&LabelTimeline>,
) -> Result<StreamResult> {
    let n = profile.n_avg;
    let mut res = StreamResult::default();
    if features.len() < n {
        return Ok(res);
    }
    for block in features.windows(n) {
        let rows: Vec<[f64; FEATURE_DIM]> = block.iter().map(FeatureVector::values).collect();
        let score_log = profile.model.avg_log_score(&rows, profile.averaging)?;
        let v = verdict(score_log, profile.log_threshold);
        let (t_start, t_end) = (block[0].t_start, block[n - 1].t);
        match v {
            Verdict::Authentic => res.passed += 1,
            Verdict::Malicious => res.dropped += 1,
        }
        res.decisions.push(Decision {
            t_start,
            t_end,
            prn: block[0].prn,
            score_log,
            verdict: v,
            label: timeline.map_or(Label::Genuine, |tl| tl.dominant(t_start, t_end)),
        });
    }
    Ok(res)
}

/// Feature extraction followed by [`detect_features`] for one channel's epochs.
pub fn detect_stream(
    epochs: &[CorrelatorEpoch],
    prn: u8,
    profile: &DetectorProfile,
    trk: &TrackingConfig,
    timeline: Option<&LabelTimeline>,
) -> Result<StreamResult> {
    let mut ex = FeatureExtractor::new(prn, profile.window, trk.clone())?;
    let feats: Vec<FeatureVector> = epochs.iter().filter_map(|e| ex.push(e)).collect();
    detect_features(&feats, profile, timeline)
}

/// Every 4-satellite subset of `prns`, in lexicographic order.
pub fn prn_sets(prns: &[u8]) -> Result<Vec<Vec<u8>>> {
    let mut p = prns.to_vec();
    p.sort_unstable();
    p.dedup();
    if p.len() < PVT_MIN_PRNS {
        return Err(Error::invalid(format!(
            "a position fix needs at least {PVT_MIN_PRNS} PRNs, got {}",
            p.len()
        )));
    }
    Ok(p.into_iter().combinations(PVT_MIN_PRNS).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpoofTimingReport {
    pub prn_sets: Vec<Vec<u8>>,
    pub max_continuous_spoof_s: Vec<f64>,
    pub total_spoof_s: Vec<f64>,
    pub undetected_30s_locks: Vec<usize>,
    /// Mean over PRN-sets of the maximum continuous spoofing time.
    pub overall_continuous_spoof_s: f64,
    pub mean_locks: f64,
}

/// Undetected-spoofing intervals of one channel.
///
/// Each decision owns `[max(t_start, previous t_end), t_end)`. An interval
/// grows through contiguous attack-labelled decisions that were accepted and
/// closes with (and includes) the first one that is flagged. Genuine labels
/// and time gaps also close it.
pub fn undetected_runs(decisions: &[Decision]) -> Result<Vec<(f64, f64)>> {
    let mut runs = Vec::new();
    let mut cur: Option<(f64, f64)> = None;
    let mut prev_end = f64::NEG_INFINITY;
    for (i, d) in decisions.iter().enumerate() {
        if !(d.t_start.is_finite() && d.t_end.is_finite() && d.t_end >= d.t_start) {
            return Err(Error::invalid(format!(
                "decision {i} of PRN {} has an invalid time span",
                d.prn
            )));
        }
        if d.t_end < prev_end {
            return Err(Error::invalid(format!(
                "decisions of PRN {} are not time-ordered at index {i}",
                d.prn
            )));
        }
        let a = d.t_start.max(prev_end);
        let b = d.t_end;
        let contiguous = d.t_start <= prev_end + GAP_TOLERANCE_S;
        prev_end = b;
        if !d.label.is_attack() {
            runs.extend(cur.take());
            continue;
        }
        cur = match cur {
            Some((s, _)) if contiguous => Some((s, b)),
            Some(run) => {
                runs.push(run);
                Some((a, b))
            }
            None => Some((a, b)),
        };
        if d.verdict == Verdict::Malicious {
            runs.extend(cur.take());
        }
    }
    runs.extend(cur);
    runs.retain(|(a, b)| b > a);
    Ok(runs)
}

/// Intersects the undetected intervals of every member channel. Pieces are
/// kept separate even when they touch.
fn intersect_all(members: &[&[(f64, f64)]]) -> Vec<(f64, f64)> {
    let mut acc: Vec<(f64, f64)> = members[0].to_vec();
    for m in &members[1..] {
        let mut next = Vec::new();
        for &(a, b) in &acc {
            for &(c, d) in *m {
                let lo = a.max(c);
                let hi = b.min(d);
                if hi > lo {
                    next.push((lo, hi));
                }
            }
        }
        acc = next;
    }
    acc
}

pub fn spoof_timing(decisions: &[Decision], sets: &[Vec<u8>], lock_seconds: f64) -> Result<SpoofTimingReport> {
    if !(lock_seconds > 0.0) {
        return Err(Error::invalid("lock duration must be positive"));
    }
    let mut per_prn: BTreeMap<u8, Vec<Decision>> = BTreeMap::new();
    for d in decisions {
        per_prn.entry(d.prn).or_default().push(d.clone());
    }
    let mut runs: BTreeMap<u8, Vec<(f64, f64)>> = BTreeMap::new();
    for (prn, ds) in &per_prn {
        runs.insert(*prn, undetected_runs(ds)?);
    }
    let mut rep = SpoofTimingReport {
        prn_sets: sets.to_vec(),
        max_continuous_spoof_s: Vec::with_capacity(sets.len()),
        total_spoof_s: Vec::with_capacity(sets.len()),
        undetected_30s_locks: Vec::with_capacity(sets.len()),
        overall_continuous_spoof_s: 0.0,
        mean_locks: 0.0,
    };
    for set in sets {
        if set.is_empty() {
            return Err(Error::invalid("empty PRN-set"));
        }
        let members = set
            .iter()
            .map(|p| {
                runs.get(p)
                    .map(Vec::as_slice)
                    .ok_or_else(|| Error::invalid(format!("PRN {p} has no decisions")))
            })
            .collect::<Result<Vec<_>>>()?;
        let pieces = intersect_all(&members);
        let lens: Vec<f64> = pieces.iter().map(|(a, b)| b - a).collect();
        rep.max_continuous_spoof_s
            .push(lens.iter().copied().fold(0.0, f64::max));
        rep.total_spoof_s.push(lens.iter().sum());
        rep.undetected_30s_locks
            .push(lens.iter().map(|l| (l / lock_seconds + 1e-9).floor() as usize).sum());
    }
    if !sets.is_empty() {
        let k = sets.len() as f64;
        rep.overall_continuous_spoof_s = rep.max_continuous_spoof_s.iter().sum::<f64>() / k;
        rep.mean_locks = rep.undetected_30s_locks.iter().sum::<usize>() as f64 / k;
    }
    Ok(rep)
}

/// Smallest block size `n <= n_max` whose disjoint-block averages separate the
/// two classes with zero EER. Stops early once either class has no complete block.
pub fn required_n_for_zero_eer(genuine: &[f64], spoofed: &[f64], n_max: usize) -> Option<usize> {
    for n in 1..=n_max {
        let g = average_blocks(genuine, n);
        let s = average_blocks(spoofed, n);
        if g.is_empty() || s.is_empty() {
            return None;
        }
        if let Ok((_, eer)) = eer_threshold(&g, &s) {
            if eer == 0.0 {
                return Some(n);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::RowTag;

    #[test]
    fn disjoint_supports() {
        let (t, eer) = eer_threshold(&[-10.0, -11.0], &[-100.0, -90.0]).unwrap();
        assert_eq!(eer, 0.0);
        assert!(t > -90.0 && t <= -11.0);
    }

    #[test]
    fn identical_sets() {
        let v = [-5.0, -6.0, -7.0];
        let (t, eer) = eer_threshold(&v, &v).unwrap();
        assert!((eer - 2.0 / 3.0).abs() < 1e-15);
        assert!(t < -6.0 && t > -7.0);
        assert!(eer_threshold(&[], &v).is_err());
    }

    #[test]
    fn threshold_boundary_is_strict() {
        let p = profile_with_threshold(-3.0, 1);
        assert_eq!(classify(&[-3.0], &p).unwrap(), Verdict::Malicious);
        assert_eq!(classify(&[-2.999], &p).unwrap(), Verdict::Authentic);
        assert_eq!(classify(&[f64::NEG_INFINITY], &p).unwrap(), Verdict::Malicious);
        assert!(classify(&[-1.0, -1.0], &p).is_err());
    }

    fn profile_with_threshold(t: f64, n_avg: usize) -> DetectorProfile {
        DetectorProfile {
            model: MvnModel::new(vec![0.0; 6], {
                let mut s = vec![0.0; 36];
                for i in 0..6 {
                    s[i * 7] = 1.0;
                }
                s
            })
            .unwrap(),
            log_threshold: t,
            n_avg,
            averaging: Averaging::Scores,
            window: FeatureWindowConfig::default(),
            trained_on: vec![],
            threshold_source: ThresholdSource::Eer,
        }
    }

    #[test]
    fn max_density_is_authentic() {
        let p = profile_with_threshold(-10.0, 3);
        let m = p.model.log_norm_const();
        assert_eq!(classify(&[m, m, m], &p).unwrap(), Verdict::Authentic);
    }

    #[test]
    fn prn_set_counts() {
        assert_eq!(prn_sets(&[1, 2, 3, 4, 5, 6, 7, 8]).unwrap().len(), 70);
        assert_eq!(prn_sets(&[4, 3, 2, 1]).unwrap(), vec![vec![1, 2, 3, 4]]);
        assert_eq!(prn_sets(&[1, 2, 3, 4, 5]).unwrap().len(), 5);
        assert!(prn_sets(&[1, 2, 3]).is_err());
    }

    fn dec(prn: u8, a: f64, b: f64, v: Verdict, l: Label) -> Decision {
        Decision {
            t_start: a,
            t_end: b,
            prn,
            score_log: 0.0,
            verdict: v,
            label: l,
        }
    }

    #[test]
    fn never_flagging_detector() {
        let mut ds = Vec::new();
        for prn in 1..=4u8 {
            for i in 0..15000 {
                let a = i as f64 * 0.02;
                ds.push(dec(prn, a, a + 0.02, Verdict::Authentic, Label::Spoofed));
            }
        }
        let sets = prn_sets(&[1, 2, 3, 4]).unwrap();
        let r = spoof_timing(&ds, &sets, LOCK_SECONDS).unwrap();
        assert!((r.max_continuous_spoof_s[0] - 300.0).abs() < 1e-6);
        assert_eq!(r.undetected_30s_locks[0], 10);
    }

    #[test]
    fn perfect_detector() {
        let mut ds = Vec::new();
        for prn in 1..=4u8 {
            for i in 0..100 {
                let a = i as f64 * 0.02;
                ds.push(dec(prn, a, a + 0.02, Verdict::Malicious, Label::Spoofed));
            }
        }
        let sets = prn_sets(&[1, 2, 3, 4]).unwrap();
        let r = spoof_timing(&ds, &sets, LOCK_SECONDS).unwrap();
        assert!((r.max_continuous_spoof_s[0] - 0.02).abs() < 1e-9);
        assert_eq!(r.undetected_30s_locks[0], 0);
    }

    #[test]
    fn malformed_decisions() {
        let ds = vec![
            dec(1, 1.0, 2.0, Verdict::Authentic, Label::Spoofed),
            dec(1, 0.0, 0.5, Verdict::Authentic, Label::Spoofed),
        ];
        assert!(undetected_runs(&ds).is_err());
        let sets = vec![vec![1, 2, 3, 4]];
        let ok = vec![dec(1, 0.0, 0.5, Verdict::Authentic, Label::Spoofed)];
        assert!(spoof_timing(&ok, &sets, LOCK_SECONDS).is_err());
    }

    #[test]
    fn required_n_cases() {
        assert_eq!(required_n_for_zero_eer(&[0.0, 1.0], &[-5.0, -6.0], 10), Some(1));
        let v: Vec<f64> = (0..50).map(|i| -(i as f64)).collect();
        assert_eq!(required_n_for_zero_eer(&v, &v, 20), None);
    }

    #[test]
    fn swapped_report() {
        let c = Counts {
            tp: 8,
            fp: 1,
            tn: 9,
            fn_: 2,
        };
        let r = EvalReport::from_counts(c, 0.1, -3.0, 1);
        assert_eq!(r.fpr, 0.1);
        assert_eq!(r.fnr, 0.2);
        let s = r.swapped();
        assert_eq!((s.fpr, s.fnr), (0.2, 0.1));
    }

    fn matrix(rows: Vec<[f64; 6]>, id: &str) -> FeatureMatrix {
        let tags = rows
            .iter()
            .map(|_| RowTag {
                dataset: id.into(),
                prn: 1,
            })
            .collect();
        FeatureMatrix { rows, tags }
    }

    #[test]
    fn separable_training() {
        use rand::Rng;
        let mut rng = seed::rng(3, &[]);
        let g: Vec<[f64; 6]> = (0..400).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
        let s: Vec<[f64; 6]> = (0..100)
            .map(|_| std::array::from_fn(|_| 10.0 + rng.random::<f64>()))
            .collect();
        let (g, s) = (matrix(g, "g"), matrix(s, "s"));
        let p = train(&g, &s, &TrainConfig::default()).unwrap();
        assert_eq!(p.threshold_source, ThresholdSource::Eer);
        let r = evaluate(&p, &s, &s).unwrap();
        assert_eq!(r.fpr, 0.0);
        let fallback = train(&g, &FeatureMatrix::default(), &TrainConfig::default()).unwrap();
        assert_eq!(fallback.threshold_source, ThresholdSource::GenuineQuantile);
        assert!(kfold_xval(
            &[Fold {
                id: "a".into(),
                genuine: g,
                spoofed: s
            }],
            &TrainConfig::default()
        )
        .is_err());
    }
}
