//! Reference implementations used as test oracles. Each one is written in
//! the most literal form available and shares no code with the library.

#![allow(dead_code)]

use std::collections::BTreeMap;

use eplguard::detector::{Decision, Verdict};
use eplguard::sim::Label;

/// G2 delays (chips) for PRN 1..=32 from the interface specification table.
pub const G2_DELAY: [usize; 32] = [
    5, 6, 7, 8, 17, 18, 139, 140, 141, 251, 252, 254, 255, 256, 257, 258, 469, 470, 471, 472, 473, 474, 509, 512, 513,
    514, 515, 516, 859, 860, 861, 862,
];

/// Maximal-length sequence of a 10-stage register with all-ones start.
/// `taps` are the 1-based feedback stages; output is stage 10.
fn mseq(taps: &[usize]) -> Vec<u8> {
    let mut reg = [1u8; 11];
    (0..1023)
        .map(|_| {
            let out = reg[10];
            let fb = taps.iter().fold(0, |a, &t| a ^ reg[t]);
            for i in (2..=10).rev() {
                reg[i] = reg[i - 1];
            }
            reg[1] = fb;
            out
        })
        .collect()
}

/// C/A code bits (0/1) by XOR of G1 with a delayed copy of G2.
pub fn gold_bits(prn: u8) -> Vec<u8> {
    let g1 = mseq(&[3, 10]);
    let g2 = mseq(&[2, 3, 6, 8, 9, 10]);
    let d = G2_DELAY[usize::from(prn) - 1];
    (0..1023).map(|i| g1[i] ^ g2[(i + 1023 - d) % 1023]).collect()
}

pub fn first_ten_octal(bits: &[u8]) -> String {
    let v = bits[..10].iter().fold(0u32, |a, &b| (a << 1) | u32::from(b));
    format!("{v:o}")
}

pub fn correlate_at(a: &[i8], b: &[i8], lag: usize) -> i32 {
    let n = a.len();
    (0..n).map(|i| i32::from(a[i]) * i32::from(b[(i + lag) % n])).sum()
}

/// Exact rational `|FPR - FNR|` as a numerator over `ng * ns`, with the
/// acceptance rule `score > cut`.
pub fn gap_at(genuine: &[f64], spoofed: &[f64], cut: f64) -> (u128, u128, u128) {
    let fp = spoofed.iter().filter(|&&v| v > cut).count() as u128;
    let fn_ = genuine.iter().filter(|&&v| v <= cut).count() as u128;
    let (ng, ns) = (genuine.len() as u128, spoofed.len() as u128);
    let a = fp * ng;
    let b = fn_ * ns;
    (a.abs_diff(b), fp, fn_)
}

/// Every distinct partition of the scores by a threshold: one cut below all
/// values, one between each adjacent distinct pair, one above all.
pub fn all_cuts(genuine: &[f64], spoofed: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = genuine.iter().chain(spoofed).copied().collect();
    u.sort_by(f64::total_cmp);
    u.dedup();
    let mut cuts = vec![u[0] - 1.0];
    for w in u.windows(2) {
        cuts.push(w[0] + (w[1] - w[0]) / 2.0);
    }
    cuts.push(u[u.len() - 1] + 1.0);
    cuts
}

/// Minimal `|FPR - FNR|` numerator over every cut.
pub fn min_gap(genuine: &[f64], spoofed: &[f64]) -> u128 {
    all_cuts(genuine, spoofed)
        .into_iter()
        .map(|c| gap_at(genuine, spoofed, c).0)
        .min()
        .unwrap()
}

/// True when some threshold separates the classes without error.
pub fn separable(genuine: &[f64], spoofed: &[f64]) -> bool {
    let gmin = genuine.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = spoofed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    gmin > smax
}

pub fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

pub fn blocks(v: &[f64], n: usize) -> Vec<f64> {
    (0..v.len() / n).map(|b| log_mean_exp(&v[b * n..(b + 1) * n])).collect()
}

/// Oracle for the PRN-set spoofing metrics on decisions whose boundaries are
/// whole multiples of `tick` seconds.
///
/// Per channel, each tick is either outside any undetected run or carries the
/// id of the run it belongs to. A PRN-set is undetected on a tick when every
/// member is, and two consecutive undetected ticks are one piece only when
/// every member stays in the same run.
pub struct TimingOracle {
    pub max_continuous: Vec<f64>,
    pub total: Vec<f64>,
    pub locks: Vec<usize>,
}

pub fn timing_oracle(decisions: &[Decision], sets: &[Vec<u8>], tick: f64, lock: f64) -> TimingOracle {
    let t_end = decisions.iter().map(|d| d.t_end).fold(0.0, f64::max);
    let n_ticks = (t_end / tick).round() as usize;
    let mut per_prn: BTreeMap<u8, Vec<&Decision>> = BTreeMap::new();
    for d in decisions {
        per_prn.entry(d.prn).or_default().push(d);
    }
    let mut state: BTreeMap<u8, Vec<Option<usize>>> = BTreeMap::new();
    let mut next_id = 0usize;
    for (prn, ds) in &per_prn {
        // owner[k]: decision covering tick k
        let mut owner: Vec<Option<&Decision>> = vec![None; n_ticks];
        for d in ds {
            let a = (d.t_start / tick).round() as usize;
            let b = (d.t_end / tick).round() as usize;
            for slot in owner.iter_mut().take(b).skip(a) {
                *slot = Some(d);
            }
        }
        let mut ids = vec![None; n_ticks];
        let mut open: Option<usize> = None;
        let mut prev: Option<&Decision> = None;
        for k in 0..n_ticks {
            let cur = owner[k];
            if let (Some(p), Some(c)) = (prev, cur) {
                let same = std::ptr::eq(p, c);
                if !same && p.verdict == Verdict::Malicious {
                    open = None;
                }
            }
            match cur {
                Some(d) if d.label.is_attack() => {
                    let id = *open.get_or_insert_with(|| {
                        next_id += 1;
                        next_id
                    });
                    ids[k] = Some(id);
                }
                _ => open = None,
            }
            prev = cur;
        }
        state.insert(*prn, ids);
    }
    let mut out = TimingOracle {
        max_continuous: vec![],
        total: vec![],
        locks: vec![],
    };
    for set in sets {
        let mut pieces: Vec<usize> = Vec::new();
        let mut run = 0usize;
        let mut last: Option<Vec<usize>> = None;
        for k in 0..n_ticks {
            let ids: Option<Vec<usize>> = set.iter().map(|p| state[p][k]).collect();
            match (ids, &last) {
                (Some(ids), Some(l)) if *l == ids => run += 1,
                (Some(ids), _) => {
                    if run > 0 {
                        pieces.push(run);
                    }
                    run = 1;
                    last = Some(ids);
                    continue;
                }
                (None, _) => {
                    if run > 0 {
                        pieces.push(run);
                    }
                    run = 0;
                    last = None;
                    continue;
                }
            }
        }
        if run > 0 {
            pieces.push(run);
        }
        let lens: Vec<f64> = pieces.iter().map(|&p| p as f64 * tick).collect();
        out.max_continuous.push(lens.iter().copied().fold(0.0, f64::max));
        out.total.push(lens.iter().sum());
        out.locks
            .push(lens.iter().map(|l| (l / lock + 1e-9).floor() as usize).sum());
    }
    out
}

pub fn decision(prn: u8, a: f64, b: f64, label: Label, verdict: Verdict) -> Decision {
    Decision {
        t_start: a,
        t_end: b,
        prn,
        score_log: 0.0,
        verdict,
        label,
    }
}
