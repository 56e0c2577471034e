//! CSV interchange between pipeline stages.
//!
//! Floats are written in shortest round-trip form, so a write/read cycle
//! reproduces every value bit for bit. Missing lock estimates are empty cells.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::detector::{Decision, EvalReport, Verdict};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::receiver::CorrelatorEpoch;
use crate::sim::{Label, LabelTimeline};

pub const EPOCH_HEADER: [&str; 11] = [
    "t",
    "e_re",
    "e_im",
    "p_re",
    "p_im",
    "l_re",
    "l_im",
    "cn0_est",
    "clt_est",
    "code_phase",
    "doppler",
];
pub const FEATURE_HEADER: [&str; 8] = ["t", "prn", "e_high", "e_low", "p_high", "p_low", "l_high", "l_low"];
pub const DECISION_HEADER: [&str; 6] = ["t_start", "t_end", "prn", "score_log", "decision", "label"];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::file(path, io),
        other => Error::parse(
            match line {
                Some(l) => format!("{}:{l}", path.display()),
                None => path.display().to_string(),
            },
            format!("{other:?}"),
        ),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn reader(path: &Path, expected: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::parse(
            path.display().to_string(),
            format!(
                "header {:?}, expected {:?}",
                headers.iter().collect::<Vec<_>>(),
                expected
            ),
        ));
    }
    Ok(r)
}

#[derive(Serialize, Deserialize)]
struct EpochRow {
    t: f64,
    e_re: f64,
    e_im: f64,
    p_re: f64,
    p_im: f64,
    l_re: f64,
    l_im: f64,
    cn0_est: Option<f64>,
    clt_est: Option<f64>,
    code_phase: f64,
    doppler: f64,
}

pub fn write_epochs(path: &Path, epochs: &[CorrelatorEpoch]) -> Result<()> {
    let mut w = writer(path)?;
    if epochs.is_empty() {
        w.write_record(EPOCH_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for e in epochs {
        w.serialize(EpochRow {
            t: e.t,
            e_re: e.e.re,
            e_im: e.e.im,
            p_re: e.p.re,
            p_im: e.p.im,
            l_re: e.l.re,
            l_im: e.l.im,
            cn0_est: e.cn0_est,
            clt_est: e.clt_est,
            code_phase: e.code_phase,
            doppler: e.doppler,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn read_epochs(path: &Path) -> Result<Vec<CorrelatorEpoch>> {
    let mut r = reader(path, &EPOCH_HEADER)?;
    r.deserialize::<EpochRow>()
        .map(|row| {
            let row = row.map_err(|e| csv_err(path, e))?;
            Ok(CorrelatorEpoch {
                t: row.t,
                e: Complex64::new(row.e_re, row.e_im),
                p: Complex64::new(row.p_re, row.p_im),
                l: Complex64::new(row.l_re, row.l_im),
                cn0_est: row.cn0_est,
                clt_est: row.clt_est,
                code_phase: row.code_phase,
                doppler: row.doppler,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct FeatureRow {
    t: f64,
    prn: u8,
    e_high: f64,
    e_low: f64,
    p_high: f64,
    p_low: f64,
    l_high: f64,
    l_low: f64,
}

pub fn write_features(path: &Path, features: &[FeatureVector]) -> Result<()> {
    let mut w = writer(path)?;
    if features.is_empty() {
        w.write_record(FEATURE_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for f in features {
        w.serialize(FeatureRow {
            t: f.t,
            prn: f.prn,
            e_high: f.e_high,
            e_low: f.e_low,
            p_high: f.p_high,
            p_low: f.p_low,
            l_high: f.l_high,
            l_low: f.l_low,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

/// The feature CSV carries only the window end, so loaded vectors have
/// `t_start == t`.
pub fn read_features(path: &Path) -> Result<Vec<FeatureVector>> {
    let mut r = reader(path, &FEATURE_HEADER)?;
    r.deserialize::<FeatureRow>()
        .map(|row| {
            let f = row.map_err(|e| csv_err(path, e))?;
            Ok(FeatureVector::from_values(
                f.t,
                f.t,
                f.prn,
                [f.e_high, f.e_low, f.p_high, f.p_low, f.l_high, f.l_low],
            ))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct DecisionRow {
    t_start: f64,
    t_end: f64,
    prn: u8,
    score_log: f64,
    decision: Verdict,
    label: Label,
}

pub fn write_decisions(path: &Path, decisions: &[Decision]) -> Result<()> {
    let mut w = writer(path)?;
    if decisions.is_empty() {
        w.write_record(DECISION_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for d in decisions {
        w.serialize(DecisionRow {
            t_start: d.t_start,
            t_end: d.t_end,
            prn: d.prn,
            score_log: d.score_log,
            decision: d.verdict,
            label: d.label,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn read_decisions(path: &Path) -> Result<Vec<Decision>> {
    let mut r = reader(path, &DECISION_HEADER)?;
    r.deserialize::<DecisionRow>()
        .map(|row| {
            let d = row.map_err(|e| csv_err(path, e))?;
            Ok(Decision {
                t_start: d.t_start,
                t_end: d.t_end,
                prn: d.prn,
                score_log: d.score_log,
                verdict: d.decision,
                label: d.label,
            })
        })
        .collect()
}

/// Run-length encoded ground truth: sample ranges `[start, end)` with a label.
/// The first line is a comment-free preamble holding rate and t0.
pub fn write_labels(path: &Path, tl: &LabelTimeline) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["sample_rate", "t0", ""])
        .map_err(|e| csv_err(path, e))?;
    w.write_record([tl.sample_rate.to_string(), tl.t0.to_string(), String::new()])
        .map_err(|e| csv_err(path, e))?;
    w.write_record(["start", "end", "label"])
        .map_err(|e| csv_err(path, e))?;
    for &(start, end, label) in &tl.segments {
        w.write_record([start.to_string(), end.to_string(), label.as_str().to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn read_labels(path: &Path) -> Result<LabelTimeline> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let recs = r
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_err(path, e))?;
    let bad = |msg: &str| Error::parse(path.display().to_string(), msg.to_string());
    if recs.len() < 3 || &recs[0][0] != "sample_rate" || &recs[2][0] != "start" {
        return Err(bad("not a label timeline file"));
    }
    let sample_rate: f64 = recs[1][0].parse().map_err(|_| bad("bad sample_rate"))?;
    let t0: f64 = recs[1][1].parse().map_err(|_| bad("bad t0"))?;
    let mut segments = Vec::with_capacity(recs.len() - 3);
    for rec in &recs[3..] {
        let start: u64 = rec[0].parse().map_err(|_| bad("bad segment start"))?;
        let end: u64 = rec[1].parse().map_err(|_| bad("bad segment end"))?;
        let label: Label = rec[2].parse()?;
        if end < start {
            return Err(bad("segment ends before it starts"));
        }
        segments.push((start, end, label));
    }
    Ok(LabelTimeline {
        sample_rate,
        t0,
        segments,
    })
}

/// One row per report: `name,n_avg,fpr,fnr,eer,threshold,tp,fp,tn,fn`.
pub fn write_reports(path: &Path, rows: &[(String, EvalReport)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "name",
        "n_avg",
        "fpr",
        "fnr",
        "eer",
        "threshold",
        "tp",
        "fp",
        "tn",
        "fn",
    ])
    .map_err(|e| csv_err(path, e))?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            r.n_avg.to_string(),
            r.fpr.to_string(),
            r.fnr.to_string(),
            r.eer.to_string(),
            r.threshold.to_string(),
            r.counts.tp.to_string(),
            r.counts.fp.to_string(),
            r.counts.tn.to_string(),
            r.counts.fn_.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

/// Fixed-width text table of the same reports.
pub fn format_report_table(rows: &[(String, EvalReport)]) -> String {
    let mut s = format!(
        "{:<24} {:>7} {:>9} {:>9} {:>9} {:>14}\n",
        "dataset", "n", "FPR %", "FNR %", "EER %", "log threshold"
    );
    for (name, r) in rows {
        s.push_str(&format!(
            "{:<24} {:>7} {:>9.3} {:>9.3} {:>9.3} {:>14.4}\n",
            name,
            r.n_avg,
            100.0 * r.fpr,
            100.0 * r.fnr,
            100.0 * r.eer,
            r.threshold
        ));
    }
    s
}
