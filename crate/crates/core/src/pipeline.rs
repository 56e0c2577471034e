//! Stage glue shared by the command-line tool and the acceptance tests.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{self, DetectorProfile, EvalReport, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureMatrix, FeatureVector, FeatureWindowConfig};
use crate::io::{self, tables, CaptureMeta, Provenance};
use crate::receiver::{
    acquire_with, track_all, AcquisitionConfig, AcquisitionResult, ChannelTrack, CorrelatorEpoch, TrackingConfig,
};
use crate::scenario::Scenario;
use crate::sim::{IqStream, LabelTimeline};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Receiver and feature settings applied to every capture in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverConfig {
    pub acquisition: AcquisitionConfig,
    pub tracking: TrackingConfig,
    pub window: FeatureWindowConfig,
    /// Seconds after a channel's first epoch whose windows are dropped as loop pull-in.
    pub settle_time: f64,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            acquisition: AcquisitionConfig::default(),
            tracking: TrackingConfig::default(),
            window: FeatureWindowConfig::default(),
            settle_time: 1.0,
        }
    }
}

impl ReceiverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.settle_time.is_finite() && self.settle_time >= 0.0) {
            return Err(Error::invalid(format!(
                "settle_time {} must be non-negative",
                self.settle_time
            )));
        }
        self.tracking.validate()?;
        self.window.validate()
    }
}

pub fn acquire_prns(iq: &IqStream, prns: &[u8], cfg: &AcquisitionConfig) -> Result<Vec<AcquisitionResult>> {
    prns.par_iter().map(|&p| acquire_with(iq, p, cfg)).collect()
}

/// Acquires the requested PRNs and tracks those that were found, ordered by PRN.
pub fn track_prns(iq: &IqStream, prns: &[u8], cfg: &ReceiverConfig) -> Result<Vec<ChannelTrack>> {
    cfg.validate()?;
    let mut acq: Vec<AcquisitionResult> = acquire_prns(iq, prns, &cfg.acquisition)?
        .into_iter()
        .filter(|a| a.acquired)
        .collect();
    acq.sort_by_key(|a| a.prn);
    track_all(iq, &acq, &cfg.tracking)
}

/// Lock-filtered feature vectors of one channel without the windows that
/// start inside the settling period after its first epoch.
pub fn settled_features(epochs: &[CorrelatorEpoch], prn: u8, cfg: &ReceiverConfig) -> Result<Vec<FeatureVector>> {
    let Some(first) = epochs.first() else {
        return Ok(Vec::new());
    };
    let settled = first.t + cfg.settle_time;
    let mut v = extract_features(epochs, prn, &cfg.window, &cfg.tracking)?;
    v.retain(|f| f.t_start >= settled);
    Ok(v)
}

/// [`settled_features`] of every channel, PRN by PRN.
pub fn channel_features(tracks: &[ChannelTrack], cfg: &ReceiverConfig) -> Result<Vec<FeatureVector>> {
    let per: Vec<Vec<FeatureVector>> = tracks
        .par_iter()
        .map(|t| settled_features(&t.epochs, t.prn, cfg))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Splits features into (genuine, attacked) by the ground truth covering each
/// window. Windows that span a label change belong to neither side.
pub fn split_by_label(
    features: &[FeatureVector],
    timeline: &LabelTimeline,
) -> (Vec<FeatureVector>, Vec<FeatureVector>) {
    let mut genuine = Vec::new();
    let mut attacked = Vec::new();
    for f in features {
        if !timeline.is_uniform(f.t_start, f.t) {
            continue;
        }
        if timeline.dominant(f.t_start, f.t).is_attack() {
            attacked.push(*f);
        } else {
            genuine.push(*f);
        }
    }
    (genuine, attacked)
}

pub fn to_matrix(dataset: &str, features: &[FeatureVector]) -> FeatureMatrix {
    crate::features::feature_template(&[(dataset.to_string(), features.to_vec())])
}

pub fn append(into: &mut FeatureMatrix, other: &FeatureMatrix) {
    into.rows.extend_from_slice(&other.rows);
    into.tags.extend_from_slice(&other.tags);
}

/// Features of one simulated dataset, split by ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFeatures {
    pub id: String,
    pub genuine: Vec<FeatureVector>,
    pub attacked: Vec<FeatureVector>,
}

impl DatasetFeatures {
    pub fn genuine_matrix(&self) -> FeatureMatrix {
        to_matrix(&self.id, &self.genuine)
    }

    pub fn attacked_matrix(&self) -> FeatureMatrix {
        to_matrix(&self.id, &self.attacked)
    }
}

/// Synthesizes a scenario in memory and runs it through tracking and feature
/// extraction.
pub fn scenario_features(scn: &Scenario, cfg: &ReceiverConfig) -> Result<DatasetFeatures> {
    let iq = scn.synthesize()?;
    let tracks = track_prns(&iq, &scn.prns(), cfg)?;
    let feats = channel_features(&tracks, cfg)?;
    let (genuine, attacked) = split_by_label(&feats, &iq.timeline());
    Ok(DatasetFeatures {
        id: scn.dataset.id.clone(),
        genuine,
        attacked,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Reproducibility record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Hash of the canonical JSON form of the command's effective configuration.
    pub config_sha256: String,
    /// Input files and their content hashes.
    pub inputs: Vec<(String, String)>,
}

impl RunRecord {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: Option<u64>) -> Result<Self> {
        let canon = serde_json::to_vec(config).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            seed,
            config_sha256: sha256_hex(&canon),
            inputs: Vec::new(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push((path.display().to_string(), sha256_file(path)?));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(format!("{}.run.json", self.command));
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::file(&path, e))
    }
}

/// Files the quickstart walkthrough expects in its scenario directory.
pub const QUICKSTART_FILES: [&str; 4] = [
    "train_genuine.toml",
    "train_spoofed.toml",
    "test_genuine.toml",
    "test_spoofed.toml",
];

#[derive(Debug, Clone, PartialEq)]
pub struct QuickstartOutcome {
    pub profile: DetectorProfile,
    pub report: EvalReport,
}

/// Simulate, track, extract, train and evaluate the four quickstart datasets,
/// writing feature CSVs, the model, and the evaluation report into `out`.
pub fn run_quickstart(
    scenario_dir: &Path,
    out: &Path,
    rcv: &ReceiverConfig,
    train_cfg: &TrainConfig,
) -> Result<QuickstartOutcome> {
    let scns = QUICKSTART_FILES
        .iter()
        .map(|f| Scenario::load(&scenario_dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let data = scns
        .iter()
        .map(|s| scenario_features(s, rcv))
        .collect::<Result<Vec<_>>>()?;
    for d in &data {
        let mut all = d.genuine.clone();
        all.extend_from_slice(&d.attacked);
        all.sort_by(|a, b| a.prn.cmp(&b.prn).then(a.t.total_cmp(&b.t)));
        tables::write_features(&out.join(format!("{}.features.csv", d.id)), &all)?;
    }
    let (train_g, train_s, test_g, test_s) = (&data[0], &data[1], &data[2], &data[3]);
    let mut g = train_g.genuine_matrix();
    append(&mut g, &train_s.genuine_matrix());
    let s = train_s.attacked_matrix();
    let mut profile = detector::train(&g, &s, train_cfg)?;
    profile.window = rcv.window;

    let mut eg = test_g.genuine_matrix();
    append(&mut eg, &test_s.genuine_matrix());
    let es = test_s.attacked_matrix();
    let report = detector::evaluate(&profile, &eg, &es)?;

    let mut record = RunRecord::new("quickstart", &(rcv, train_cfg, &scns), Some(train_cfg.seed))?;
    for f in QUICKSTART_FILES {
        record.add_input(&scenario_dir.join(f))?;
    }
    let prov = Provenance {
        trained_on: profile.trained_on.clone(),
        tool_version: TOOL_VERSION.to_string(),
        seed: Some(train_cfg.seed),
        config_sha256: Some(record.config_sha256.clone()),
    };
    io::save_model(&profile, &prov, &out.join("model.json"))?;
    let rows = vec![(test_s.id.clone(), report.clone())];
    tables::write_reports(&out.join("eval_report.csv"), &rows)?;
    std::fs::write(out.join("eval_report.txt"), tables::format_report_table(&rows))
        .map_err(|e| Error::file(out.join("eval_report.txt"), e))?;
    record.write(out)?;
    Ok(QuickstartOutcome { profile, report })
}

/// Writes a synthesized capture, its ground-truth labels and manifest.
/// Returns the manifest path.
pub fn write_dataset(scn: &Scenario, iq: &IqStream, dir: &Path) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let id = if scn.dataset.id.is_empty() {
        "dataset"
    } else {
        &scn.dataset.id
    };
    let capture = dir.join(format!("{id}.iq"));
    let labels = dir.join(format!("{id}.labels.csv"));
    let mut meta = CaptureMeta::new(iq.sample_rate, scn.capture.format);
    meta.t0 = iq.t0;
    io::write_iq(iq, &capture, &meta)?;
    tables::write_labels(&labels, &iq.timeline())?;
    let manifest = scn.manifest(
        Path::new(&format!("{id}.iq")),
        Some(Path::new(&format!("{id}.labels.csv"))),
    );
    let mpath = dir.join(format!("{id}.manifest.toml"));
    io::save_manifest(&manifest, &mpath)?;
    Ok(mpath)
}
