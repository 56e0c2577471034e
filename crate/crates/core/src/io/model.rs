use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{DetectorProfile, ThresholdSource};
use crate::error::{Error, Result};
use crate::features::FeatureWindowConfig;
use crate::mvn::{Averaging, MvnModel};

pub const MODEL_FORMAT: &str = "eplguard-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default)]
    pub trained_on: Vec<String>,
    #[serde(default)]
    pub tool_version: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub config_sha256: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    k: usize,
    mu: Vec<f64>,
    /// Row-major.
    sigma: Vec<f64>,
    eps: f64,
    log_threshold: f64,
    threshold_source: ThresholdSource,
    n_avg: usize,
    averaging: Averaging,
    window: FeatureWindowConfig,
    provenance: Provenance,
}

#[derive(Deserialize)]
struct VersionProbe {
    format: Option<String>,
    version: Option<u32>,
}

pub fn model_to_json(profile: &DetectorProfile, provenance: &Provenance) -> Result<String> {
    let m = &profile.model;
    let mut prov = provenance.clone();
    if prov.trained_on.is_empty() {
        prov.trained_on = profile.trained_on.clone();
    }
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        k: m.k(),
        mu: m.mu().to_vec(),
        sigma: m.sigma().to_vec(),
        eps: m.eps(),
        log_threshold: profile.log_threshold,
        threshold_source: profile.threshold_source,
        n_avg: profile.n_avg,
        averaging: profile.averaging,
        window: profile.window,
        provenance: prov,
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))
}

pub fn model_from_json(text: &str, origin: &str) -> Result<(DetectorProfile, Provenance)> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
    if probe.format.as_deref() != Some(MODEL_FORMAT) {
        return Err(Error::parse(
            format!("{origin}: format"),
            format!("expected \"{MODEL_FORMAT}\""),
        ));
    }
    match probe.version {
        Some(MODEL_VERSION) => {}
        Some(found) => {
            return Err(Error::UnsupportedVersion {
                found,
                expected: MODEL_VERSION,
            })
        }
        None => return Err(Error::parse(format!("{origin}: version"), "missing field")),
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    let f: ModelFile = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::parse(format!("{origin}: {}", e.path()), e.inner().to_string()))?;
    if f.mu.len() != f.k || f.sigma.len() != f.k * f.k {
        return Err(Error::parse(
            format!("{origin}: sigma"),
            format!("k = {} needs {} means and {} covariance entries", f.k, f.k, f.k * f.k),
        ));
    }
    if !f.log_threshold.is_finite() {
        return Err(Error::parse(format!("{origin}: log_threshold"), "must be finite"));
    }
    if f.n_avg == 0 {
        return Err(Error::parse(format!("{origin}: n_avg"), "must be at least 1"));
    }
    let model = MvnModel::from_parts(f.mu, f.sigma, f.eps)?;
    let profile = DetectorProfile {
        model,
        log_threshold: f.log_threshold,
        n_avg: f.n_avg,
        averaging: f.averaging,
        window: f.window,
        trained_on: f.provenance.trained_on.clone(),
        threshold_source: f.threshold_source,
    };
    Ok((profile, f.provenance))
}

pub fn save_model(profile: &DetectorProfile, provenance: &Provenance, path: &Path) -> Result<()> {
    let text = model_to_json(profile, provenance)?;
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

pub fn load_model(path: &Path) -> Result<(DetectorProfile, Provenance)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    model_from_json(&text, &path.display().to_string())
}
