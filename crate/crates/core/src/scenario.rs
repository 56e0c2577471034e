//! Scenario files: everything needed to synthesize one dataset.
//!
//! ```toml
//! targets = [3, 7]          # attacked PRNs; empty means all
//!
//! [dataset]
//! id = "demo-spoofed"
//! threat_model = "both"
//!
//! [synth]
//! sample_rate = 2.046e6
//! duration = 8.0
//! noise_seed = 11
//!
//! [[satellite]]
//! prn = 3
//! doppler = 1250.0
//! code_phase = 211.4
//! carrier_phase = 0.4
//! cn0 = 46.0
//! nav_seed = 1
//!
//! [attack]
//! mode = "spoofing"
//! power = "over"
//! takeover_time = 4.0
//! spoofer_signature = { gain_asymmetry = 1.15, filter_taps = [0.2, 0.6, 0.2], phase_noise_std = 0.0 }
//! ```

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::capture::SampleFormat;
use crate::io::manifest::{DatasetManifest, PowerStatus, Role, SpoofingType, ThreatModel};
use crate::seed;
use crate::sim::{
    apply_multipath, spoof_overlay, synthesize_genuine, AttackConfig, AttackMode, IqStream, PowerMode,
    SatelliteScenario, SynthConfig,
};

const TAG_RECORDING: u64 = 0x7265_636f;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInfo {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub threat_model: Option<ThreatModel>,
    #[serde(default)]
    pub location: Option<String>,
    #[serde(default)]
    pub date: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipathTap {
    /// Seconds.
    pub delay: f64,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipathSpec {
    pub taps: Vec<MultipathTap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureSpec {
    #[serde(default = "default_format")]
    pub format: SampleFormat,
}

fn default_format() -> SampleFormat {
    SampleFormat::Float32
}

impl Default for CaptureSpec {
    fn default() -> Self {
        Self {
            format: default_format(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub dataset: DatasetInfo,
    pub synth: SynthConfig,
    #[serde(rename = "satellite")]
    pub satellites: Vec<SatelliteScenario>,
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub targets: Vec<u8>,
    #[serde(default)]
    pub multipath: Option<MultipathSpec>,
    #[serde(default)]
    pub capture: CaptureSpec,
}

impl Scenario {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let s: Scenario = crate::io::from_toml_str(text, origin)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Checks everything that can be checked before synthesis starts.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.satellites.is_empty() {
            return Err(Error::invalid("scenario has no satellites"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.satellites {
            s.validate()?;
            if !seen.insert(s.prn) {
                return Err(Error::invalid(format!("duplicate PRN {}", s.prn)));
            }
        }
        for t in &self.targets {
            if !seen.contains(t) {
                return Err(Error::invalid(format!("attack target PRN {t} is not in the scenario")));
            }
        }
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        if let Some(m) = &self.multipath {
            if m.taps.iter().any(|t| !(t.delay >= 0.0 && t.delay.is_finite())) {
                return Err(Error::invalid("multipath delays must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn prns(&self) -> Vec<u8> {
        self.satellites.iter().map(|s| s.prn).collect()
    }

    pub fn target_scenarios(&self) -> Vec<SatelliteScenario> {
        self.satellites
            .iter()
            .filter(|s| self.targets.is_empty() || self.targets.contains(&s.prn))
            .cloned()
            .collect()
    }

    /// Synthesizes the dataset described by the scenario.
    pub fn synthesize(&self) -> Result<IqStream> {
        self.validate()?;
        let mut iq = synthesize_genuine(&self.satellites, &self.synth)?;
        if let Some(m) = &self.multipath {
            let taps: Vec<(f64, Complex64)> = m.taps.iter().map(|t| (t.delay, Complex64::new(t.re, t.im))).collect();
            iq = apply_multipath(&iq, &taps)?;
        }
        let Some(attack) = &self.attack else {
            return Ok(iq);
        };
        let targets = self.target_scenarios();
        match attack.mode {
            AttackMode::Spoofing => spoof_overlay(&iq, attack, &targets, &self.synth, None),
            AttackMode::Replay => {
                // The replayer records the same sky through its own front end.
                let mut rec_cfg = self.synth.clone();
                rec_cfg.noise_seed = seed::derive_seed(self.synth.noise_seed, &[TAG_RECORDING]);
                let recording = synthesize_genuine(&self.satellites, &rec_cfg)?;
                spoof_overlay(&iq, attack, &targets, &self.synth, Some(&recording))
            }
        }
    }

    /// Manifest describing the synthesized capture.
    pub fn manifest(&self, capture: &Path, labels: Option<&Path>) -> DatasetManifest {
        let attack = self.attack.as_ref();
        let power_status = attack.map(|a| {
            let db = a.power.offset_db(a.mode);
            match a.power {
                PowerMode::Over => PowerStatus::Over,
                PowerMode::Matched => PowerStatus::Matched,
                PowerMode::Under => PowerStatus::Under,
                PowerMode::Adjusted(_) if db > 1.0 => PowerStatus::Over,
                PowerMode::Adjusted(_) if db < -1.0 => PowerStatus::Under,
                PowerMode::Adjusted(_) => PowerStatus::Matched,
            }
        });
        DatasetManifest {
            id: self.dataset.id.clone(),
            role: if attack.is_some() { Role::Spoofed } else { Role::Genuine },
            spoofing_type: attack.map(|a| match a.mode {
                AttackMode::Spoofing => SpoofingType::Spoofing,
                AttackMode::Replay => SpoofingType::Replay,
            }),
            threat_model: attack.map(|_| self.dataset.threat_model.unwrap_or(ThreatModel::Both)),
            power_status,
            multipath: self.multipath.is_some(),
            duration: Some(format!("{} s", self.synth.duration)),
            location: self.dataset.location.clone(),
            date: self.dataset.date.clone(),
            capture: capture.to_path_buf(),
            labels: labels.map(Path::to_path_buf),
            scenario: None,
        }
    }
}
