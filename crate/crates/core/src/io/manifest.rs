//! Dataset manifests: one TOML file per capture describing its provenance and,
//! for spoofed captures, the attack.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Genuine,
    Spoofed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpoofingType {
    Spoofing,
    Replay,
}

/// What the attacker tries to alter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreatModel {
    Time,
    Position,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerStatus {
    #[serde(rename = "over-powered")]
    Over,
    #[serde(rename = "matched-powered", alias = "matched-power")]
    Matched,
    #[serde(rename = "under-powered")]
    Under,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub id: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spoofing_type: Option<SpoofingType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threat_model: Option<ThreatModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_status: Option<PowerStatus>,
    #[serde(default)]
    pub multipath: bool,
    /// Free text such as "60 min" or "420 s".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    /// Relative paths resolve against the manifest's directory.
    pub capture: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn validate(&self, origin: &str) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::parse(format!("{origin}: id"), "dataset id is empty"));
        }
        if self.role == Role::Spoofed {
            if self.spoofing_type.is_none() {
                return Err(Error::parse(
                    format!("{origin}: spoofing_type"),
                    "spoofed dataset must declare a spoofing type",
                ));
            }
            if self.threat_model.is_none() {
                return Err(Error::parse(
                    format!("{origin}: threat_model"),
                    "spoofed dataset must declare a threat model",
                ));
            }
            if self.power_status.is_none() {
                return Err(Error::parse(
                    format!("{origin}: power_status"),
                    "spoofed dataset must declare a power status",
                ));
            }
        }
        if let Some(d) = &self.duration {
            parse_duration(d).map_err(|m| Error::parse(format!("{origin}: duration"), m))?;
        }
        Ok(())
    }

    pub fn duration_seconds(&self) -> Option<f64> {
        self.duration.as_deref().and_then(|d| parse_duration(d).ok())
    }

    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

/// "420 s", "60 min", "1.5 h".
pub fn parse_duration(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let split = s.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let v: f64 = num.parse().map_err(|_| format!("`{s}` does not start with a number"))?;
    let mult = match unit.trim() {
        "s" | "sec" | "" => 1.0,
        "min" => 60.0,
        "h" => 3600.0,
        u => return Err(format!("unknown duration unit `{u}`")),
    };
    Ok(v * mult)
}

pub fn manifest_from_toml(text: &str, origin: &str) -> Result<DatasetManifest> {
    let m: DatasetManifest = super::from_toml_str(text, origin)?;
    m.validate(origin)?;
    Ok(m)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    manifest_from_toml(&text, &path.display().to_string())
}

pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    let text = toml::to_string(m).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}
