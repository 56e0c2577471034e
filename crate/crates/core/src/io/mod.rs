//! On-disk formats: raw I/Q captures, stage CSVs, detector models and
//! dataset manifests.

pub mod capture;
pub mod manifest;
pub mod model;
pub mod tables;

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

pub use capture::{
    decode_samples, encode_samples, read_iq, read_iq_window, read_meta, sidecar_path, write_iq, write_meta, ByteOrder,
    CaptureMeta, IqReader, SampleFormat,
};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, PowerStatus, Role, SpoofingType, ThreatModel};
pub use model::{load_model, save_model, Provenance};

/// Deserializes TOML, reporting schema violations with the offending field path.
pub fn from_toml_str<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::parse(origin, e.message()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::parse(format!("{origin}: {path}"), inner.message().to_string())
    })
}

pub(crate) fn from_toml<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    from_toml_str(text, &origin.display().to_string())
}
