//! Headerless interleaved I/Q payloads with a TOML sidecar.
//!
//! Integer formats map to floats by dividing by 2^(bits-1). Writing never
//! saturates: a value that does not fit the integer grid range is an error.
//! Decimation keeps every `d`-th sample without any anti-alias filtering, so
//! out-of-band energy folds into the result.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::IqStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    Int8,
    Int16,
    Float32,
}

impl SampleFormat {
    /// Bytes per real component.
    pub fn width(self) -> usize {
        match self {
            SampleFormat::Int8 => 1,
            SampleFormat::Int16 => 2,
            SampleFormat::Float32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SampleFormat::Int8 => "int8",
            SampleFormat::Int16 => "int16",
            SampleFormat::Float32 => "float32",
        }
    }
}

impl std::str::FromStr for SampleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int8" => Ok(SampleFormat::Int8),
            "int16" => Ok(SampleFormat::Int16),
            "float32" => Ok(SampleFormat::Float32),
            other => Err(Error::invalid(format!("unknown sample format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    #[default]
    Little,
    Big,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureMeta {
    pub sample_rate: f64,
    pub sample_format: SampleFormat,
    #[serde(default)]
    pub byte_order: ByteOrder,
    #[serde(default)]
    pub t0: f64,
    /// Payload stores Q before I.
    #[serde(default)]
    pub iq_swap: bool,
    /// Complex samples in the payload, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_samples: Option<u64>,
    #[serde(default)]
    pub notes: String,
}

impl CaptureMeta {
    pub fn new(sample_rate: f64, sample_format: SampleFormat) -> Self {
        Self {
            sample_rate,
            sample_format,
            byte_order: ByteOrder::Little,
            t0: 0.0,
            iq_swap: false,
            num_samples: None,
            notes: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "sample rate {} must be positive",
                self.sample_rate
            )));
        }
        if !self.t0.is_finite() {
            return Err(Error::invalid("t0 must be finite"));
        }
        Ok(())
    }

    /// Bytes per complex sample.
    pub fn frame_bytes(&self) -> usize {
        2 * self.sample_format.width()
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.toml");
    PathBuf::from(s)
}

pub fn read_meta(path: &Path) -> Result<CaptureMeta> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::file(&side, e))?;
    let meta: CaptureMeta = super::from_toml(&text, &side)?;
    meta.validate()?;
    Ok(meta)
}

pub fn write_meta(path: &Path, meta: &CaptureMeta) -> Result<()> {
    let side = sidecar_path(path);
    let text = toml::to_string(meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&side, text).map_err(|e| Error::file(&side, e))
}

fn scale(fmt: SampleFormat) -> f32 {
    match fmt {
        SampleFormat::Int8 => 128.0,
        SampleFormat::Int16 => 32768.0,
        SampleFormat::Float32 => 1.0,
    }
}

fn decode_component(b: &[u8], meta: &CaptureMeta) -> f32 {
    let le = meta.byte_order == ByteOrder::Little;
    match meta.sample_format {
        SampleFormat::Int8 => f32::from(b[0] as i8) / 128.0,
        SampleFormat::Int16 => {
            let a = [b[0], b[1]];
            let v = if le {
                i16::from_le_bytes(a)
            } else {
                i16::from_be_bytes(a)
            };
            f32::from(v) / 32768.0
        }
        SampleFormat::Float32 => {
            let a = [b[0], b[1], b[2], b[3]];
            if le {
                f32::from_le_bytes(a)
            } else {
                f32::from_be_bytes(a)
            }
        }
    }
}

/// Decodes a whole number of frames. `bytes.len()` must be a multiple of the
/// frame size.
pub fn decode_samples(bytes: &[u8], meta: &CaptureMeta) -> Result<Vec<Complex32>> {
    let fb = meta.frame_bytes();
    if !bytes.len().is_multiple_of(fb) {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {}-byte {} I/Q frames",
            bytes.len(),
            fb,
            meta.sample_format.name()
        )));
    }
    let w = meta.sample_format.width();
    Ok(bytes
        .chunks_exact(fb)
        .map(|f| {
            let a = decode_component(&f[..w], meta);
            let b = decode_component(&f[w..], meta);
            if meta.iq_swap {
                Complex32::new(b, a)
            } else {
                Complex32::new(a, b)
            }
        })
        .collect())
}

fn encode_component(x: f32, index: usize, meta: &CaptureMeta, out: &mut Vec<u8>) -> Result<()> {
    let le = meta.byte_order == ByteOrder::Little;
    let fmt = meta.sample_format;
    if !x.is_finite() {
        return Err(Error::Range {
            index,
            format: fmt.name(),
        });
    }
    match fmt {
        SampleFormat::Float32 => {
            out.extend_from_slice(&if le { x.to_le_bytes() } else { x.to_be_bytes() });
        }
        SampleFormat::Int8 | SampleFormat::Int16 => {
            let s = scale(fmt);
            let v = (f64::from(x) * f64::from(s)).round();
            if v < -f64::from(s) || v > f64::from(s) - 1.0 {
                return Err(Error::Range {
                    index,
                    format: fmt.name(),
                });
            }
            if fmt == SampleFormat::Int8 {
                out.push(v as i8 as u8);
            } else {
                let v = v as i16;
                out.extend_from_slice(&if le { v.to_le_bytes() } else { v.to_be_bytes() });
            }
        }
    }
    Ok(())
}

pub fn encode_samples(samples: &[Complex32], meta: &CaptureMeta) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(samples.len() * meta.frame_bytes());
    for (i, s) in samples.iter().enumerate() {
        let (a, b) = if meta.iq_swap { (s.im, s.re) } else { (s.re, s.im) };
        encode_component(a, i, meta, &mut out)?;
        encode_component(b, i, meta, &mut out)?;
    }
    Ok(out)
}

/// Writes the payload and its sidecar. The sidecar's `num_samples` is set
/// from the stream.
pub fn write_iq(stream: &IqStream, path: &Path, meta: &CaptureMeta) -> Result<()> {
    meta.validate()?;
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(f);
    const CHUNK: usize = 1 << 16;
    for (ci, chunk) in stream.samples.chunks(CHUNK).enumerate() {
        let bytes = encode_samples(chunk, meta).map_err(|e| match e {
            Error::Range { index, format } => Error::Range {
                index: index + ci * CHUNK,
                format,
            },
            other => other,
        })?;
        w.write_all(&bytes).map_err(|e| Error::file(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    let mut m = meta.clone();
    m.sample_rate = stream.sample_rate;
    m.t0 = stream.t0;
    m.num_samples = Some(stream.len() as u64);
    write_meta(path, &m)
}

/// Payload length check shared by the readers. Returns the number of frames.
fn frames_in(path: &Path, meta: &CaptureMeta) -> Result<u64> {
    let len = std::fs::metadata(path).map_err(|e| Error::file(path, e))?.len();
    let fb = meta.frame_bytes() as u64;
    if let Some(n) = meta.num_samples {
        let want = n * fb;
        if len < want {
            return Err(Error::Decode {
                offset: len,
                msg: format!("payload ends early: {n} samples declared need {want} bytes"),
            });
        }
    }
    if len % fb != 0 {
        return Err(Error::Format(format!(
            "{len} bytes is not a whole number of {fb}-byte {} I/Q frames",
            meta.sample_format.name()
        )));
    }
    Ok(meta.num_samples.unwrap_or(len / fb))
}

/// Reads an entire capture, keeping every `decimate`-th sample.
pub fn read_iq(path: &Path, meta: &CaptureMeta, decimate: usize) -> Result<IqStream> {
    meta.validate()?;
    if decimate == 0 {
        return Err(Error::invalid("decimation factor must be at least 1"));
    }
    let frames = frames_in(path, meta)? as usize;
    let keep = frames / decimate;
    let mut reader = IqReader::open_with(path, meta.clone())?;
    let mut samples = Vec::with_capacity(keep);
    let mut idx = 0usize;
    while let Some(chunk) = reader.next_chunk(1 << 16)? {
        for s in chunk {
            if idx.is_multiple_of(decimate) && samples.len() < keep {
                samples.push(s);
            }
            idx += 1;
        }
    }
    IqStream::new(samples, meta.sample_rate / decimate as f64, meta.t0)
}

/// Reads at most `len` samples starting at sample `start`.
pub fn read_iq_window(path: &Path, meta: &CaptureMeta, start: u64, len: usize) -> Result<IqStream> {
    meta.validate()?;
    let mut reader = IqReader::open_with(path, meta.clone())?;
    reader.seek(start)?;
    let samples = reader.next_chunk(len)?.unwrap_or_default();
    IqStream::new(samples, meta.sample_rate, meta.t0 + start as f64 / meta.sample_rate)
}

/// Sequential chunked reader; each call allocates only the requested chunk.
pub struct IqReader {
    inner: BufReader<File>,
    meta: CaptureMeta,
    path: PathBuf,
    frames: u64,
    pos: u64,
}

impl IqReader {
    /// Opens a capture using its sidecar.
    pub fn open(path: &Path) -> Result<Self> {
        let meta = read_meta(path)?;
        Self::open_with(path, meta)
    }

    pub fn open_with(path: &Path, meta: CaptureMeta) -> Result<Self> {
        let frames = frames_in(path, &meta)?;
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Ok(Self {
            inner: BufReader::new(f),
            meta,
            path: path.to_path_buf(),
            frames,
            pos: 0,
        })
    }

    pub fn meta(&self) -> &CaptureMeta {
        &self.meta
    }

    pub fn len(&self) -> u64 {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn seek(&mut self, sample: u64) -> Result<()> {
        let s = sample.min(self.frames);
        let off = s * self.meta.frame_bytes() as u64;
        self.inner
            .seek(SeekFrom::Start(off))
            .map_err(|e| Error::file(&self.path, e))?;
        self.pos = s;
        Ok(())
    }

    /// Next run of up to `max` samples, or `None` at the end of the payload.
    pub fn next_chunk(&mut self, max: usize) -> Result<Option<Vec<Complex32>>> {
        let n = (self.frames - self.pos).min(max as u64) as usize;
        if n == 0 {
            return Ok(None);
        }
        let fb = self.meta.frame_bytes();
        let mut buf = vec![0u8; n * fb];
        let start = self.pos * fb as u64;
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::Decode {
                        offset: start + filled as u64,
                        msg: "unexpected end of payload".into(),
                    })
                }
                Ok(k) => filled += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::file(&self.path, e)),
            }
        }
        self.pos += n as u64;
        decode_samples(&buf, &self.meta).map(Some)
    }
}
