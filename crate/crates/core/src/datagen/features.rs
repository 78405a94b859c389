//! IAMF feature files: `"IAMF"`, u32 version (1), u32 F, u32 T, f32 fps,
//! then T·F little-endian f32 values, frame-major.

use std::io::{ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"IAMF";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_BYTES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub features: usize,
    pub fps: f32,
    /// T·F values, frame-major.
    pub data: Vec<f32>,
}

impl FeatureFile {
    pub fn new(features: usize, fps: f32, data: Vec<f32>) -> Result<Self> {
        ensure!(features > 0, "feature dimension must be positive");
        ensure!(fps > 0.0 && fps.is_finite(), "fps must be positive, got {fps}");
        ensure!(
            data.len() % features == 0,
            "{} values do not form whole frames of {features}",
            data.len()
        );
        Ok(Self { features, fps, data })
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.features
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.features..(t + 1) * self.features]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.features)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FEATURE_HEADER_BYTES + 4 * self.data.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.features as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        out.extend_from_slice(&self.fps.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let header = parse_header(bytes, source)?;
        let want = header.payload_bytes();
        let have = bytes.len() - FEATURE_HEADER_BYTES;
        if have != want {
            return Err(Error::parse(
                source,
                FEATURE_HEADER_BYTES as u64,
                format!(
                    "payload of {} frames × {} features needs {want} bytes, found {have}",
                    header.frames, header.features
                ),
            ));
        }
        let data = bytes[FEATURE_HEADER_BYTES..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self {
            features: header.features,
            fps: header.fps,
            data,
        })
    }
}

/// Parsed IAMF header.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureHeader {
    pub features: usize,
    pub frames: usize,
    pub fps: f32,
}

impl FeatureHeader {
    pub fn payload_bytes(&self) -> usize {
        self.frames * self.features * 4
    }
}

fn parse_header(bytes: &[u8], source: &str) -> Result<FeatureHeader> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::parse(source, 0, "bad magic, expected \"IAMF\""));
    }
    if bytes.len() < FEATURE_HEADER_BYTES {
        return Err(Error::parse(
            source,
            bytes.len() as u64,
            format!("header needs {FEATURE_HEADER_BYTES} bytes, found {}", bytes.len()),
        ));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(Error::parse(source, 4, format!("unsupported version {version}")));
    }
    let features = word(8) as usize;
    if features == 0 {
        return Err(Error::parse(source, 8, "feature dimension is zero"));
    }
    let fps = f32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes"));
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::parse(source, 16, format!("fps must be positive, got {fps}")));
    }
    Ok(FeatureHeader {
        features,
        frames: word(12) as usize,
        fps,
    })
}

pub fn write_feature_file(path: &Path, file: &FeatureFile) -> Result<()> {
    std::fs::write(path, file.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureFile::from_bytes(&bytes, &path.display().to_string())
}

/// Reads an IAMF stream one frame at a time without buffering the payload.
pub struct FeatureReader<R> {
    inner: R,
    header: FeatureHeader,
    read: usize,
    source: String,
}

impl<R: Read> FeatureReader<R> {
    pub fn new(mut inner: R, source: &str) -> Result<Self> {
        let mut head = [0u8; FEATURE_HEADER_BYTES];
        let got = read_full(&mut inner, &mut head)?;
        let header = parse_header(&head[..got], source)?;
        Ok(Self {
            inner,
            header,
            read: 0,
            source: source.to_string(),
        })
    }

    pub fn header(&self) -> FeatureHeader {
        self.header
    }

    /// Fills `frame` with the next frame; `Ok(false)` after the declared
    /// last frame.
    pub fn next_frame(&mut self, frame: &mut [f32]) -> Result<bool> {
        ensure!(frame.len() == self.header.features, "frame buffer has the wrong width");
        if self.read == self.header.frames {
            return Ok(false);
        }
        let mut buf = vec![0u8; 4 * self.header.features];
        let got = read_full(&mut self.inner, &mut buf)?;
        if got != buf.len() {
            let offset = FEATURE_HEADER_BYTES + self.read * buf.len() + got;
            return Err(Error::parse(
                &self.source,
                offset as u64,
                format!(
                    "stream ended inside frame {}: payload needs {} bytes, found {}",
                    self.read,
                    self.header.payload_bytes(),
                    self.read * buf.len() + got
                ),
            ));
        }
        for (v, c) in frame.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        }
        self.read += 1;
        Ok(true)
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(got)
}

/// Writes an IAMF header followed by frames supplied one at a time.
pub fn write_feature_header(w: &mut impl Write, features: usize, frames: usize, fps: f32) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(features as u32).to_le_bytes())?;
    w.write_all(&(frames as u32).to_le_bytes())?;
    w.write_all(&fps.to_le_bytes())?;
    Ok(())
}
