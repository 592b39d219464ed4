//! `.vvol` container: a length-prefixed JSON header followed by a raw
//! little-endian payload.
//!
//! Layout:
//!
//! ```text
//! offset  size  content
//! 0       4     magic "VVOL"
//! 4       4     u32 LE format version (1)
//! 8       8     u64 LE header length H in bytes (including the trailing '\n')
//! 16      H     UTF-8 JSON header, terminated by '\n'
//! 16+H    ...   payload, C order over `dims`, little-endian
//! ```
//!
//! Header fields: `dims` (array of sizes, slowest first), `dtype` (`f32`,
//! `c64` = interleaved f32 re/im, `u8`, `u32`), `semantic` (`oct`,
//! `octa_unnorm`, `octa_norm`, `mask`, `ids`, `surface`, `alpha`, `enface`),
//! optional `protocol`, and a free-form `meta` object.

use crate::protocol::ScanProtocol;
use crate::volume::{Grid, LayerSurfaces, OctVolume, OctaStack, Samples, Surface, Volume};
use crate::{Error, Result};
use num_complex::Complex32;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"VVOL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    C64,
    U8,
    U32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::C64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Semantic {
    Oct,
    OctaUnnorm,
    OctaNorm,
    Mask,
    Ids,
    Surface,
    Alpha,
    Enface,
}

impl Semantic {
    fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dims: Vec<usize>,
    pub dtype: Dtype,
    pub semantic: Semantic,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ScanProtocol>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

impl Header {
    pub fn count(&self) -> usize {
        self.dims.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    C64(Vec<Complex32>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl Payload {
    pub fn dtype(&self) -> Dtype {
        match self {
            Payload::F32(_) => Dtype::F32,
            Payload::C64(_) => Dtype::C64,
            Payload::U8(_) => Dtype::U8,
            Payload::U32(_) => Dtype::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::C64(v) => v.len(),
            Payload::U8(v) => v.len(),
            Payload::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            Payload::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Payload::C64(v) => v
                .iter()
                .flat_map(|c| {
                    let mut b = [0u8; 8];
                    b[..4].copy_from_slice(&c.re.to_le_bytes());
                    b[4..].copy_from_slice(&c.im.to_le_bytes());
                    b
                })
                .collect(),
            Payload::U8(v) => v.clone(),
            Payload::U32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_bytes(dtype: Dtype, bytes: &[u8]) -> Payload {
        let f32s = |b: &[u8]| -> Vec<f32> {
            b.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        };
        match dtype {
            Dtype::F32 => Payload::F32(f32s(bytes)),
            Dtype::C64 => Payload::C64(
                f32s(bytes)
                    .chunks_exact(2)
                    .map(|p| Complex32::new(p[0], p[1]))
                    .collect(),
            ),
            Dtype::U8 => Payload::U8(bytes.to_vec()),
            Dtype::U32 => Payload::U32(
                bytes
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        }
    }
}

/// A container as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVolume {
    pub header: Header,
    pub payload: Payload,
}

impl RawVolume {
    pub fn new(
        dims: Vec<usize>,
        semantic: Semantic,
        protocol: Option<ScanProtocol>,
        payload: Payload,
    ) -> Result<Self> {
        let header = Header {
            dims,
            dtype: payload.dtype(),
            semantic,
            protocol,
            meta: serde_json::Value::Null,
        };
        if header.count() != payload.len() {
            return Err(Error::PayloadMismatch {
                expected: header.count() * header.dtype.size(),
                found: payload.len() * header.dtype.size(),
            });
        }
        Ok(RawVolume { header, payload })
    }

    pub fn with_meta(mut self, meta: serde_json::Value) -> Self {
        self.header.meta = meta;
        self
    }

    pub fn expect_semantic(&self, want: &[Semantic]) -> Result<()> {
        if want.contains(&self.header.semantic) {
            Ok(())
        } else {
            Err(Error::Semantic {
                expected: want
                    .iter()
                    .map(|s| s.name())
                    .collect::<Vec<_>>()
                    .join("|"),
                found: self.header.semantic.name(),
            })
        }
    }
}

pub fn encode(raw: &RawVolume) -> Result<Vec<u8>> {
    let mut header = serde_json::to_vec(&raw.header)
        .map_err(|e| Error::Header(format!("cannot serialize header: {e}")))?;
    header.push(b'\n');
    let payload = raw.payload.to_bytes();
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<RawVolume> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Header("missing VVOL magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Header(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let hend = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Header("header length exceeds file size".into()))?;
    let htext = &bytes[16..hend];
    if htext.last() != Some(&b'\n') {
        return Err(Error::Header("header is not newline-terminated".into()));
    }
    let value: serde_json::Value = serde_json::from_slice(htext)
        .map_err(|e| Error::Header(format!("header is not valid JSON: {e}")))?;
    if let Some(dt) = value.get("dtype").and_then(|d| d.as_str()) {
        if !["f32", "c64", "u8", "u32"].contains(&dt) {
            return Err(Error::UnsupportedDtype(dt.to_owned()));
        }
    }
    let header: Header =
        serde_json::from_value(value).map_err(|e| Error::Header(e.to_string()))?;
    let payload = &bytes[hend..];
    let expected = header.count() * header.dtype.size();
    if payload.len() != expected {
        return Err(Error::PayloadMismatch {
            expected,
            found: payload.len(),
        });
    }
    let payload = Payload::from_bytes(header.dtype, payload);
    Ok(RawVolume { header, payload })
}

pub fn write_raw(path: impl AsRef<Path>, raw: &RawVolume) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(raw)?;
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawVolume> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(f)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

// Typed wrappers.

pub fn oct_to_raw(vol: &OctVolume) -> Result<RawVolume> {
    let payload = match &vol.samples {
        Samples::Amplitude(v) => Payload::F32(v.clone()),
        Samples::Complex(v) => Payload::C64(v.clone()),
    };
    RawVolume::new(
        vol.dims().to_vec(),
        Semantic::Oct,
        Some(vol.protocol.clone()),
        payload,
    )
}

pub fn oct_from_raw(raw: RawVolume) -> Result<OctVolume> {
    raw.expect_semantic(&[Semantic::Oct])?;
    let dims: [usize; 5] = raw
        .header
        .dims
        .clone()
        .try_into()
        .map_err(|_| Error::Header("OCT volume needs 5 dims [band, repeat, y, x, z]".into()))?;
    let protocol = raw
        .header
        .protocol
        .ok_or_else(|| Error::Header("OCT volume has no protocol".into()))?;
    let samples = match raw.payload {
        Payload::F32(v) => Samples::Amplitude(v),
        Payload::C64(v) => Samples::Complex(v),
        other => return Err(Error::UnsupportedDtype(format!("{:?}", other.dtype()))),
    };
    OctVolume::new(protocol, dims, samples)
}

pub fn write_volume(path: impl AsRef<Path>, vol: &OctVolume) -> Result<()> {
    write_raw(path, &oct_to_raw(vol)?)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<OctVolume> {
    oct_from_raw(read_raw(path)?)
}

fn stack_raw(vols: &[Volume<f32>], semantic: Semantic, protocol: &ScanProtocol) -> Result<RawVolume> {
    let (ny, nx, nz) = vols.first().map(|v| v.dims()).unwrap_or((0, 0, 0));
    let mut data = Vec::with_capacity(vols.len() * ny * nx * nz);
    for v in vols {
        data.extend_from_slice(&v.data);
    }
    RawVolume::new(
        vec![vols.len(), ny, nx, nz],
        semantic,
        Some(protocol.clone()),
        Payload::F32(data),
    )
}

fn unstack(raw: RawVolume) -> Result<(Vec<Volume<f32>>, ScanProtocol)> {
    let d = raw.header.dims.clone();
    if d.len() != 4 {
        return Err(Error::Header("OCTA stack needs 4 dims [M, y, x, z]".into()));
    }
    let protocol = raw
        .header
        .protocol
        .ok_or_else(|| Error::Header("OCTA stack has no protocol".into()))?;
    let Payload::F32(data) = raw.payload else {
        return Err(Error::UnsupportedDtype("OCTA stack must be f32".into()));
    };
    let n = d[1] * d[2] * d[3];
    let vols = (0..d[0])
        .map(|m| Volume::from_vec(d[1], d[2], d[3], data[m * n..(m + 1) * n].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((vols, protocol))
}

/// Writes `octa_unnorm.vvol` and `octa_norm.vvol` into `dir`.
pub fn write_stack(dir: impl AsRef<Path>, stack: &OctaStack) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_raw(
        dir.join("octa_unnorm.vvol"),
        &stack_raw(&stack.unnormalized, Semantic::OctaUnnorm, &stack.protocol)?,
    )?;
    write_raw(
        dir.join("octa_norm.vvol"),
        &stack_raw(&stack.normalized, Semantic::OctaNorm, &stack.protocol)?,
    )
}

/// Reads a stack directory written by [`write_stack`].
pub fn read_stack(dir: impl AsRef<Path>) -> Result<OctaStack> {
    let dir = dir.as_ref();
    let un = read_raw(dir.join("octa_unnorm.vvol"))?;
    un.expect_semantic(&[Semantic::OctaUnnorm])?;
    let no = read_raw(dir.join("octa_norm.vvol"))?;
    no.expect_semantic(&[Semantic::OctaNorm])?;
    let (unnormalized, protocol) = unstack(un)?;
    let (normalized, _) = unstack(no)?;
    let stack = OctaStack {
        protocol,
        unnormalized,
        normalized,
    };
    stack.check()?;
    Ok(stack)
}

pub fn volume_raw_f32(v: &Volume<f32>, semantic: Semantic, protocol: Option<&ScanProtocol>) -> Result<RawVolume> {
    RawVolume::new(
        vec![v.ny, v.nx, v.nz],
        semantic,
        protocol.cloned(),
        Payload::F32(v.data.clone()),
    )
}

pub fn write_mask(path: impl AsRef<Path>, m: &Volume<u8>, protocol: Option<&ScanProtocol>) -> Result<()> {
    let raw = RawVolume::new(
        vec![m.ny, m.nx, m.nz],
        Semantic::Mask,
        protocol.cloned(),
        Payload::U8(m.data.clone()),
    )?;
    write_raw(path, &raw)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Volume<u8>> {
    let raw = read_raw(path)?;
    raw.expect_semantic(&[Semantic::Mask])?;
    let d = raw.header.dims.clone();
    match (d.as_slice(), raw.payload) {
        ([ny, nx, nz], Payload::U8(v)) => Volume::from_vec(*ny, *nx, *nz, v),
        _ => Err(Error::Header("mask must be 3D u8".into())),
    }
}

pub fn write_ids(path: impl AsRef<Path>, ids: &Volume<u32>, protocol: Option<&ScanProtocol>) -> Result<()> {
    let raw = RawVolume::new(
        vec![ids.ny, ids.nx, ids.nz],
        Semantic::Ids,
        protocol.cloned(),
        Payload::U32(ids.data.clone()),
    )?;
    write_raw(path, &raw)
}

/// Reads an ID volume (3D) and its protocol, if recorded.
pub fn read_ids(path: impl AsRef<Path>) -> Result<(Volume<u32>, Option<ScanProtocol>)> {
    let raw = read_raw(path)?;
    raw.expect_semantic(&[Semantic::Ids])?;
    let d = raw.header.dims.clone();
    let protocol = raw.header.protocol.clone();
    match (d.as_slice(), raw.payload) {
        ([ny, nx, nz], Payload::U32(v)) => Ok((Volume::from_vec(*ny, *nx, *nz, v)?, protocol)),
        _ => Err(Error::Header("id volume must be 3D u32".into())),
    }
}

pub fn write_id_image(path: impl AsRef<Path>, ids: &Grid<u32>) -> Result<()> {
    let raw = RawVolume::new(
        vec![ids.ny, ids.nx],
        Semantic::Ids,
        None,
        Payload::U32(ids.data.clone()),
    )?;
    write_raw(path, &raw)
}

pub fn write_grid(
    path: impl AsRef<Path>,
    g: &Grid<f32>,
    semantic: Semantic,
    protocol: Option<&ScanProtocol>,
) -> Result<()> {
    let raw = RawVolume::new(
        vec![g.ny, g.nx],
        semantic,
        protocol.cloned(),
        Payload::F32(g.data.clone()),
    )?;
    write_raw(path, &raw)
}

/// Reads a 2D f32 grid of any of the given semantics.
pub fn read_grid(path: impl AsRef<Path>, want: &[Semantic]) -> Result<(Grid<f32>, Option<ScanProtocol>)> {
    let raw = read_raw(path)?;
    raw.expect_semantic(want)?;
    let protocol = raw.header.protocol.clone();
    match (raw.header.dims.as_slice(), raw.payload) {
        ([ny, nx], Payload::F32(v)) => Ok((Grid::from_vec(*ny, *nx, v)?, protocol)),
        _ => Err(Error::Header("expected a 2D f32 grid".into())),
    }
}

/// Surfaces are stored as a `[5, y, x]` f32 stack; `meta.surfaces` lists the
/// order and `meta.flagged` is not stored (flags are recomputed on load as 0).
pub fn write_surfaces(path: impl AsRef<Path>, s: &LayerSurfaces, protocol: Option<&ScanProtocol>) -> Result<()> {
    let (ny, nx) = s.ilm.dims();
    let mut data = Vec::with_capacity(5 * ny * nx);
    for surf in Surface::ALL {
        data.extend_from_slice(&s.get(surf).data);
    }
    let names: Vec<&str> = Surface::ALL.iter().map(|s| s.name()).collect();
    let raw = RawVolume::new(
        vec![5, ny, nx],
        Semantic::Surface,
        protocol.cloned(),
        Payload::F32(data),
    )?
    .with_meta(serde_json::json!({ "surfaces": names, "unit": "um" }));
    write_raw(path, &raw)
}

pub fn read_surfaces(path: impl AsRef<Path>) -> Result<LayerSurfaces> {
    let raw = read_raw(path)?;
    raw.expect_semantic(&[Semantic::Surface])?;
    let d = raw.header.dims.clone();
    let Payload::F32(v) = raw.payload else {
        return Err(Error::UnsupportedDtype("surfaces must be f32".into()));
    };
    if d.len() != 3 || d[0] != 5 {
        return Err(Error::Header("surfaces need dims [5, y, x]".into()));
    }
    let n = d[1] * d[2];
    let g = |k: usize| Grid::from_vec(d[1], d[2], v[k * n..(k + 1) * n].to_vec());
    Ok(LayerSurfaces {
        ilm: g(0)?,
        rnfl_posterior: g(1)?,
        inl_center: g(2)?,
        rpe: g(3)?,
        fine_rpe: g(4)?,
        flagged: Grid::filled(d[1], d[2], 0),
    })
}
