//! File formats: GPDM float rasters, PGM depth and previews, intrinsics
//! sidecars, ASCII PLY clouds and fixed-precision JSON.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, DepthMap, GeometryError, PointCloud};
use crate::grid::Grid;

pub const GPDM_MAGIC: &[u8; 4] = b"GPDM";
const GPDM_HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("byte 0: bad magic {found:?}, expected \"GPDM\" or a P5 PGM")]
    Magic { found: Vec<u8> },
    #[error("byte {offset}: file truncated, needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("byte {offset}: {count} unexpected trailing bytes")]
    TrailingBytes { offset: usize, count: usize },
    #[error("byte {offset}: {message}")]
    Header { offset: usize, message: String },
    #[error("intrinsics sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error("raster is {found_w}x{found_h} but intrinsics describe {expected_w}x{expected_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn take(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], FormatError> {
    bytes.get(offset..offset + len).ok_or_else(|| FormatError::Truncated {
        offset: bytes.len(),
        needed: offset + len - bytes.len(),
    })
}

/// Decodes a GPDM raster: `"GPDM"`, u32 LE width, u32 LE height, then
/// row-major f32 LE samples.
pub fn decode_gpdm(bytes: &[u8]) -> Result<Grid<f64>, FormatError> {
    let magic = take(bytes, 0, 4).map_err(|_| FormatError::Magic { found: bytes.to_vec() })?;
    if magic != GPDM_MAGIC {
        return Err(FormatError::Magic { found: magic.to_vec() });
    }
    let u32_at = |o| take(bytes, o, 4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize);
    let width = u32_at(4)?;
    let height = u32_at(8)?;
    let count = width.checked_mul(height).ok_or(FormatError::Header {
        offset: 4,
        message: format!("dimensions {width}x{height} overflow"),
    })?;
    let body = take(bytes, GPDM_HEADER_LEN, count * 4)?;
    let end = GPDM_HEADER_LEN + count * 4;
    if bytes.len() > end {
        return Err(FormatError::TrailingBytes {
            offset: end,
            count: bytes.len() - end,
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Grid::from_vec(width, height, data).expect("length checked"))
}

pub fn encode_gpdm(grid: &Grid<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(GPDM_HEADER_LEN + grid.len() * 4);
    out.extend_from_slice(GPDM_MAGIC);
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    for &v in grid.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Raster with invalid depths written as NaN.
pub fn depth_to_gpdm(depth: &DepthMap) -> Vec<u8> {
    encode_gpdm(depth.values())
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<(usize, usize), FormatError> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => {
                return Err(FormatError::Truncated {
                    offset: *pos,
                    needed: 1,
                })
            }
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    let text = std::str::from_utf8(&bytes[start..*pos]).unwrap_or("");
    let value = text.parse().map_err(|_| FormatError::Header {
        offset: start,
        message: format!("expected an unsigned integer in PGM header, found {text:?}"),
    })?;
    Ok((value, start))
}

/// Decodes a binary PGM. Samples are multiplied by `scale`; 0 marks an invalid pixel.
pub fn decode_pgm(bytes: &[u8], scale: f64) -> Result<Grid<f64>, FormatError> {
    if bytes.get(0..2) != Some(b"P5") {
        return Err(FormatError::Magic {
            found: bytes.iter().take(4).copied().collect(),
        });
    }
    let mut pos = 2;
    let (width, _) = pgm_token(bytes, &mut pos)?;
    let (height, _) = pgm_token(bytes, &mut pos)?;
    let (maxval, at) = pgm_token(bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(FormatError::Header {
            offset: at,
            message: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let sample = if maxval > 255 { 2 } else { 1 };
    let body = take(bytes, pos, width * height * sample)?;
    let end = pos + body.len();
    if bytes.len() > end {
        return Err(FormatError::TrailingBytes {
            offset: end,
            count: bytes.len() - end,
        });
    }
    let raw: Vec<u16> = if sample == 2 {
        body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        body.iter().map(|&b| b as u16).collect()
    };
    let data = raw
        .into_iter()
        .map(|v| if v == 0 { f64::NAN } else { v as f64 * scale })
        .collect();
    Ok(Grid::from_vec(width, height, data).expect("length checked"))
}

/// 8-bit grayscale preview; values are clamped to [0, 1], NaN renders black.
pub fn encode_pgm_preview(grid: &Grid<f64>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(grid.as_slice().iter().map(|&v| {
        if v.is_nan() {
            0
        } else {
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        }
    }));
    out
}

/// Camera description stored next to a depth raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsSidecar {
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal: Option<[f64; 2]>,
    /// Metres per PGM sample unit; required for PGM rasters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_m_per_unit: Option<f64>,
}

impl IntrinsicsSidecar {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, GeometryError> {
        let k = CameraIntrinsics::new(self.focal_px, self.width, self.height)?;
        Ok(match self.principal {
            Some([x, y]) => k.with_principal(x, y),
            None => k,
        })
    }
}

/// Default sidecar location: the raster path with a `.json` extension.
pub fn sidecar_path(raster: &Path) -> PathBuf {
    raster.with_extension("json")
}

pub fn read_sidecar(path: &Path) -> Result<IntrinsicsSidecar, FormatError> {
    let bytes = read_file(path).map_err(|e| match e {
        FormatError::Io { source, .. } => FormatError::Sidecar {
            path: path.to_path_buf(),
            message: source.to_string(),
        },
        other => other,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| FormatError::Sidecar {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Decodes GPDM or PGM bytes, using the sidecar for the PGM scale.
pub fn decode_depth(bytes: &[u8], sidecar: &IntrinsicsSidecar, sidecar_at: &Path) -> Result<DepthMap, FormatError> {
    let grid = if bytes.starts_with(GPDM_MAGIC) {
        decode_gpdm(bytes)?
    } else if bytes.starts_with(b"P5") {
        let scale = sidecar.scale_m_per_unit.ok_or_else(|| FormatError::Sidecar {
            path: sidecar_at.to_path_buf(),
            message: "PGM depth needs scale_m_per_unit".into(),
        })?;
        decode_pgm(bytes, scale)?
    } else {
        return Err(FormatError::Magic {
            found: bytes.iter().take(4).copied().collect(),
        });
    };
    if grid.dims() != (sidecar.width, sidecar.height) {
        return Err(FormatError::DimensionMismatch {
            expected_w: sidecar.width,
            expected_h: sidecar.height,
            found_w: grid.width(),
            found_h: grid.height(),
        });
    }
    Ok(DepthMap::from_grid(grid))
}

/// Loads a raster plus its sidecar (`sidecar` overrides the default location).
pub fn load_depth(raster: &Path, sidecar: Option<&Path>) -> Result<(DepthMap, CameraIntrinsics), FormatError> {
    let sidecar_at = sidecar.map_or_else(|| sidecar_path(raster), Path::to_path_buf);
    let meta = read_sidecar(&sidecar_at)?;
    let k = meta.intrinsics()?;
    let depth = decode_depth(&read_file(raster)?, &meta, &sidecar_at)?;
    Ok((depth, k))
}

/// ASCII PLY with one `x y z` line per valid pixel, in row-major pixel order.
pub fn encode_ply(cloud: &PointCloud) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    for p in cloud.points() {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    out
}

/// Pretty JSON formatter that prints every float with 17 significant digits.
#[derive(Default)]
pub struct FixedFloatFormatter {
    inner: PrettyFormatter<'static>,
}

impl Formatter for FixedFloatFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Serializes with fixed key order (struct order) and 17-significant-digit
/// floats, followed by a newline. Non-finite floats become `null`.
pub fn to_fixed_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloatFormatter::default());
    value.serialize(&mut ser).expect("in-memory serialization");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::unproject;

    #[test]
    fn gpdm_round_trip_keeps_nan() {
        let g = Grid::from_vec(3, 2, vec![1.0, 2.5, f64::NAN, 0.0, -1.0, 1e-3]).unwrap();
        let back = decode_gpdm(&encode_gpdm(&g)).unwrap();
        assert_eq!(back.dims(), (3, 2));
        for (a, b) in g.as_slice().iter().zip(back.as_slice()) {
            assert!(a.is_nan() && b.is_nan() || (*a as f32) as f64 == *b);
        }
    }

    #[test]
    fn gpdm_layout_is_little_endian() {
        let g = Grid::from_vec(1, 1, vec![1.0]).unwrap();
        assert_eq!(
            encode_gpdm(&g),
            vec![b'G', b'P', b'D', b'M', 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0x80, 0x3f]
        );
    }

    #[test]
    fn gpdm_errors_report_offsets() {
        let g = Grid::from_vec(2, 2, vec![1.0; 4]).unwrap();
        let bytes = encode_gpdm(&g);
        match decode_gpdm(&bytes[..bytes.len() - 3]) {
            Err(FormatError::Truncated { offset: 25, needed: 3 }) => {}
            other => panic!("{other:?}"),
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            decode_gpdm(&extra),
            Err(FormatError::TrailingBytes { offset: 28, count: 1 })
        ));
        assert!(matches!(decode_gpdm(b"GPDX\0\0"), Err(FormatError::Magic { .. })));
        assert!(matches!(decode_gpdm(b"GPDM\x01\0"), Err(FormatError::Truncated { .. })));
    }

    #[test]
    fn pgm16_is_big_endian_with_zero_invalid() {
        let mut bytes = b"P5\n# depth\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x01, 0x00, 0x00, 0x00]);
        let g = decode_pgm(&bytes, 0.001).unwrap();
        assert!((g.as_slice()[0] - 0.256).abs() < 1e-12);
        assert!(g.as_slice()[1].is_nan());
    }

    #[test]
    fn pgm_header_error_has_offset() {
        match decode_pgm(b"P5\n2 x\n255\n", 1.0) {
            Err(FormatError::Header { offset: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn preview_clamps_and_blanks_nan() {
        let g = Grid::from_vec(4, 1, vec![0.0, 0.5, 2.0, f64::NAN]).unwrap();
        let bytes = encode_pgm_preview(&g);
        assert!(bytes.starts_with(b"P5\n4 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 128, 255, 0]);
    }

    #[test]
    fn sidecar_round_trip_and_unknown_field() {
        let s = IntrinsicsSidecar {
            focal_px: 500.0,
            width: 4,
            height: 2,
            principal: Some([1.0, 1.0]),
            scale_m_per_unit: None,
        };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<IntrinsicsSidecar>(&text).unwrap(), s);
        assert!(serde_json::from_str::<IntrinsicsSidecar>(r#"{"focal_px":1,"width":1,"height":1,"fx":2}"#).is_err());
        let k = s.intrinsics().unwrap();
        assert_eq!((k.principal_x, k.principal_y), (1.0, 1.0));
    }

    #[test]
    fn load_depth_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let raster = dir.path().join("d.gpdm");
        let g = Grid::from_vec(2, 2, vec![1.0, 2.0, f64::NAN, 4.0]).unwrap();
        write_file(&raster, &encode_gpdm(&g)).unwrap();
        let missing = load_depth(&raster, None);
        assert!(matches!(missing, Err(FormatError::Sidecar { .. })));
        write_file(&sidecar_path(&raster), br#"{"focal_px": 2.0, "width": 2, "height": 2}"#).unwrap();
        let (depth, k) = load_depth(&raster, None).unwrap();
        assert_eq!(depth.valid_count(), 3);
        assert_eq!(k.focal_px, 2.0);
        write_file(&sidecar_path(&raster), br#"{"focal_px": 2.0, "width": 3, "height": 2}"#).unwrap();
        assert!(matches!(
            load_depth(&raster, None),
            Err(FormatError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ply_lists_valid_points() {
        let k = CameraIntrinsics::new(1.0, 2, 1).unwrap();
        let depth = DepthMap::from_values(2, 1, vec![2.0, f64::NAN]).unwrap();
        let ply = encode_ply(&unproject(&depth, &k).unwrap());
        assert!(ply.contains("element vertex 1\n"));
        assert!(ply.ends_with("end_header\n-2 -1 2\n"));
    }

    #[test]
    fn fixed_json_uses_seventeen_digits() {
        #[derive(Serialize)]
        struct S {
            b: f64,
            a: Option<f64>,
            n: f64,
        }
        let out = to_fixed_json(&S {
            b: 0.1,
            a: None,
            n: f64::NAN,
        });
        assert_eq!(
            out,
            "{\n  \"b\": 1.0000000000000001e-1,\n  \"a\": null,\n  \"n\": null\n}\n"
        );
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["b"].as_f64(), Some(0.1));
    }
}
