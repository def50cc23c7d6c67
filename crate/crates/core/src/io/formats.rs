use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::tensor::{with_path, Reader};
use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::voxelizer::{PointCloud, ATTR_WIDTH};

pub const SCENE_MAGIC: &[u8; 4] = b"GXSC";
pub const SCENE_VERSION: u16 = 1;

/// Orthonormality tolerance for rotations read from camera files.
pub const CAMERA_TOL: f64 = 1e-6;

/// Serializes a cloud as single-precision coordinates then attributes.
pub fn scene_to_bytes(pc: &PointCloud) -> Result<Vec<u8>> {
    pc.validate()?;
    let n = u32::try_from(pc.len()).map_err(|_| Error::invalid("point count exceeds u32"))?;
    let mut out = Vec::with_capacity(11 + pc.len() * 4 * (3 + ATTR_WIDTH));
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.push(ATTR_WIDTH as u8);
    for c in &pc.coords {
        c.iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes()));
    }
    for a in &pc.attrs {
        a.iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes()));
    }
    Ok(out)
}

pub fn scene_from_bytes(bytes: &[u8]) -> Result<PointCloud> {
    let mut r = Reader::new(bytes, "GXSC");
    if r.take(4, "magic")? != SCENE_MAGIC {
        return Err(Error::format("GXSC magic", "not a GXSC scene file"));
    }
    let version = r.u16("version")?;
    if version != SCENE_VERSION {
        return Err(Error::format(
            "GXSC version",
            format!("unsupported version {version}"),
        ));
    }
    let n = r.u32("point count")? as usize;
    let width = r.u8("attr width")? as usize;
    if width != ATTR_WIDTH {
        return Err(Error::format(
            "GXSC attr width",
            format!("expected {ATTR_WIDTH}, found {width}"),
        ));
    }
    let expected = n * 4 * (3 + ATTR_WIDTH);
    if r.remaining() != expected {
        return Err(Error::format(
            "GXSC payload",
            format!("{n} points need {expected} bytes, found {}", r.remaining()),
        ));
    }
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        let mut c = [0.0; 3];
        for v in &mut c {
            *v = r.f32("coords")? as f64;
        }
        coords.push(c);
    }
    let mut attrs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut a = [0.0; ATTR_WIDTH];
        for v in &mut a {
            *v = r.f32("attrs")? as f64;
        }
        attrs.push(a);
    }
    PointCloud::new(coords, attrs)
}

pub fn write_scene(pc: &PointCloud, path: &Path) -> Result<()> {
    write_atomic(path, &scene_to_bytes(pc)?)
}

pub fn read_scene(path: &Path) -> Result<PointCloud> {
    scene_from_bytes(&read_bytes(path)?).map_err(|e| with_path(e, path))
}

/// One line per camera:
/// `fx fy cx cy width height near r00 … r22 t0 t1 t2`.
pub fn cameras_to_text(cams: &[Camera]) -> String {
    let mut s = String::new();
    for c in cams {
        let mut fields = vec![
            format!("{:.16e}", c.fx),
            format!("{:.16e}", c.fy),
            format!("{:.16e}", c.cx),
            format!("{:.16e}", c.cy),
            c.width.to_string(),
            c.height.to_string(),
            format!("{:.16e}", c.near),
        ];
        for i in 0..3 {
            for j in 0..3 {
                fields.push(format!("{:.16e}", c.rotation[(i, j)]));
            }
        }
        fields.extend(c.translation.iter().map(|v| format!("{v:.16e}")));
        let _ = writeln!(s, "{}", fields.join(" "));
    }
    s
}

pub fn cameras_from_text(text: &str) -> Result<Vec<Camera>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = format!("camera line {}", lineno + 1);
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 19 {
            return Err(Error::format(
                field,
                format!("expected 19 fields, found {}", parts.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            parts[i]
                .parse::<f64>()
                .map_err(|_| Error::format(field.clone(), format!("bad number {:?}", parts[i])))
        };
        let int = |i: usize| -> Result<usize> {
            parts[i]
                .parse::<usize>()
                .map_err(|_| Error::format(field.clone(), format!("bad image size {:?}", parts[i])))
        };
        let mut rot = [0.0; 9];
        for (k, r) in rot.iter_mut().enumerate() {
            *r = num(7 + k)?;
        }
        let cam = Camera {
            fx: num(0)?,
            fy: num(1)?,
            cx: num(2)?,
            cy: num(3)?,
            width: int(4)?,
            height: int(5)?,
            near: num(6)?,
            rotation: Matrix3::from_row_slice(&rot),
            translation: Vector3::new(num(16)?, num(17)?, num(18)?),
        };
        cam.validate(CAMERA_TOL)
            .map_err(|e| Error::format(field.clone(), e.to_string()))?;
        out.push(cam);
    }
    Ok(out)
}

pub fn write_cameras(cams: &[Camera], path: &Path) -> Result<()> {
    write_atomic(path, cameras_to_text(cams).as_bytes())
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let bytes = read_bytes(path)?;
    let text =
        String::from_utf8(bytes).map_err(|_| Error::format("cameras", "file is not UTF-8"))?;
    cameras_from_text(&text).map_err(|e| with_path(e, path))
}

/// 8-bit RGB image with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// `H·W·3`, row-major.
    pub data: Vec<f64>,
}

/// Round-half-up quantization to 8 bits.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn ppm_to_bytes(img: &Image) -> Result<Vec<u8>> {
    if img.data.len() != img.width * img.height * 3 {
        return Err(Error::invalid("image buffer does not match its size"));
    }
    if img.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("image values must lie in [0,1]"));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn ppm_from_bytes(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut token = |what: &str| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(format!("PPM {what}"), "missing header token"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token("magic")?;
    if magic != "P6" {
        return Err(Error::format(
            "PPM magic",
            format!("expected P6, found {magic:?}"),
        ));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token(what)?;
        t.parse()
            .map_err(|_| Error::format(format!("PPM {what}"), format!("bad value {t:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(
            "PPM maxval",
            format!("only 255 is supported, found {maxval}"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = width * height * 3;
    if bytes.len() < start || bytes.len() - start != need {
        return Err(Error::format(
            "PPM raster",
            format!("{width}x{height} needs {need} bytes"),
        ));
    }
    Ok(Image {
        width,
        height,
        data: bytes[start..].iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    write_atomic(path, &ppm_to_bytes(img)?)
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    ppm_from_bytes(&read_bytes(path)?).map_err(|e| with_path(e, path))
}
