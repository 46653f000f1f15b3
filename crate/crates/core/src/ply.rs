//! Binary little-endian PLY persistence in the usual splatting layout.
//!
//! On disk: `x y z`, `f_dc_0..2` (color), `opacity` (logit), `scale_0..2`
//! (natural log of meters), `rot_0..3` (quaternion `w x y z`). Frame and
//! color encoding travel in `comment` lines; source labels are written as two
//! extra properties only when some Gaussian carries one.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::{Frame, Gaussian, GaussianCloud, Source};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ColorEncoding {
    /// `f_dc` holds the color in `[0, 1]` as-is.
    #[default]
    Linear,
    /// `f_dc` holds `logit(color)`.
    Logit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    Float,
    Double,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PlyOptions {
    pub color: ColorEncoding,
    pub precision: Precision,
}

const CORE_FIELDS: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn write_ply(cloud: &GaussianCloud, path: &Path, opts: PlyOptions) -> Result<()> {
    let bytes = encode(cloud, opts);
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn encode(cloud: &GaussianCloud, opts: PlyOptions) -> Vec<u8> {
    let labeled = cloud.sources().iter().any(|s| *s != Source::Unlabeled);
    let ty = match opts.precision {
        Precision::Float => "float",
        Precision::Double => "double",
    };
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    match cloud.frame() {
        Frame::World => header.push_str("comment frame world\n"),
        Frame::Camera(i) => header.push_str(&format!("comment frame camera {i}\n")),
    }
    header.push_str(match opts.color {
        ColorEncoding::Linear => "comment color_encoding linear\n",
        ColorEncoding::Logit => "comment color_encoding logit\n",
    });
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for name in CORE_FIELDS {
        header.push_str(&format!("property {ty} {name}\n"));
    }
    if labeled {
        header.push_str("property uchar source_branch\nproperty uint source_camera\n");
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    for (g, s) in cloud.iter() {
        let color = |c: f64| match opts.color {
            ColorEncoding::Linear => c,
            ColorEncoding::Logit => logit(c),
        };
        let q = g.rotation.as_ref();
        let values = [
            g.position.x,
            g.position.y,
            g.position.z,
            color(g.color.x),
            color(g.color.y),
            color(g.color.z),
            logit(g.opacity),
            g.scale.x.ln(),
            g.scale.y.ln(),
            g.scale.z.ln(),
            q.w,
            q.i,
            q.j,
            q.k,
        ];
        for v in values {
            match opts.precision {
                Precision::Float => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Precision::Double => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        if labeled {
            let (branch, cam) = match s {
                Source::Unlabeled => (0u8, 0u32),
                Source::Pixel { camera } => (1, *camera),
                Source::Volume { camera } => (2, *camera),
            };
            out.push(branch);
            out.extend_from_slice(&cam.to_le_bytes());
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap_or([0; 8])),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.props.iter().map(|(_, s)| s.size()).sum()
    }
}

fn perr(offset: usize, message: impl Into<String>) -> Error {
    Error::Ply {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn read_ply(path: &Path) -> Result<GaussianCloud> {
    decode(&fs::read(path)?)
}

pub fn decode(bytes: &[u8]) -> Result<GaussianCloud> {
    const END: &[u8] = b"end_header\n";
    let header_end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .map(|p| p + END.len())
        .ok_or_else(|| perr(0, "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|e| perr(e.valid_up_to(), "header is not utf-8"))?;

    let mut lines = header.split_inclusive('\n').scan(0usize, |off, l| {
        let start = *off;
        *off += l.len();
        Some((start, l.trim_end_matches(['\n', '\r'])))
    });
    if lines.next().map(|(_, l)| l) != Some("ply") {
        return Err(perr(0, "missing ply magic"));
    }
    let mut frame = Frame::World;
    let mut color = ColorEncoding::Linear;
    let mut format_seen = false;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let Some((at, line)) = lines.next() else { break };
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", "1.0"] => format_seen = true,
            ["format", other, ..] => return Err(perr(at, format!("unsupported format {other}"))),
            ["comment", "frame", "world"] => frame = Frame::World,
            ["comment", "frame", "camera", i] => {
                frame = Frame::Camera(i.parse().map_err(|_| perr(at, "bad camera index"))?)
            }
            ["comment", "color_encoding", "linear"] => color = ColorEncoding::Linear,
            ["comment", "color_encoding", "logit"] => color = ColorEncoding::Logit,
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| perr(at, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => return Err(perr(at, "list properties are not supported")),
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| perr(at, format!("unknown type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| perr(at, "property before element"))?
                    .props
                    .push((name.to_string(), ty));
            }
            ["end_header"] => break,
            [] => {}
            _ => return Err(perr(at, format!("malformed header line {line:?}"))),
        }
    }
    if !format_seen {
        return Err(perr(0, "missing format line"));
    }

    let mut pos = header_end;
    let mut cloud = GaussianCloud::new(frame);
    let mut found = false;
    for el in &elements {
        let stride = el.stride();
        if el.name != "vertex" {
            pos += stride * el.count;
            continue;
        }
        found = true;
        let col = |name: &str| el.props.iter().position(|(n, _)| n == name);
        let mut cols = [0usize; 14];
        for (c, name) in cols.iter_mut().zip(CORE_FIELDS) {
            *c = col(name).ok_or_else(|| perr(header_end, format!("missing property {name}")))?;
        }
        let branch_col = col("source_branch");
        let camera_col = col("source_camera");
        let mut prop_offsets = Vec::with_capacity(el.props.len());
        let mut acc = 0;
        for (_, s) in &el.props {
            prop_offsets.push(acc);
            acc += s.size();
        }
        let mut values = vec![0.0f64; el.props.len()];
        for index in 0..el.count {
            if pos + stride > bytes.len() {
                return Err(perr(
                    bytes.len(),
                    format!(
                        "truncated: record {index} of {} needs bytes {}..{}",
                        el.count,
                        pos,
                        pos + stride
                    ),
                ));
            }
            let rec = &bytes[pos..pos + stride];
            for (k, (_, s)) in el.props.iter().enumerate() {
                values[k] = s.read(&rec[prop_offsets[k]..]);
                if values[k].is_nan() {
                    return Err(perr(pos + prop_offsets[k], format!("NaN in {}", el.props[k].0)));
                }
            }
            let v = |i: usize| values[cols[i]];
            let decode_color = |x: f64| match color {
                ColorEncoding::Linear => x,
                ColorEncoding::Logit => sigmoid(x),
            };
            let q = Quaternion::new(v(10), v(11), v(12), v(13));
            let norm = q.norm();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(perr(pos, format!("record {index}: degenerate quaternion")));
            }
            let g = Gaussian {
                position: Vector3::new(v(0), v(1), v(2)),
                color: Vector3::new(decode_color(v(3)), decode_color(v(4)), decode_color(v(5))),
                opacity: sigmoid(v(6)),
                scale: Vector3::new(v(7).exp(), v(8).exp(), v(9).exp()),
                rotation: UnitQuaternion::from_quaternion(q),
            };
            let source = match (branch_col, camera_col) {
                (Some(b), Some(c)) => {
                    let camera = values[c] as u32;
                    match values[b] as u8 {
                        0 => Source::Unlabeled,
                        1 => Source::Pixel { camera },
                        2 => Source::Volume { camera },
                        other => return Err(perr(pos, format!("unknown source branch {other}"))),
                    }
                }
                _ => Source::Unlabeled,
            };
            cloud
                .push(g, source)
                .map_err(|e| perr(pos, format!("record {index}: {e}")))?;
            pos += stride;
        }
        break;
    }
    if !found {
        return Err(perr(header_end, "no vertex element"));
    }
    if elements.last().map(|e| e.name.as_str()) == Some("vertex") && pos < bytes.len() {
        return Err(perr(pos, format!("{} trailing bytes after vertex data", bytes.len() - pos)));
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = GaussianCloud::new(Frame::Camera(2));
        for i in 0..n {
            let q = Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let g = Gaussian {
                position: Vector3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                ),
                scale: Vector3::new(
                    rng.random_range(1e-3..1.0),
                    rng.random_range(1e-3..1.0),
                    rng.random_range(1e-3..1.0),
                ),
                rotation: UnitQuaternion::from_quaternion(q),
                opacity: rng.random_range(0.01..0.99),
                color: Vector3::new(rng.random(), rng.random(), rng.random()),
            };
            let src = match i % 3 {
                0 => Source::Unlabeled,
                1 => Source::Pixel { camera: i as u32 },
                _ => Source::Volume { camera: 7 },
            };
            cloud.push(g, src).unwrap();
        }
        cloud
    }

    fn assert_close(a: &GaussianCloud, b: &GaussianCloud, tol: f64) {
        assert_eq!(a.len(), b.len());
        assert_eq!(a.frame(), b.frame());
        assert_eq!(a.sources(), b.sources());
        for (x, y) in a.gaussians().iter().zip(b.gaussians()) {
            let rel = |p: f64, q: f64| (p - q).abs() / p.abs().max(1.0);
            for k in 0..3 {
                assert!(rel(x.position[k], y.position[k]) < tol);
                assert!((x.scale[k] - y.scale[k]).abs() / x.scale[k] < tol);
                assert!(rel(x.color[k], y.color[k]) < tol);
            }
            assert!(rel(x.opacity, y.opacity) < tol);
            assert!(x.rotation.angle_to(&y.rotation) < tol.sqrt());
        }
    }

    #[test]
    fn roundtrip_1000_random_gaussians() {
        let cloud = random_cloud(1000, 11);
        let back = decode(&encode(&cloud, PlyOptions::default())).unwrap();
        assert_close(&cloud, &back, 1e-5);
        let opts = PlyOptions {
            color: ColorEncoding::Logit,
            precision: Precision::Double,
        };
        let back = decode(&encode(&cloud, opts)).unwrap();
        assert_close(&cloud, &back, 1e-12);
    }

    #[test]
    fn empty_cloud_header_only() {
        let cloud = GaussianCloud::new(Frame::World);
        let back = decode(&encode(&cloud, PlyOptions::default())).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.frame(), Frame::World);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let bytes = encode(&random_cloud(10, 3), PlyOptions::default());
        let cut = &bytes[..bytes.len() - 7];
        match decode(cut) {
            Err(Error::Ply { offset, message }) => {
                assert_eq!(offset as usize, cut.len());
                assert!(message.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_headers_rejected() {
        assert!(decode(b"ply\nformat ascii 1.0\nend_header\n").is_err());
        assert!(decode(b"plx\nend_header\n").is_err());
        assert!(decode(b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n").is_err());
        let missing = b"ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n";
        assert!(matches!(decode(missing), Err(Error::Ply { .. })));
    }

    #[test]
    fn nan_payload_rejected() {
        let mut bytes = encode(&random_cloud(2, 5), PlyOptions::default());
        let header_len = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        bytes[header_len + 4..header_len + 8].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode(&bytes) {
            Err(Error::Ply { offset, message }) => {
                assert_eq!(offset as usize, header_len + 4);
                assert!(message.contains("NaN"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&random_cloud(2, 5), PlyOptions::default());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn quaternion_normalized_on_load() {
        let cloud = random_cloud(1, 9);
        let mut bytes = encode(&cloud, PlyOptions::default());
        let n = bytes.len();
        // single unlabeled record: rot_0..3 are the last four floats
        for k in 0..4 {
            let at = n - 16 + 4 * k;
            let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) * 3.0;
            bytes[at..at + 4].copy_from_slice(&v.to_le_bytes());
        }
        let back = decode(&bytes).unwrap();
        assert!((back.gaussians()[0].rotation.as_ref().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extreme_opacity_survives() {
        let g = Gaussian::isotropic(Vector3::zeros(), 0.1, 0.0, Vector3::new(0.0, 1.0, 0.5)).unwrap();
        let h = Gaussian::isotropic(Vector3::zeros(), 0.1, 1.0, Vector3::zeros()).unwrap();
        let cloud = GaussianCloud::from_gaussians(Frame::World, vec![g, h], Source::Unlabeled).unwrap();
        let back = decode(&encode(&cloud, PlyOptions::default())).unwrap();
        assert_eq!(back.gaussians()[0].opacity, 0.0);
        assert_eq!(back.gaussians()[1].opacity, 1.0);
    }
}
