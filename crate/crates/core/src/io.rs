//! File formats: ASCII PLY clouds, JSON-lines cameras and results,
//! plain-text correspondences, binary PGM/PPM rasters and named-tensor blobs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraModel, Pose};
use crate::pose::RegistrationResult;
use crate::scenegen::{CameraRecord, PointCloud};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn lines(path: &Path) -> Result<Vec<String>> {
    open(path)?
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )
    .map_err(io)?;
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads an ASCII PLY with `x y z` as the first three vertex properties.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = lines(path)?;
    let mut it = text.iter().enumerate();
    match it.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    let mut header_end = None;
    for (i, l) in it.by_ref() {
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(parse_err(path, i + 1, "only ASCII PLY is supported")),
            ["comment", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| parse_err(path, i + 1, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => {
                header_end = Some(i);
                break;
            }
            _ => return Err(parse_err(path, i + 1, format!("unexpected header line '{l}'"))),
        }
    }
    let header_end = header_end.ok_or_else(|| parse_err(path, text.len(), "missing end_header"))?;
    let count = count.ok_or_else(|| parse_err(path, header_end + 1, "no vertex element"))?;
    if props.len() < 3 || props[..3] != ["x", "y", "z"] {
        return Err(parse_err(path, header_end + 1, "vertex properties must start with x y z"));
    }
    let mut pts = Vec::with_capacity(count);
    for k in 0..count {
        let ln = header_end + 2 + k;
        let l = text
            .get(ln - 1)
            .ok_or_else(|| parse_err(path, ln, format!("expected {count} vertices, found {k}")))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, ln, format!("bad coordinate: {e}")))?;
        if v.len() < 3 {
            return Err(parse_err(path, ln, "vertex needs 3 coordinates"));
        }
        pts.push(Vector3::new(v[0], v[1], v[2]));
    }
    PointCloud::new(pts).map_err(|e| parse_err(path, header_end + 2, e.to_string()))
}

/// One camera per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraLine {
    pub id: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&CameraRecord> for CameraLine {
    fn from(c: &CameraRecord) -> Self {
        Self {
            id: c.id,
            fx: c.camera.fx,
            fy: c.camera.fy,
            cx: c.camera.cx,
            cy: c.camera.cy,
            width: c.camera.width,
            height: c.camera.height,
            rotation: c.pose.rotation_row_major(),
            translation: [c.pose.translation.x, c.pose.translation.y, c.pose.translation.z],
        }
    }
}

impl CameraLine {
    fn into_record(self) -> Result<CameraRecord> {
        let camera = CameraModel::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?;
        let pose = Pose::from_row_major(&self.rotation, &self.translation);
        if !pose.is_valid(1e-6) {
            return Err(Error::invalid("rotation is not orthonormal"));
        }
        Ok(CameraRecord {
            id: self.id,
            camera,
            pose: pose.orthonormalized(),
        })
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        let s = serde_json::to_string(&item).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, l) in lines(path)?.iter().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(l).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        out.push((i + 1, v));
    }
    Ok(out)
}

pub fn write_cameras(path: &Path, cameras: &[CameraRecord]) -> Result<()> {
    write_jsonl(path, cameras.iter().map(CameraLine::from))
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraRecord>> {
    read_jsonl::<CameraLine>(path)?
        .into_iter()
        .map(|(ln, c)| c.into_record().map_err(|e| parse_err(path, ln, e.to_string())))
        .collect()
}

/// A `point_index u v confidence` line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondenceLine {
    pub point_index: usize,
    pub pixel: Vector2<f64>,
    pub confidence: f64,
}

pub fn write_correspondences(path: &Path, pairs: &[CorrespondenceLine]) -> Result<()> {
    let mut w = create(path)?;
    for c in pairs {
        writeln!(w, "{} {} {} {}", c.point_index, c.pixel.x, c.pixel.y, c.confidence).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_correspondences(path: &Path) -> Result<Vec<CorrespondenceLine>> {
    let mut out = Vec::new();
    for (i, l) in lines(path)?.iter().enumerate() {
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.is_empty() || t[0].starts_with('#') {
            continue;
        }
        if t.len() != 4 {
            return Err(parse_err(path, i + 1, format!("expected 4 fields, found {}", t.len())));
        }
        let bad = |what: &str| parse_err(path, i + 1, format!("bad {what}"));
        let point_index = t[0].parse().map_err(|_| bad("point index"))?;
        let u: f64 = t[1].parse().map_err(|_| bad("u"))?;
        let v: f64 = t[2].parse().map_err(|_| bad("v"))?;
        let confidence: f64 = t[3].parse().map_err(|_| bad("confidence"))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(parse_err(path, i + 1, "confidence outside [0, 1]"));
        }
        out.push(CorrespondenceLine {
            point_index,
            pixel: Vector2::new(u, v),
            confidence,
        });
    }
    Ok(out)
}

/// One registration result per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub image_id: u64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub rre: Option<f64>,
    pub rte: Option<f64>,
    pub inliers: usize,
    pub solved: bool,
    pub success: bool,
    pub focal_scale: f64,
}

impl ResultLine {
    /// Result with the recorded pose and errors; inlier ids are not kept.
    pub fn to_result(&self) -> RegistrationResult {
        RegistrationResult {
            image_id: self.image_id,
            pose: Pose::from_row_major(&self.rotation, &self.translation),
            inlier_ids: Vec::new(),
            solved: self.solved,
            rre: self.rre.unwrap_or(f64::NAN),
            rte: self.rte.unwrap_or(f64::NAN),
            success: self.success,
            focal_scale: self.focal_scale,
        }
    }
}

impl From<&RegistrationResult> for ResultLine {
    fn from(r: &RegistrationResult) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            image_id: r.image_id,
            rotation: r.pose.rotation_row_major(),
            translation: [r.pose.translation.x, r.pose.translation.y, r.pose.translation.z],
            rre: finite(r.rre),
            rte: finite(r.rte),
            inliers: r.inlier_ids.len(),
            solved: r.solved,
            success: r.success,
            focal_scale: r.focal_scale,
        }
    }
}

pub fn write_results(path: &Path, results: &[RegistrationResult]) -> Result<()> {
    write_jsonl(path, results.iter().map(ResultLine::from))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultLine>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::invalid(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let mut s = String::new();
    open(path)?.read_to_string(&mut s).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

/// Binary 8-bit grayscale image.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::ShapeMismatch(format!("{} bytes for a {width}x{height} PGM", pixels.len())));
    }
    let mut w = create(path)?;
    write!(w, "P5\n{width} {height}\n255\n")
        .and_then(|_| w.write_all(pixels))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Binary 8-bit RGB image, `pixels` row-major RGB triples.
pub fn write_ppm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height * 3 {
        return Err(Error::ShapeMismatch(format!("{} bytes for a {width}x{height} PPM", pixels.len())));
    }
    let mut w = create(path)?;
    write!(w, "P6\n{width} {height}\n255\n")
        .and_then(|_| w.write_all(pixels))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Maps values in `[lo, hi]` linearly to 0..=255.
pub fn to_gray(values: &Array2<f64>, lo: f64, hi: f64) -> Vec<u8> {
    values
        .iter()
        .map(|v| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

#[derive(Serialize, Deserialize)]
struct BlobHeader {
    tensors: Vec<BlobEntry>,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: [usize; 2],
}

/// Named-tensor blob: u64 little-endian header length, UTF-8 JSON header
/// `{"tensors": [{"name", "shape"}]}`, then each tensor row-major as
/// little-endian f32 in header order.
pub fn write_tensor_blob<W: Write>(mut w: W, tensors: &BTreeMap<String, Array2<f64>>) -> std::io::Result<()> {
    let header = BlobHeader {
        tensors: tensors
            .iter()
            .map(|(n, t)| BlobEntry {
                name: n.clone(),
                shape: [t.nrows(), t.ncols()],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in tensors.values() {
        for v in t.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensor_blob<R: Read>(mut r: R) -> Result<BTreeMap<String, Array2<f64>>> {
    let bad = |m: String| Error::invalid(format!("tensor blob: {m}"));
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|e| bad(e.to_string()))?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(bad(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(|e| bad(e.to_string()))?;
    let header: BlobHeader = serde_json::from_slice(&json).map_err(|e| bad(e.to_string()))?;
    let mut tensors = BTreeMap::new();
    for e in header.tensors {
        let n = e.shape[0] * e.shape[1];
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf).map_err(|err| bad(format!("{}: {err}", e.name)))?;
        let vals: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = Array2::from_shape_vec((e.shape[0], e.shape[1]), vals).map_err(|err| bad(err.to_string()))?;
        tensors.insert(e.name, t);
    }
    Ok(tensors)
}
