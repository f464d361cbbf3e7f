//! Binary little-endian PLY import/export in the layout most splat viewers
//! expect: one `vertex` element with `f32` properties
//! `x y z f_dc_0 f_dc_1 f_dc_2 opacity scale_0 scale_1 scale_2 rot_0 rot_1 rot_2 rot_3`.
//!
//! Colors are stored as zeroth-order spherical-harmonic coefficients
//! (`(c - 0.5) / C0`), opacity as its logit, scales in log space, and the
//! orientation as a `(w, x, y, z)` quaternion. Provenance is not part of the
//! format; imported scenes get provenance 0 for every splat.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use super::{logit, sigmoid, Gaussian, GlobalScene};

/// Zeroth spherical-harmonic basis constant, `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("ply i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed ply header: {0}")]
    MalformedHeader(String),
    #[error("unknown ply property `{0}`")]
    UnknownProperty(String),
    #[error("truncated ply payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
}

/// Serializes a scene; the inverse of [`import_ply`] up to `f32` rounding.
pub fn export_ply<W: Write>(scene: &GlobalScene, out: &mut W) -> Result<(), PlyError> {
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.len()));
    for p in PROPERTIES {
        header.push_str(&format!("property float {p}\n"));
    }
    header.push_str("end_header\n");
    out.write_all(header.as_bytes())?;

    let mut buf = Vec::with_capacity(scene.len() * PROPERTIES.len() * 4);
    for g in &scene.gaussians {
        let q = g.rotation.quaternion();
        let fields: [f64; 14] = [
            g.mean.x,
            g.mean.y,
            g.mean.z,
            (g.color.x - 0.5) / SH_C0,
            (g.color.y - 0.5) / SH_C0,
            (g.color.z - 0.5) / SH_C0,
            logit(g.opacity),
            g.log_scale.x,
            g.log_scale.y,
            g.log_scale.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ];
        for f in fields {
            buf.extend_from_slice(&(f as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Parses a scene written by [`export_ply`] (or any viewer-compatible file in
/// the same layout). The header is checked strictly: unexpected property
/// names are reported as [`PlyError::UnknownProperty`], anything else out of
/// place as [`PlyError::MalformedHeader`].
pub fn import_ply<R: Read>(input: &mut R) -> Result<GlobalScene, PlyError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;

    let (count, payload_start) = parse_header(&bytes)?;
    let expected = count * PROPERTIES.len() * 4;
    let payload = &bytes[payload_start..];
    if payload.len() < expected {
        return Err(PlyError::Truncated { expected, got: payload.len() });
    }

    let mut gaussians = Vec::with_capacity(count);
    for i in 0..count {
        let mut f = [0.0f64; 14];
        for (j, slot) in f.iter_mut().enumerate() {
            let at = (i * 14 + j) * 4;
            *slot = f32::from_le_bytes(payload[at..at + 4].try_into().unwrap()) as f64;
        }
        let color = Vector3::new(f[3], f[4], f[5]).map(|v| (v * SH_C0 + 0.5).clamp(0.0, 1.0));
        gaussians.push(Gaussian {
            mean: Vector3::new(f[0], f[1], f[2]),
            color,
            opacity: sigmoid(f[6]),
            log_scale: Vector3::new(f[7], f[8], f[9]),
            rotation: UnitQuaternion::from_quaternion(Quaternion::new(f[10], f[11], f[12], f[13])),
        });
    }
    let provenance = vec![0; gaussians.len()];
    Ok(GlobalScene { gaussians, provenance })
}

pub fn save_ply(scene: &GlobalScene, path: &Path) -> Result<(), PlyError> {
    let mut w = BufWriter::new(File::create(path)?);
    export_ply(scene, &mut w)
}

pub fn load_ply(path: &Path) -> Result<GlobalScene, PlyError> {
    import_ply(&mut BufReader::new(File::open(path)?))
}

/// Returns (vertex count, byte offset of the payload).
fn parse_header(bytes: &[u8]) -> Result<(usize, usize), PlyError> {
    let mut offset = 0;
    let mut lines = Vec::new();
    // The header is ASCII, newline-terminated, and ends with `end_header`.
    loop {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| PlyError::MalformedHeader("no end_header before EOF".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| PlyError::MalformedHeader("non-utf8 header line".into()))?
            .trim_end_matches('\r')
            .to_string();
        offset += nl + 1;
        let done = line == "end_header";
        lines.push(line);
        if done {
            break;
        }
        if offset >= bytes.len() {
            return Err(PlyError::MalformedHeader("no end_header before EOF".into()));
        }
    }

    let mut iter = lines.iter().filter(|l| !l.starts_with("comment"));
    if iter.next().map(String::as_str) != Some("ply") {
        return Err(PlyError::MalformedHeader("missing `ply` magic".into()));
    }
    if iter.next().map(String::as_str) != Some("format binary_little_endian 1.0") {
        return Err(PlyError::MalformedHeader("expected `format binary_little_endian 1.0`".into()));
    }
    let element = iter
        .next()
        .ok_or_else(|| PlyError::MalformedHeader("missing element line".into()))?;
    let count: usize = element
        .strip_prefix("element vertex ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| PlyError::MalformedHeader(format!("expected `element vertex N`, got `{element}`")))?;

    let mut seen = 0usize;
    for line in iter.by_ref() {
        if line.as_str() == "end_header" {
            break;
        }
        let name = line
            .strip_prefix("property float ")
            .ok_or_else(|| PlyError::MalformedHeader(format!("expected `property float ...`, got `{line}`")))?;
        if seen >= PROPERTIES.len() || name != PROPERTIES[seen] {
            if PROPERTIES.contains(&name) {
                return Err(PlyError::MalformedHeader(format!(
                    "property `{name}` out of order (expected `{}`)",
                    PROPERTIES.get(seen).copied().unwrap_or("end_header")
                )));
            }
            return Err(PlyError::UnknownProperty(name.to_string()));
        }
        seen += 1;
    }
    if seen != PROPERTIES.len() {
        return Err(PlyError::MalformedHeader(format!(
            "expected {} properties, header lists {seen}",
            PROPERTIES.len()
        )));
    }
    Ok((count, offset))
}
