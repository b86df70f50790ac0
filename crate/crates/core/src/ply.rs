//! Binary little-endian PLY interchange in the common 3DGS export layout.

use std::io::{BufRead, Cursor};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file};
use crate::error::{Error, Result};
use crate::scene::{normalize_quat, GaussianPrimitive, GaussianScene, SH_COEFFS};

/// Storage domain of scale and opacity in a PLY file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// log-scale and logit-opacity, as written by 3DGS trainers.
    Raw,
    /// Positive scales and opacity in [0, 1].
    Activated,
}

#[derive(Clone, Copy, Debug)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(Error::Parse(format!("unsupported PLY scalar type {other}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Property {
    name: String,
    ty: ScalarType,
    offset: usize,
}

struct Header {
    vertex_count: usize,
    properties: Vec<Property>,
    stride: usize,
}

fn parse_header(r: &mut impl BufRead) -> Result<Header> {
    let mut line = String::new();
    let mut next_line = |r: &mut dyn BufRead| -> Result<String> {
        line.clear();
        let n = r
            .read_line(&mut line)
            .map_err(|e| Error::Parse(format!("PLY header: {e}")))?;
        if n == 0 {
            return Err(Error::Parse("PLY header: unexpected end of file".into()));
        }
        Ok(line.trim().to_string())
    };

    if next_line(r)? != "ply" {
        return Err(Error::Parse("not a PLY file (missing 'ply' magic)".into()));
    }
    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut stride = 0;
    let mut in_vertex = false;
    let mut seen_format = false;
    loop {
        let l = next_line(r)?;
        let mut toks = l.split_whitespace();
        match toks.next() {
            Some("format") => {
                let fmt = toks.next().unwrap_or("");
                if fmt != "binary_little_endian" {
                    return Err(Error::Parse(format!(
                        "unsupported PLY format {fmt}; expected binary_little_endian"
                    )));
                }
                seen_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = toks.next().unwrap_or("");
                let count: usize = toks
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("bad element line: {l}")))?;
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(Error::Parse("duplicate vertex element".into()));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else {
                    if vertex_count.is_none() && count > 0 {
                        return Err(Error::Parse(format!(
                            "element '{name}' precedes vertex data; unsupported"
                        )));
                    }
                    in_vertex = false;
                }
            }
            Some("property") => {
                if !in_vertex {
                    continue;
                }
                let ty = toks.next().unwrap_or("");
                if ty == "list" {
                    return Err(Error::Parse("list properties on vertices are unsupported".into()));
                }
                let ty = ScalarType::parse(ty)?;
                let name = toks
                    .next()
                    .ok_or_else(|| Error::Parse(format!("bad property line: {l}")))?;
                properties.push(Property {
                    name: name.to_string(),
                    ty,
                    offset: stride,
                });
                stride += ty.size();
            }
            Some("end_header") => break,
            Some(other) => return Err(Error::Parse(format!("unknown PLY header keyword {other}"))),
        }
    }
    if !seen_format {
        return Err(Error::Parse("PLY header lacks a format line".into()));
    }
    let vertex_count = vertex_count.ok_or_else(|| Error::Parse("PLY has no vertex element".into()))?;
    Ok(Header {
        vertex_count,
        properties,
        stride,
    })
}

fn required_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..SH_COEFFS - 3).map(|i| format!("f_rest_{i}")));
    names
}

pub fn read_scene_ply(bytes: &[u8], scene_id: &str, activation: Activation) -> Result<GaussianScene> {
    let mut cursor = Cursor::new(bytes);
    let header = parse_header(&mut cursor)?;
    let lookup: Vec<&Property> = required_names()
        .iter()
        .map(|name| {
            header
                .properties
                .iter()
                .find(|p| &p.name == name)
                .ok_or_else(|| Error::Parse(format!("missing attribute {name}")))
        })
        .collect::<Result<_>>()?;

    let body_start = cursor.position() as usize;
    let needed = header.vertex_count * header.stride;
    let body = &bytes[body_start..];
    if body.len() < needed {
        return Err(Error::Parse(format!(
            "PLY body truncated: need {needed} bytes for {} vertices, have {}",
            header.vertex_count,
            body.len()
        )));
    }

    let mut primitives = Vec::with_capacity(header.vertex_count);
    let mut vals = [0.0f64; 59];
    for i in 0..header.vertex_count {
        let rec = &body[i * header.stride..(i + 1) * header.stride];
        for (slot, prop) in vals.iter_mut().zip(&lookup) {
            *slot = prop.ty.decode(&rec[prop.offset..]);
        }
        if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value for attribute {} at primitive {i}",
                required_names()[k]
            )));
        }
        let mut scale = [vals[3], vals[4], vals[5]];
        let mut opacity = vals[10];
        if activation == Activation::Raw {
            scale = scale.map(f64::exp);
            opacity = 1.0 / (1.0 + (-opacity).exp());
        }
        let mut rotation = [vals[6], vals[7], vals[8], vals[9]].map(|v| v as f32);
        normalize_quat(&mut rotation)
            .map_err(|_| Error::Validation(format!("zero-norm rotation at primitive {i}")))?;
        let mut color_sh = [0.0f32; SH_COEFFS];
        for (c, v) in color_sh.iter_mut().zip(&vals[11..]) {
            *c = *v as f32;
        }
        let prim = GaussianPrimitive {
            center: [vals[0], vals[1], vals[2]].map(|v| v as f32),
            scale: scale.map(|v| v as f32),
            rotation,
            opacity: opacity as f32,
            color_sh,
        };
        prim.validate(i)?;
        primitives.push(prim);
    }
    Ok(GaussianScene::new(scene_id, primitives))
}

pub fn load_scene_ply(path: &Path, activation: Activation) -> Result<GaussianScene> {
    let bytes = read_file(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_scene_ply(&bytes, &id, activation)
}

pub fn write_scene_ply(scene: &GaussianScene, activation: Activation) -> Vec<u8> {
    let mut out = Vec::new();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!(
        "comment splatsem activation={}\n",
        match activation {
            Activation::Raw => "raw",
            Activation::Activated => "activated",
        }
    ));
    header.push_str(&format!("element vertex {}\n", scene.len()));
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..SH_COEFFS - 3).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());

    let mut push = |v: f32| out.extend_from_slice(&v.to_le_bytes());
    for p in &scene.primitives {
        p.center.iter().for_each(|&v| push(v));
        (0..3).for_each(|_| push(0.0));
        p.color_sh.iter().for_each(|&v| push(v));
        match activation {
            Activation::Activated => {
                push(p.opacity);
                p.scale.iter().for_each(|&v| push(v));
            }
            Activation::Raw => {
                let o = (p.opacity as f64).clamp(1e-7, 1.0 - 1e-7);
                push((o / (1.0 - o)).ln() as f32);
                p.scale.iter().for_each(|&v| push((v as f64).ln() as f32));
            }
        }
        p.rotation.iter().for_each(|&v| push(v));
    }
    out
}

pub fn save_scene_ply(scene: &GaussianScene, path: &Path, activation: Activation) -> Result<()> {
    write_file(path, &write_scene_ply(scene, activation))
}
