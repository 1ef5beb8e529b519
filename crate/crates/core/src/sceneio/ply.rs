//! Point clouds in ASCII or binary little-endian PLY.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::images::quantize;
use crate::error::{Error, Result};
use crate::splat::linalg::Vec3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    /// Per-point RGB in `[0, 1]`, when the file has color properties.
    pub colors: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlyFormat {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    /// Full-scale value for color channels.
    fn color_scale(self) -> f64 {
        match self {
            Scalar::U8 | Scalar::I8 => 255.0,
            Scalar::U16 | Scalar::I16 => 65535.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    /// Lines consumed, including `end_header`.
    lines: usize,
    /// Byte offset of the body.
    body: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let err = |line: usize, message: String| Error::Ply {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut pos = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let Some(end) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(err(line_no + 1, "header ends before end_header".into()));
        };
        let raw = &bytes[pos..pos + end];
        pos += end + 1;
        line_no += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| err(line_no, "header is not valid text".into()))?
            .trim_end_matches('\r')
            .trim();
        let tok: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line != "ply" {
                return Err(err(1, format!("expected \"ply\", found {line:?}")));
            }
            continue;
        }
        match tok.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match tok.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => return Err(err(line_no, format!("unsupported format {other:?}"))),
                    None => return Err(err(line_no, "format line without a format".into())),
                });
                if tok.get(2) != Some(&"1.0") {
                    return Err(err(line_no, "only PLY version 1.0 is supported".into()));
                }
            }
            Some("element") => {
                if tok.len() != 3 {
                    return Err(err(line_no, "element needs a name and a count".into()));
                }
                let count = tok[2]
                    .parse()
                    .map_err(|_| err(line_no, format!("bad element count {:?}", tok[2])))?;
                elements.push(Element {
                    name: tok[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let Some(el) = elements.last_mut() else {
                    return Err(err(line_no, "property before any element".into()));
                };
                let ty = |s: &str| Scalar::parse(s).ok_or_else(|| err(line_no, format!("unknown type {s:?}")));
                let prop = match tok.get(1).copied() {
                    Some("list") if tok.len() == 5 => Property::List {
                        count: ty(tok[2])?,
                        item: ty(tok[3])?,
                    },
                    Some(t) if tok.len() == 3 => Property::Scalar {
                        name: tok[2].to_string(),
                        ty: ty(t)?,
                    },
                    _ => return Err(err(line_no, format!("malformed property line {line:?}"))),
                };
                el.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(err(line_no, format!("unexpected header keyword {other:?}"))),
        }
    }
    let format = format.ok_or_else(|| err(line_no, "missing format line".into()))?;
    Ok(Header {
        format,
        elements,
        lines: line_no,
        body: pos,
    })
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
    color_scale: [f64; 3],
}

fn vertex_layout(path: &Path, el: &Element, header_lines: usize) -> Result<VertexLayout> {
    let find = |name: &str| {
        el.properties
            .iter()
            .position(|p| matches!(p, Property::Scalar { name: n, .. } if n == name))
    };
    let missing = |name: &str| Error::Ply {
        path: path.to_path_buf(),
        line: header_lines,
        message: format!("vertex element has no {name:?} property"),
    };
    let xyz = [
        find("x").ok_or_else(|| missing("x"))?,
        find("y").ok_or_else(|| missing("y"))?,
        find("z").ok_or_else(|| missing("z"))?,
    ];
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let mut color_scale = [1.0; 3];
    if let Some(rgb) = rgb {
        for (s, &i) in color_scale.iter_mut().zip(&rgb) {
            if let Property::Scalar { ty, .. } = el.properties[i] {
                *s = ty.color_scale();
            }
        }
    }
    Ok(VertexLayout { xyz, rgb, color_scale })
}

fn collect(values: &[f64], layout: &VertexLayout, cloud: &mut PointCloud) {
    let p = layout.xyz.map(|i| values[i] as f32);
    cloud.positions.push(p);
    if let (Some(rgb), Some(colors)) = (layout.rgb, cloud.colors.as_mut()) {
        let mut c = [0.0f32; 3];
        for k in 0..3 {
            c[k] = (values[rgb[k]] / layout.color_scale[k]) as f32;
        }
        colors.push(c);
    }
}

pub fn parse_ply(path: &Path, bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(path, bytes)?;
    let Some(vi) = header.elements.iter().position(|e| e.name == "vertex") else {
        return Err(Error::Ply {
            path: path.to_path_buf(),
            line: header.lines,
            message: "no vertex element".into(),
        });
    };
    let layout = vertex_layout(path, &header.elements[vi], header.lines)?;
    let mut cloud = PointCloud {
        positions: Vec::with_capacity(header.elements[vi].count),
        colors: layout.rgb.map(|_| Vec::with_capacity(header.elements[vi].count)),
    };
    match header.format {
        PlyFormat::Ascii => read_ascii(path, bytes, &header, vi, &layout, &mut cloud)?,
        PlyFormat::BinaryLittleEndian => read_binary(path, bytes, &header, vi, &layout, &mut cloud)?,
    }
    Ok(cloud)
}

fn read_ascii(
    path: &Path,
    bytes: &[u8],
    header: &Header,
    vertex: usize,
    layout: &VertexLayout,
    cloud: &mut PointCloud,
) -> Result<()> {
    let body = std::str::from_utf8(&bytes[header.body..]).map_err(|_| Error::Ply {
        path: path.to_path_buf(),
        line: header.lines + 1,
        message: "ASCII body is not valid text".into(),
    })?;
    let mut lines = body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    for (ei, el) in header.elements.iter().enumerate() {
        for _ in 0..el.count {
            let Some((offset, line)) = lines.next() else {
                return Err(Error::Ply {
                    path: path.to_path_buf(),
                    line: header.lines + body.lines().count() + 1,
                    message: format!("file ends inside element {:?}", el.name),
                });
            };
            let line_no = header.lines + offset + 1;
            let err = |message: String| Error::Ply {
                path: path.to_path_buf(),
                line: line_no,
                message,
            };
            let mut tokens = line.split_whitespace();
            let mut next = |what: &str, ty: Scalar| -> Result<f64> {
                let t = tokens.next().ok_or_else(|| err(format!("missing value for {what}")))?;
                let bad = || err(format!("bad number {t:?} for {what}"));
                // f32 fields parse directly so written values round-trip exactly
                if ty == Scalar::F32 {
                    t.parse::<f32>().map(f64::from).map_err(|_| bad())
                } else {
                    t.parse::<f64>().map_err(|_| bad())
                }
            };
            let mut values = Vec::with_capacity(el.properties.len());
            for prop in &el.properties {
                match prop {
                    Property::Scalar { name, ty } => values.push(next(name, *ty)?),
                    Property::List { count, item } => {
                        let n = next("list count", *count)?;
                        for _ in 0..n as usize {
                            next("list item", *item)?;
                        }
                        values.push(0.0);
                    }
                }
            }
            if tokens.next().is_some() {
                return Err(err(format!("too many values for element {:?}", el.name)));
            }
            if ei == vertex {
                collect(&values, layout, cloud);
            }
        }
        if ei == vertex {
            break;
        }
    }
    Ok(())
}

fn read_binary(
    path: &Path,
    bytes: &[u8],
    header: &Header,
    vertex: usize,
    layout: &VertexLayout,
    cloud: &mut PointCloud,
) -> Result<()> {
    let mut pos = header.body;
    let short = |what: &str| Error::Ply {
        path: path.to_path_buf(),
        line: header.lines,
        message: format!("binary body ends inside {what}"),
    };
    for (ei, el) in header.elements.iter().enumerate() {
        let mut values = vec![0.0f64; el.properties.len()];
        for _ in 0..el.count {
            for (k, prop) in el.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => {
                        let s = ty.size();
                        let b = bytes.get(pos..pos + s).ok_or_else(|| short(&el.name))?;
                        values[k] = ty.read_le(b);
                        pos += s;
                    }
                    Property::List { count, item } => {
                        let b = bytes.get(pos..pos + count.size()).ok_or_else(|| short(&el.name))?;
                        let n = count.read_le(b) as usize;
                        pos += count.size() + n * item.size();
                        if pos > bytes.len() {
                            return Err(short(&el.name));
                        }
                    }
                }
            }
            if ei == vertex {
                collect(&values, layout, cloud);
            }
        }
        if ei == vertex {
            break;
        }
    }
    Ok(())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(path, &bytes)
}

/// Colors are written as 8-bit channels.
pub fn encode_ply(cloud: &PointCloud, format: PlyFormat) -> Result<Vec<u8>> {
    if let Some(c) = &cloud.colors {
        if c.len() != cloud.positions.len() {
            return Err(Error::invalid(format!(
                "{} colors for {} points",
                c.len(),
                cloud.positions.len()
            )));
        }
    }
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if cloud.colors.is_some() {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.push_str("end_header\n");
    let mut bytes = out.into_bytes();
    for (i, p) in cloud.positions.iter().enumerate() {
        let rgb = cloud.colors.as_ref().map(|c| c[i].map(quantize));
        match format {
            PlyFormat::Ascii => {
                let mut line = format!("{} {} {}", p[0], p[1], p[2]);
                if let Some(c) = rgb {
                    line.push_str(&format!(" {} {} {}", c[0], c[1], c[2]));
                }
                line.push('\n');
                bytes.extend_from_slice(line.as_bytes());
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(c) = rgb {
                    bytes.extend_from_slice(&c);
                }
            }
        }
    }
    Ok(bytes)
}

pub fn save_ply(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let path: PathBuf = path.as_ref().to_path_buf();
    std::fs::write(&path, encode_ply(cloud, format)?).map_err(|e| Error::io(path, e))
}
