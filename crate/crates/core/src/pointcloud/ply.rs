//! Minimal PLY reader and writer for integer point clouds.
//!
//! Reads `ascii 1.0` and `binary_little_endian 1.0` files whose first element
//! is `vertex` with scalar `x, y, z` properties and either `red, green, blue`
//! or `reflectance` / `intensity`. Elements after `vertex` are ignored.
//!
//! Written files are binary little-endian and carry `comment hapcac_*` lines
//! so that grid depth, reflectance depth and the YCoCg tag survive a round trip.

use std::str;

use super::{required_geom_bits, validate_geometry, AttributeSpace, PointCloud, MAX_GEOM_BITS};
use crate::error::{format_err, Error, Result};

const GEOM_BITS_TAG: &str = "hapcac_geom_bits";
const REFL_BITS_TAG: &str = "hapcac_reflectance_bits";
const COLOR_SPACE_TAG: &str = "hapcac_color_space";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return format_err(format!("unknown ply scalar type '{other}'")),
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

    fn is_float(self) -> bool {
        matches!(self, Self::F32 | Self::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct Header {
    encoding: Encoding,
    vertex_count: usize,
    properties: Vec<(String, ScalarType)>,
    geom_bits: Option<u8>,
    reflectance_bits: Option<u8>,
    ycocg: bool,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let end = find_subslice(bytes, b"end_header")
        .ok_or_else(|| Error::Format("missing end_header".into()))?;
    let mut body_offset = end + "end_header".len();
    match bytes.get(body_offset..) {
        Some([b'\r', b'\n', ..]) => body_offset += 2,
        Some([b'\n', ..]) => body_offset += 1,
        Some([]) => {}
        _ => return format_err("end_header not followed by a newline"),
    }
    let text = str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("non-utf8 ply header".into()))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return format_err("missing 'ply' magic");
    }

    let mut encoding = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut geom_bits = None;
    let mut reflectance_bits = None;
    let mut ycocg = false;
    // 0: before any element, 1: inside vertex, 2: inside a later element
    let mut state = 0;

    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", fmt, version] => {
                if *version != "1.0" {
                    return format_err(format!("unsupported ply version {version}"));
                }
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLittleEndian,
                    other => return format_err(format!("unsupported ply format '{other}'")),
                });
            }
            ["comment", tag, value] if *tag == GEOM_BITS_TAG => geom_bits = Some(parse_num(value)?),
            ["comment", tag, value] if *tag == REFL_BITS_TAG => {
                reflectance_bits = Some(parse_num(value)?)
            }
            ["comment", tag, "ycocg_r"] if *tag == COLOR_SPACE_TAG => ycocg = true,
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                if state == 0 {
                    if *name != "vertex" {
                        return format_err(format!("first element must be 'vertex', found '{name}'"));
                    }
                    vertex_count = Some(parse_num(count)?);
                    state = 1;
                } else {
                    state = 2;
                }
            }
            ["property", "list", ..] if state == 1 => {
                return format_err("list properties are not supported on vertices");
            }
            ["property", ty, name] if state == 1 => {
                properties.push((name.to_string(), ScalarType::parse(ty)?));
            }
            ["property", ..] if state == 2 => {}
            _ => return format_err(format!("malformed ply header line '{line}'")),
        }
    }

    Ok(Header {
        encoding: encoding.ok_or_else(|| Error::Format("missing format line".into()))?,
        vertex_count: vertex_count.ok_or_else(|| Error::Format("missing vertex element".into()))?,
        properties,
        geom_bits,
        reflectance_bits,
        ycocg,
        body_offset,
    })
}

fn parse_num<T: str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("bad number '{s}' in ply header")))
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Vertex records as rows of doubles, one column per property.
fn read_records(bytes: &[u8], header: &Header) -> Result<Vec<f64>> {
    let ncols = header.properties.len();
    let body = &bytes[header.body_offset..];
    let mut out = Vec::with_capacity(header.vertex_count * ncols);
    match header.encoding {
        Encoding::Ascii => {
            let text = str::from_utf8(body).map_err(|_| Error::Format("non-utf8 ascii body".into()))?;
            let mut tokens = text.split_ascii_whitespace();
            for _ in 0..header.vertex_count * ncols {
                let tok = tokens.next().ok_or_else(|| Error::Format("truncated ascii body".into()))?;
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::Format(format!("bad ascii value '{tok}'")))?;
                out.push(v);
            }
        }
        Encoding::BinaryLittleEndian => {
            let record: usize = header.properties.iter().map(|(_, t)| t.size()).sum();
            let need = record * header.vertex_count;
            if body.len() < need {
                return format_err(format!("binary body holds {} bytes, need {need}", body.len()));
            }
            for rec in body[..need].chunks_exact(record) {
                let mut at = 0;
                for (_, ty) in &header.properties {
                    out.push(ty.read_le(&rec[at..]));
                    at += ty.size();
                }
            }
        }
    }
    Ok(out)
}

struct Parsed {
    header: Header,
    records: Vec<f64>,
    positions: Vec<[u32; 3]>,
    geom_bits: u8,
}

fn column(header: &Header, name: &str) -> Option<(usize, ScalarType)> {
    header.properties.iter().position(|(n, _)| n == name).map(|i| (i, header.properties[i].1))
}

fn parse_geometry(bytes: &[u8]) -> Result<Parsed> {
    let header = parse_header(bytes)?;
    let records = read_records(bytes, &header)?;
    let ncols = header.properties.len();
    let mut xyz = [0usize; 3];
    for (slot, name) in xyz.iter_mut().zip(["x", "y", "z"]) {
        *slot = column(&header, name)
            .ok_or_else(|| Error::Format(format!("missing '{name}' property")))?
            .0;
    }
    let mut positions = Vec::with_capacity(header.vertex_count);
    for (i, row) in records.chunks_exact(ncols.max(1)).take(header.vertex_count).enumerate() {
        let mut p = [0u32; 3];
        for (axis, &col) in xyz.iter().enumerate() {
            let v = row[col];
            // Integral-valued floats are accepted; anything else is rejected, not rounded.
            if v.fract() != 0.0 || !(0.0..(1u64 << MAX_GEOM_BITS) as f64).contains(&v) {
                return format_err(format!("point {i} coordinate {v} is not a grid integer"));
            }
            p[axis] = v as u32;
        }
        positions.push(p);
    }
    let geom_bits = match header.geom_bits {
        Some(bits) => bits,
        None => required_geom_bits(&positions),
    };
    validate_geometry(&positions, geom_bits).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Parsed { header, records, positions, geom_bits })
}

/// Parses a PLY point cloud with color or reflectance attributes.
pub fn read_ply(bytes: &[u8]) -> Result<PointCloud> {
    let Parsed { header, records, positions, geom_bits } = parse_geometry(bytes)?;
    let ncols = header.properties.len();
    let rows = records.chunks_exact(ncols).take(positions.len());

    let rgb: Vec<_> = ["red", "green", "blue"].iter().filter_map(|n| column(&header, n)).collect();
    let (cols, space) = if rgb.len() == 3 {
        let space = if header.ycocg { AttributeSpace::ColorYCoCg } else { AttributeSpace::ColorRgb };
        (rgb, space)
    } else if let Some(col) = column(&header, "reflectance").or_else(|| column(&header, "intensity")) {
        let bits = match (header.reflectance_bits, col.1) {
            (Some(b), _) => b,
            (None, ScalarType::U8 | ScalarType::I8) => 8,
            (None, ScalarType::U16 | ScalarType::I16) => 16,
            (None, ty) => return format_err(format!("reflectance of type {ty:?} needs an explicit bit depth")),
        };
        (vec![col], AttributeSpace::Reflectance { bits })
    } else {
        return format_err("missing attribute properties (red/green/blue or reflectance/intensity)");
    };

    let mut attributes = Vec::with_capacity(positions.len() * cols.len());
    for (i, row) in rows.enumerate() {
        for &(col, ty) in &cols {
            let v = row[col];
            if ty.is_float() && v.fract() != 0.0 {
                return format_err(format!("point {i} attribute {v} is not an integer"));
            }
            attributes.push(v as i32);
        }
    }
    if space == AttributeSpace::ColorYCoCg {
        // Stored as rgb on disk; convert back to the tagged space.
        let rgb = PointCloud::new(positions, attributes, AttributeSpace::ColorRgb, geom_bits)
            .map_err(|e| Error::Format(e.to_string()))?;
        return Ok(rgb.to_coding_space());
    }
    PointCloud::new(positions, attributes, space, geom_bits).map_err(|e| Error::Format(e.to_string()))
}

/// Parses only positions; attribute properties, if any, are ignored.
pub fn read_ply_geometry(bytes: &[u8]) -> Result<(Vec<[u32; 3]>, u8)> {
    let parsed = parse_geometry(bytes)?;
    Ok((parsed.positions, parsed.geom_bits))
}

/// Serializes as binary little-endian PLY.
pub fn write_ply(pc: &PointCloud) -> Result<Vec<u8>> {
    let (disk, ycocg) = match pc.space() {
        AttributeSpace::ColorYCoCg => (pc.to_rgb()?, true),
        _ => (pc.clone(), false),
    };
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("comment {GEOM_BITS_TAG} {}\n", pc.geom_bits());
    if ycocg {
        header += &format!("comment {COLOR_SPACE_TAG} ycocg_r\n");
    }
    let refl_wide = match pc.space() {
        AttributeSpace::Reflectance { bits } => {
            header += &format!("comment {REFL_BITS_TAG} {bits}\n");
            Some(bits > 8)
        }
        _ => None,
    };
    header += &format!("element vertex {}\n", pc.len());
    for axis in ["x", "y", "z"] {
        header += &format!("property ushort {axis}\n");
    }
    match refl_wide {
        None => {
            for c in ["red", "green", "blue"] {
                header += &format!("property uchar {c}\n");
            }
        }
        Some(true) => header += "property ushort reflectance\n",
        Some(false) => header += "property uchar reflectance\n",
    }
    header += "end_header\n";

    let mut out = header.into_bytes();
    for i in 0..disk.len() {
        for c in disk.positions()[i] {
            out.extend((c as u16).to_le_bytes());
        }
        for &v in disk.attr(i) {
            match refl_wide {
                Some(true) => out.extend((v as u16).to_le_bytes()),
                _ => out.push(v as u8),
            }
        }
    }
    Ok(out)
}
