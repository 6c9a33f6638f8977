//! DRC-GRID v1.
//!
//! ```text
//! DRC-GRID v1 <kind> <nx> <ny> <nz> <geometry params> <aux> [key=value ...]\n
//! <body>
//! ```
//!
//! `kind` is `uniform` (params: min xyz, max xyz) or `frustum` (params:
//! alpha1 alpha2 f). `aux` is `none`, `color` or `sem:K`. The body holds
//! little-endian f64 emptiness values in x-fastest order, followed by the aux
//! payload cell-major. Binary grids use kinds `bin:uniform` / `bin:frustum`,
//! aux `none`, and one byte (0 or 1, 1 = occupied) per cell.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{
    Aabb, AuxGrid, AuxKind, BinaryGrid, Dims, FrustumParams, GeometryKind, GridGeometry,
    OccupancyGrid,
};

pub const MAGIC: &str = "DRC-GRID";
const VERSION: &str = "v1";
const MAX_HEADER: usize = 4096;

/// Header attribute marking a stored field as `1 - soft occupancy` of a
/// fused count grid.
pub const FUSED_XFORM: (&str, &str) = ("xform", "1-fused-occupancy");

#[derive(Clone, Debug, PartialEq)]
pub struct GridFile {
    pub occupancy: OccupancyGrid,
    pub aux: Option<AuxGrid>,
    pub attrs: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LoadedGrid {
    Soft(GridFile),
    Binary(BinaryGrid),
}

impl LoadedGrid {
    pub fn geometry(&self) -> &GridGeometry {
        match self {
            LoadedGrid::Soft(g) => g.occupancy.geometry(),
            LoadedGrid::Binary(b) => b.geometry(),
        }
    }

    /// Binary grids become hard 0/1 emptiness fields.
    pub fn into_occupancy(self) -> OccupancyGrid {
        match self {
            LoadedGrid::Soft(g) => g.occupancy,
            LoadedGrid::Binary(b) => b.to_occupancy(),
        }
    }

    /// Soft grids are occupied where `x < 0.5`.
    pub fn into_binary(self) -> BinaryGrid {
        match self {
            LoadedGrid::Soft(g) => {
                let geom = *g.occupancy.geometry();
                let occ = g.occupancy.values().iter().map(|&x| x < 0.5).collect();
                BinaryGrid::new(geom, occ).expect("lengths match")
            }
            LoadedGrid::Binary(b) => b,
        }
    }
}

fn header(binary: bool, geometry: &GridGeometry, aux: Option<AuxKind>, attrs: &[(String, String)]) -> Result<String> {
    let d = geometry.dims();
    let (kind, params) = match geometry.kind() {
        GeometryKind::Uniform(a) => ("uniform", [a.min, a.max].concat()),
        GeometryKind::Frustum(p) => ("frustum", vec![p.alpha1, p.alpha2, p.f]),
    };
    let mut h = format!(
        "{MAGIC} {VERSION} {}{kind} {} {} {}",
        if binary { "bin:" } else { "" },
        d.nx,
        d.ny,
        d.nz
    );
    for v in params {
        // `{}` on f64 prints the shortest string that parses back exactly.
        h.push_str(&format!(" {v}"));
    }
    h.push_str(match aux {
        None => " none".into(),
        Some(AuxKind::Color) => " color".into(),
        Some(AuxKind::Semantics { classes }) => format!(" sem:{classes}"),
    }
    .as_str());
    for (k, v) in attrs {
        let bad = |s: &str| s.is_empty() || s.contains(|c: char| c.is_whitespace() || c == '=');
        if bad(k) || v.is_empty() || v.contains(char::is_whitespace) {
            return Err(Error::invalid("attribute", format!("`{k}={v}` is not a single token")));
        }
        h.push_str(&format!(" {k}={v}"));
    }
    h.push('\n');
    Ok(h)
}

pub fn write_grid(
    path: &Path,
    occupancy: &OccupancyGrid,
    aux: Option<&AuxGrid>,
    attrs: &[(String, String)],
) -> Result<()> {
    if let Some(a) = aux {
        if a.geometry() != occupancy.geometry() {
            return Err(Error::GeometryMismatch);
        }
    }
    let mut out = header(false, occupancy.geometry(), aux.map(|a| a.kind()), attrs)?.into_bytes();
    let aux_vals = aux.map(|a| a.values()).unwrap_or(&[]);
    out.reserve(8 * (occupancy.values().len() + aux_vals.len()));
    for v in occupancy.values().iter().chain(aux_vals) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &out)
}

pub fn write_binary_grid(path: &Path, grid: &BinaryGrid) -> Result<()> {
    let mut out = header(true, grid.geometry(), None, &[])?.into_bytes();
    out.extend(grid.occupied().iter().map(|&o| o as u8));
    write_atomic(path, &out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

struct Header {
    binary: bool,
    geometry: GridGeometry,
    aux: Option<AuxKind>,
    attrs: Vec<(String, String)>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_header(line: &str) -> Result<Header> {
    let mut tok = line.split_ascii_whitespace();
    let mut next = |what: &str| tok.next().ok_or_else(|| fmt_err(format!("header ends before {what}")));
    if next("magic")? != MAGIC {
        return Err(fmt_err("not a DRC-GRID file"));
    }
    let version = next("version")?;
    if version != VERSION {
        return Err(fmt_err(format!("unsupported version `{version}`")));
    }
    let kind = next("kind")?;
    let (binary, kind) = match kind.strip_prefix("bin:") {
        Some(k) => (true, k),
        None => (false, kind),
    };
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let s = next("dims")?;
        *d = s.parse().map_err(|_| fmt_err(format!("bad dimension `{s}`")))?;
    }
    let dims = Dims::new(dims[0], dims[1], dims[2]);
    let n_params = match kind {
        "uniform" => 6,
        "frustum" => 3,
        other => return Err(fmt_err(format!("unknown grid kind `{other}`"))),
    };
    let mut p = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let s = next("geometry parameters")?;
        p.push(s.parse::<f64>().map_err(|_| fmt_err(format!("bad number `{s}`")))?);
    }
    let geometry = match kind {
        "uniform" => GridGeometry::uniform(dims, Aabb::new([p[0], p[1], p[2]], [p[3], p[4], p[5]])),
        _ => GridGeometry::frustum(
            dims,
            FrustumParams {
                alpha1: p[0],
                alpha2: p[1],
                f: p[2],
            },
        ),
    }
    .map_err(|e| fmt_err(format!("invalid geometry: {e}")))?;
    let aux = match next("aux kind")? {
        "none" => None,
        "color" => Some(AuxKind::Color),
        s => match s.strip_prefix("sem:").and_then(|k| k.parse::<usize>().ok()) {
            Some(classes) if classes > 0 => Some(AuxKind::Semantics { classes }),
            _ => return Err(fmt_err(format!("unknown aux kind `{s}`"))),
        },
    };
    if binary && aux.is_some() {
        return Err(fmt_err("binary grids carry no aux payload"));
    }
    let attrs = tok
        .map(|t| {
            t.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| fmt_err(format!("bad header attribute `{t}`")))
        })
        .collect::<Result<_>>()?;
    Ok(Header {
        binary,
        geometry,
        aux,
        attrs,
    })
}

fn read_header_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = Vec::new();
    r.by_ref().take(MAX_HEADER as u64).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(fmt_err("missing or oversized header line"));
    }
    String::from_utf8(line).map_err(|_| fmt_err("header is not UTF-8"))
}

fn body_f64(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

pub fn read_grid_any(path: &Path) -> Result<LoadedGrid> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let h = parse_header(&read_header_line(&mut r)?)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let n = h.geometry.num_cells();
    if h.binary {
        if body.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: body.len(),
            });
        }
        if body.iter().any(|&b| b > 1) {
            return Err(fmt_err("binary grid bytes must be 0 or 1"));
        }
        let occ = body.iter().map(|&b| b == 1).collect();
        return Ok(LoadedGrid::Binary(BinaryGrid::new(h.geometry, occ)?));
    }
    let channels = h.aux.map_or(0, |a| a.channels());
    let expected = 8 * n * (1 + channels);
    if body.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: body.len(),
        });
    }
    let mut values = body_f64(&body);
    let aux_vals = values.split_off(n);
    let occupancy = OccupancyGrid::from_values(h.geometry, values)?;
    let aux = match h.aux {
        Some(kind) => Some(AuxGrid::new(h.geometry, kind, aux_vals)?),
        None => None,
    };
    Ok(LoadedGrid::Soft(GridFile {
        occupancy,
        aux,
        attrs: h.attrs,
    }))
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    match read_grid_any(path)? {
        LoadedGrid::Soft(g) => Ok(g),
        LoadedGrid::Binary(_) => Err(fmt_err(format!(
            "{} holds a binary grid, expected an occupancy field",
            path.display()
        ))),
    }
}

pub fn read_binary_grid(path: &Path) -> Result<BinaryGrid> {
    match read_grid_any(path)? {
        LoadedGrid::Binary(b) => Ok(b),
        LoadedGrid::Soft(_) => Err(fmt_err(format!(
            "{} holds an occupancy field, expected a binary grid",
            path.display()
        ))),
    }
}
