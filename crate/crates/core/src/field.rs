//! Query fields sampled on planar slices, with CSV, PPM and isocontour output.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::distance::{surface_distance_with, SurfaceQueryOptions};
use crate::error::{GsmError, Result};
use crate::geometry::Ellipsoid;
use crate::oracle::{CloudOracle, RobotProbe};
use crate::probability::{
    closest_component_probability, surface_collision_probability, BlendValidity, UncertainCenter,
};
use crate::surface_model::SurfaceModel;

const ORTHONORMAL_TOL: f64 = 1e-9;
const INVALID_RGB: [u8; 3] = [128, 128, 128];

/// Rectangular grid on the plane through `origin` spanned by `u` and `v`.
/// `origin` is the grid corner; samples sit at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSpec {
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    extent: (f64, f64),
    res: (usize, usize),
}

impl SliceSpec {
    pub fn new(
        origin: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        extent: (f64, f64),
        res: (usize, usize),
    ) -> Result<Self> {
        if (u.norm() - 1.0).abs() > ORTHONORMAL_TOL
            || (v.norm() - 1.0).abs() > ORTHONORMAL_TOL
            || u.dot(&v).abs() > ORTHONORMAL_TOL
        {
            return Err(GsmError::InvalidParameter(
                "slice axes must be orthonormal".into(),
            ));
        }
        if !(extent.0 > 0.0 && extent.1 > 0.0 && extent.0.is_finite() && extent.1.is_finite()) {
            return Err(GsmError::InvalidParameter(
                "slice extents must be positive".into(),
            ));
        }
        if res.0 == 0 || res.1 == 0 {
            return Err(GsmError::InvalidParameter(
                "slice resolution must be at least 1".into(),
            ));
        }
        if !origin.iter().all(|x| x.is_finite()) {
            return Err(GsmError::InvalidParameter("slice origin must be finite".into()));
        }
        Ok(Self { origin, u, v, extent, res })
    }

    pub fn res(&self) -> (usize, usize) {
        self.res
    }

    pub fn len(&self) -> usize {
        self.res.0 * self.res.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_res(&self, res: (usize, usize)) -> Result<Self> {
        Self::new(self.origin, self.u, self.v, self.extent, res)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vector3<f64> {
        let su = (i as f64 + 0.5) * self.extent.0 / self.res.0 as f64;
        let sv = (j as f64 + 0.5) * self.extent.1 / self.res.1 as f64;
        self.origin + self.u * su + self.v * sv
    }

    /// Cell centers in row-major order (`index = j * res_u + i`).
    pub fn points(&self) -> Vec<Vector3<f64>> {
        (0..self.res.1)
            .flat_map(|j| (0..self.res.0).map(move |i| (i, j)))
            .map(|(i, j)| self.cell_center(i, j))
            .collect()
    }
}

fn parse_group<const N: usize>(group: &str, what: &str) -> Result<[f64; N]> {
    let vals: Vec<f64> = group
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| GsmError::InvalidParameter(format!("slice {what}: {e}")))?;
    vals.try_into().map_err(|v: Vec<f64>| {
        GsmError::InvalidParameter(format!("slice {what}: expected {N} numbers, got {}", v.len()))
    })
}

/// `"ox oy oz,ux uy uz,vx vy vz,eu ev,ru rv"`.
impl FromStr for SliceSpec {
    type Err = GsmError;

    fn from_str(s: &str) -> Result<Self> {
        let groups: Vec<&str> = s.split(',').collect();
        if groups.len() != 5 {
            return Err(GsmError::InvalidParameter(format!(
                "slice needs 5 comma-separated groups (origin,u,v,extents,res), got {}",
                groups.len()
            )));
        }
        let o = parse_group::<3>(groups[0], "origin")?;
        let u = parse_group::<3>(groups[1], "u")?;
        let v = parse_group::<3>(groups[2], "v")?;
        let e = parse_group::<2>(groups[3], "extents")?;
        let r = parse_group::<2>(groups[4], "res")?;
        if r.iter().any(|x| x.fract() != 0.0 || *x < 1.0) {
            return Err(GsmError::InvalidParameter(
                "slice resolution must be positive integers".into(),
            ));
        }
        Self::new(
            Vector3::from(o),
            Vector3::from(u),
            Vector3::from(v),
            (e[0], e[1]),
            (r[0] as usize, r[1] as usize),
        )
    }
}

impl fmt::Display for SliceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (o, u, v) = (self.origin, self.u, self.v);
        write!(
            f,
            "{} {} {},{} {} {},{} {} {},{} {},{} {}",
            o.x, o.y, o.z, u.x, u.y, u.z, v.x, v.y, v.z, self.extent.0, self.extent.1, self.res.0, self.res.1
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldCell {
    pub point: Vector3<f64>,
    /// `NaN` when the cell is invalid.
    pub distance: f64,
    pub gradient: Option<Vector3<f64>>,
    pub probability: Option<f64>,
    pub degraded: bool,
    /// The query for this cell succeeded.
    pub valid: bool,
}

impl FieldCell {
    fn invalid(point: Vector3<f64>) -> Self {
        Self {
            point,
            distance: f64::NAN,
            gradient: None,
            probability: None,
            degraded: false,
            valid: false,
        }
    }
}

/// Row-major grid of cells, `index = j * res.0 + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub res: (usize, usize),
    pub cells: Vec<FieldCell>,
}

impl FieldGrid {
    pub fn cell(&self, i: usize, j: usize) -> &FieldCell {
        &self.cells[j * self.res.0 + i]
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.valid).count()
    }

    fn evaluate(slice: &SliceSpec, f: impl Fn(Vector3<f64>) -> FieldCell + Sync + Send) -> Self {
        let cells = slice.points().into_par_iter().map(f).collect();
        Self { res: slice.res(), cells }
    }
}

fn check_model(model: &SurfaceModel<3>) -> Result<()> {
    if model.is_empty() {
        Err(GsmError::EmptyModel)
    } else {
        Ok(())
    }
}

/// Surface distance and gradient with the robot centered at every cell.
pub fn distance_field(
    model: &SurfaceModel<3>,
    robot: &Ellipsoid<3>,
    slice: &SliceSpec,
    options: &SurfaceQueryOptions,
) -> Result<FieldGrid> {
    check_model(model)?;
    Ok(FieldGrid::evaluate(slice, |p| {
        match surface_distance_with(&robot.translated_to(p), model, options) {
            Ok(q) => FieldCell {
                point: p,
                distance: q.distance,
                gradient: q.gradient,
                probability: None,
                degraded: false,
                valid: true,
            },
            Err(_) => FieldCell::invalid(p),
        }
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbabilityMode {
    /// Weighted blend over the `k` nearest components.
    Blended(usize),
    /// Bound against the closest component only.
    Closest,
}

/// Collision-probability bound with the robot center distributed around each
/// cell with isotropic `variance`.
pub fn probability_field(
    model: &SurfaceModel<3>,
    robot: &Ellipsoid<3>,
    slice: &SliceSpec,
    variance: f64,
    mode: ProbabilityMode,
) -> Result<FieldGrid> {
    check_model(model)?;
    if let ProbabilityMode::Blended(0) = mode {
        return Err(GsmError::InvalidK(0));
    }
    UncertainCenter::isotropic(Vector3::zeros(), variance)?;
    Ok(FieldGrid::evaluate(slice, |p| {
        let center = UncertainCenter::isotropic(p, variance).expect("variance checked");
        let res = match mode {
            ProbabilityMode::Blended(k) => surface_collision_probability(robot, &center, model, k)
                .map(|b| (b.value, b.validity == BlendValidity::Degraded)),
            ProbabilityMode::Closest => closest_component_probability(robot, &center, model)
                .map(|(_, r)| (r.bound, r.is_degraded())),
        };
        match res {
            Ok((value, degraded)) => FieldCell {
                point: p,
                distance: f64::NAN,
                gradient: None,
                probability: Some(value),
                degraded,
                valid: true,
            },
            Err(_) => FieldCell::invalid(p),
        }
    }))
}

/// Point-cloud ground truth: sampled-robot distance and cloud normal.
/// Penetrating cells get distance 0 and no gradient.
pub fn oracle_field(oracle: &CloudOracle<3>, probe: &RobotProbe<3>, slice: &SliceSpec) -> FieldGrid {
    FieldGrid::evaluate(slice, |p| match oracle.query(probe, &p) {
        Ok(q) => FieldCell {
            point: p,
            distance: q.distance,
            gradient: (!q.penetrating).then_some(q.normal),
            probability: None,
            degraded: false,
            valid: true,
        },
        Err(_) => FieldCell::invalid(p),
    })
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

pub fn write_distance_csv<W: Write>(mut out: W, grid: &FieldGrid) -> Result<()> {
    writeln!(out, "i,j,x,y,z,distance,valid")?;
    for (idx, c) in grid.cells.iter().enumerate() {
        let (i, j) = (idx % grid.res.0, idx / grid.res.0);
        let p = c.point;
        writeln!(out, "{i},{j},{},{},{},{},{}", p.x, p.y, p.z, c.distance, flag(c.valid))?;
    }
    Ok(())
}

pub fn write_gradient_csv<W: Write>(mut out: W, grid: &FieldGrid) -> Result<()> {
    writeln!(out, "i,j,x,y,z,gx,gy,gz,valid")?;
    for (idx, c) in grid.cells.iter().enumerate() {
        let (i, j) = (idx % grid.res.0, idx / grid.res.0);
        let p = c.point;
        let g = c.gradient.unwrap_or(Vector3::repeat(f64::NAN));
        writeln!(
            out,
            "{i},{j},{},{},{},{},{},{},{}",
            p.x,
            p.y,
            p.z,
            g.x,
            g.y,
            g.z,
            flag(c.gradient.is_some())
        )?;
    }
    Ok(())
}

pub fn write_probability_csv<W: Write>(mut out: W, grid: &FieldGrid) -> Result<()> {
    writeln!(out, "i,j,x,y,z,probability,valid,degraded")?;
    for (idx, c) in grid.cells.iter().enumerate() {
        let (i, j) = (idx % grid.res.0, idx / grid.res.0);
        let p = c.point;
        writeln!(
            out,
            "{i},{j},{},{},{},{},{},{}",
            p.x,
            p.y,
            p.z,
            c.probability.unwrap_or(f64::NAN),
            flag(c.valid),
            flag(c.degraded)
        )?;
    }
    Ok(())
}

struct CsvRow {
    i: usize,
    j: usize,
    values: Vec<f64>,
}

fn read_rows<R: BufRead>(input: R, header: &str) -> Result<((usize, usize), Vec<CsvRow>)> {
    let mut lines = input.lines().enumerate();
    let first = lines.next().map(|(_, l)| l).transpose()?;
    if first.as_deref().map(str::trim) != Some(header) {
        return Err(GsmError::parse(1, format!("expected header `{header}`")));
    }
    let columns = header.split(',').count();
    let mut rows = Vec::new();
    for (n, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns {
            return Err(GsmError::parse(n + 1, format!("expected {columns} fields, got {}", fields.len())));
        }
        let index = |k: usize| {
            fields[k]
                .parse::<usize>()
                .map_err(|e| GsmError::parse(n + 1, format!("bad index `{}`: {e}", fields[k])))
        };
        let values = fields[2..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| GsmError::parse(n + 1, format!("bad number `{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(CsvRow { i: index(0)?, j: index(1)?, values });
    }
    let res = (
        rows.iter().map(|r| r.i + 1).max().unwrap_or(0),
        rows.iter().map(|r| r.j + 1).max().unwrap_or(0),
    );
    if rows.len() != res.0 * res.1 {
        return Err(GsmError::ShapeMismatch(format!(
            "{} rows do not fill a {}x{} grid",
            rows.len(),
            res.0,
            res.1
        )));
    }
    Ok((res, rows))
}

/// Rebuilds a distance grid from the files written by [`write_distance_csv`]
/// and [`write_gradient_csv`].
pub fn read_distance_field<R1: BufRead, R2: BufRead>(dist: R1, grad: R2) -> Result<FieldGrid> {
    let (res, drows) = read_rows(dist, "i,j,x,y,z,distance,valid")?;
    let (gres, grows) = read_rows(grad, "i,j,x,y,z,gx,gy,gz,valid")?;
    if res != gres {
        return Err(GsmError::ShapeMismatch(format!(
            "distance grid is {}x{}, gradient grid is {}x{}",
            res.0, res.1, gres.0, gres.1
        )));
    }
    let mut cells: Vec<Option<FieldCell>> = vec![None; res.0 * res.1];
    for r in drows {
        let v = &r.values;
        let valid = v[4] != 0.0;
        cells[r.j * res.0 + r.i] = Some(FieldCell {
            point: Vector3::new(v[0], v[1], v[2]),
            distance: if valid { v[3] } else { f64::NAN },
            gradient: None,
            probability: None,
            degraded: false,
            valid,
        });
    }
    for r in grows {
        let v = &r.values;
        let cell = cells[r.j * res.0 + r.i]
            .as_mut()
            .ok_or_else(|| GsmError::ShapeMismatch(format!("gradient cell ({}, {}) has no distance", r.i, r.j)))?;
        if v[6] != 0.0 {
            cell.gradient = Some(Vector3::new(v[3], v[4], v[5]));
        }
    }
    let cells = cells
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| GsmError::ShapeMismatch("duplicate cell indices".into()))?;
    Ok(FieldGrid { res, cells })
}

pub fn read_probability_field<R: BufRead>(input: R) -> Result<FieldGrid> {
    let (res, rows) = read_rows(input, "i,j,x,y,z,probability,valid,degraded")?;
    let mut cells: Vec<Option<FieldCell>> = vec![None; res.0 * res.1];
    for r in rows {
        let v = &r.values;
        let valid = v[4] != 0.0;
        cells[r.j * res.0 + r.i] = Some(FieldCell {
            point: Vector3::new(v[0], v[1], v[2]),
            distance: f64::NAN,
            gradient: None,
            probability: valid.then_some(v[3]),
            degraded: v[5] != 0.0,
            valid,
        });
    }
    let cells = cells
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| GsmError::ShapeMismatch("duplicate cell indices".into()))?;
    Ok(FieldGrid { res, cells })
}

fn channel(t: f64) -> u8 {
    (t.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM with the `v` axis pointing up.
pub fn write_ppm<W: Write>(
    mut out: W,
    grid: &FieldGrid,
    color: impl Fn(&FieldCell) -> Option<[u8; 3]>,
) -> Result<()> {
    write!(out, "P6\n{} {}\n255\n", grid.res.0, grid.res.1)?;
    let mut buf = Vec::with_capacity(grid.cells.len() * 3);
    for j in (0..grid.res.1).rev() {
        for i in 0..grid.res.0 {
            buf.extend_from_slice(&color(grid.cell(i, j)).unwrap_or(INVALID_RGB));
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Blue at zero clearance to red at the largest valid distance.
pub fn write_distance_ppm<W: Write>(out: W, grid: &FieldGrid) -> Result<()> {
    let max = grid
        .cells
        .iter()
        .filter(|c| c.valid)
        .map(|c| c.distance)
        .fold(0.0, f64::max);
    let scale = if max > 0.0 { max } else { 1.0 };
    write_ppm(out, grid, |c| {
        c.valid.then(|| {
            let t = c.distance / scale;
            [channel(t), 0, channel(1.0 - t)]
        })
    })
}

/// Red at probability 1 fading to black at 0.
pub fn write_probability_ppm<W: Write>(out: W, grid: &FieldGrid) -> Result<()> {
    write_ppm(out, grid, |c| c.probability.map(|p| [channel(p), 0, 0]))
}

/// Line segments of the `level` set of the cell-center probability values,
/// by marching squares. Squares touching an invalid cell are skipped; saddles
/// are resolved with the square's mean value.
pub fn isocontour(grid: &FieldGrid, level: f64) -> Vec<[Vector3<f64>; 2]> {
    let mut segments = Vec::new();
    if grid.res.0 < 2 || grid.res.1 < 2 {
        return segments;
    }
    for j in 0..grid.res.1 - 1 {
        for i in 0..grid.res.0 - 1 {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)].map(|(a, b)| grid.cell(a, b));
            let Some(vals) = corners
                .iter()
                .map(|c| c.probability)
                .collect::<Option<Vec<f64>>>()
            else {
                continue;
            };
            let above: Vec<bool> = vals.iter().map(|&v| v >= level).collect();
            let crossing = |e: usize| {
                let (a, b) = (e, (e + 1) % 4);
                let t = (level - vals[a]) / (vals[b] - vals[a]);
                corners[a].point + (corners[b].point - corners[a].point) * t
            };
            let cut: Vec<usize> = (0..4).filter(|&e| above[e] != above[(e + 1) % 4]).collect();
            match cut.len() {
                2 => segments.push([crossing(cut[0]), crossing(cut[1])]),
                4 => {
                    let center_above = vals.iter().sum::<f64>() / 4.0 >= level;
                    for k in (0..4).filter(|&k| above[k] != center_above) {
                        segments.push([crossing((k + 3) % 4), crossing(k)]);
                    }
                }
                _ => {}
            }
        }
    }
    segments
}

pub fn write_isocontour_csv<W: Write>(mut out: W, segments: &[[Vector3<f64>; 2]]) -> Result<()> {
    writeln!(out, "segment,x0,y0,z0,x1,y1,z1")?;
    for (k, [a, b]) in segments.iter().enumerate() {
        writeln!(out, "{k},{},{},{},{},{},{}", a.x, a.y, a.z, b.x, b.y, b.z)?;
    }
    Ok(())
}
