//! ASCII model files and point-cloud readers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::SVector;

use super::{GaussianComponent, SurfaceModel};
use crate::error::{GsmError, Result};
use crate::geometry::{parse_floats, upper_to_symmetric, IsocontourParams};

/// Writes `GSM q M l` followed by one `weight mean… covariance-upper…` line
/// per component. Floats use shortest round-trip formatting.
pub fn write_model<const D: usize, W: Write>(mut out: W, model: &SurfaceModel<D>) -> Result<()> {
    writeln!(out, "GSM {} {} {:e}", D, model.len(), model.level())?;
    for c in model.components() {
        let mut line = format!("{:e}", c.weight);
        for v in c.mean.iter() {
            line.push_str(&format!(" {v:e}"));
        }
        for i in 0..D {
            for j in i..D {
                line.push_str(&format!(" {:e}", c.covariance[(i, j)]));
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_model<const D: usize, R: BufRead>(input: R) -> Result<SurfaceModel<D>> {
    let mut lines = content_lines(input);
    let (lineno, header) = lines
        .next()
        .transpose()?
        .ok_or_else(|| GsmError::parse(1, "empty model file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "GSM" {
        return Err(GsmError::parse(lineno, "expected header `GSM q M l`"));
    }
    let q: usize = fields[1]
        .parse()
        .map_err(|_| GsmError::parse(lineno, "invalid dimension"))?;
    if q != D {
        return Err(GsmError::parse(lineno, format!("model dimension {q}, expected {D}")));
    }
    let m: usize = fields[2]
        .parse()
        .map_err(|_| GsmError::parse(lineno, "invalid component count"))?;
    let level: f64 = fields[3]
        .parse()
        .map_err(|_| GsmError::parse(lineno, "invalid isocontour level"))?;
    let params = IsocontourParams::new(level).map_err(|e| GsmError::parse(lineno, e.to_string()))?;

    let expected = 1 + D + D * (D + 1) / 2;
    let mut comps = Vec::with_capacity(m);
    let mut last = lineno;
    for row in lines {
        let (lineno, body) = row?;
        last = lineno;
        if comps.len() == m {
            return Err(GsmError::parse(lineno, format!("more than {m} components")));
        }
        let vals = parse_floats(&body, lineno)?;
        if vals.len() != expected {
            return Err(GsmError::parse(
                lineno,
                format!("expected {expected} values, found {}", vals.len()),
            ));
        }
        comps.push(GaussianComponent::new(
            vals[0],
            SVector::<f64, D>::from_fn(|i, _| vals[1 + i]),
            upper_to_symmetric::<D>(&vals[1 + D..]),
        ));
    }
    if comps.len() != m {
        return Err(GsmError::parse(
            last,
            format!("header announces {m} components, found {}", comps.len()),
        ));
    }
    SurfaceModel::new(comps, params)
}

pub fn save_model<const D: usize>(model: &SurfaceModel<D>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_model(&mut out, model)?;
    out.flush()?;
    Ok(())
}

pub fn load_model<const D: usize>(path: impl AsRef<Path>) -> Result<SurfaceModel<D>> {
    read_model(BufReader::new(File::open(path)?))
}

/// Reads an ASCII XYZ cloud (one point per line, `#` comments) or an ASCII
/// PLY file with a vertex element.
pub fn read_point_cloud<const D: usize, R: BufRead>(input: R) -> Result<Vec<SVector<f64, D>>> {
    let mut lines = input.lines().enumerate().map(|(i, l)| l.map(|l| (i + 1, l)));
    let mut first = None;
    for row in lines.by_ref() {
        let (lineno, line) = row?;
        if !line.trim().is_empty() {
            first = Some((lineno, line));
            break;
        }
    }
    let Some((lineno, line)) = first else {
        return Ok(Vec::new());
    };
    if line.trim() == "ply" {
        return read_ply(lines);
    }
    let mut points = Vec::new();
    for row in std::iter::once(Ok((lineno, line))).chain(lines) {
        let (lineno, line) = row?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let vals = parse_floats(body, lineno)?;
        if vals.len() != D {
            return Err(GsmError::parse(
                lineno,
                format!("expected {D} coordinates, found {}", vals.len()),
            ));
        }
        points.push(SVector::<f64, D>::from_column_slice(&vals));
    }
    Ok(points)
}

pub fn load_point_cloud<const D: usize>(path: impl AsRef<Path>) -> Result<Vec<SVector<f64, D>>> {
    read_point_cloud(BufReader::new(File::open(path)?))
}

/// Writes an XYZ cloud readable by [`read_point_cloud`].
pub fn write_point_cloud<const D: usize, W: Write>(mut out: W, points: &[SVector<f64, D>]) -> Result<()> {
    for p in points {
        let row: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

fn read_ply<const D: usize, I>(mut lines: I) -> Result<Vec<SVector<f64, D>>>
where
    I: Iterator<Item = std::io::Result<(usize, String)>>,
{
    const AXES: [&str; 3] = ["x", "y", "z"];
    let mut ascii = false;
    let mut vertices: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut header_end = 0;
    for row in lines.by_ref() {
        let (lineno, line) = row?;
        header_end = lineno;
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(GsmError::parse(lineno, format!("unsupported PLY format `{fmt}`")));
                }
                ascii = true;
            }
            ["element", name, count] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    vertices = Some(
                        count
                            .parse()
                            .map_err(|_| GsmError::parse(lineno, "invalid vertex count"))?,
                    );
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(GsmError::parse(lineno, "list properties on vertices are not supported"));
            }
            ["property", _, name] if in_vertex => props.push((*name).to_string()),
            ["end_header"] => break,
            [] | ["comment", ..] | ["obj_info", ..] | ["property", ..] => {}
            _ => return Err(GsmError::parse(lineno, format!("unexpected PLY header line `{line}`"))),
        }
    }
    if !ascii {
        return Err(GsmError::parse(header_end, "PLY header lacks `format ascii`"));
    }
    let count = vertices.ok_or_else(|| GsmError::parse(header_end, "PLY has no vertex element"))?;
    let cols: Vec<usize> = AXES[..D]
        .iter()
        .map(|a| {
            props
                .iter()
                .position(|p| p == a)
                .ok_or_else(|| GsmError::parse(header_end, format!("PLY vertex lacks `{a}`")))
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(count);
    while points.len() < count {
        let (lineno, line) = lines
            .next()
            .transpose()?
            .ok_or_else(|| GsmError::parse(header_end, "PLY ended before all vertices were read"))?;
        let vals = parse_floats(&line, lineno)?;
        if vals.len() != props.len() {
            return Err(GsmError::parse(
                lineno,
                format!("expected {} vertex values, found {}", props.len(), vals.len()),
            ));
        }
        points.push(SVector::<f64, D>::from_fn(|i, _| vals[cols[i]]));
    }
    Ok(points)
}

/// Non-blank lines with `#` comments stripped, numbered from 1.
fn content_lines<R: BufRead>(input: R) -> impl Iterator<Item = Result<(usize, String)>> {
    input.lines().enumerate().filter_map(|(i, l)| match l {
        Err(e) => Some(Err(e.into())),
        Ok(l) => {
            let body = l.split('#').next().unwrap_or("").trim().to_string();
            (!body.is_empty()).then_some(Ok((i + 1, body)))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::haar_rotation;
    use crate::linalg;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> SurfaceModel<3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comps = (0..7)
            .map(|_| {
                let r = haar_rotation::<3, _>(&mut rng);
                let s = Vector3::from_fn(|_, _| rng.random_range(0.01..0.3));
                GaussianComponent::new(
                    rng.random_range(0.1..1.0),
                    Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
                    linalg::compose(&r, &s.map(|v| v * v)),
                )
            })
            .collect();
        SurfaceModel::new(comps, IsocontourParams::new(2.5).unwrap()).unwrap()
    }

    #[test]
    fn round_trip() {
        let m = model(1);
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        let back: SurfaceModel<3> = read_model(buf.as_slice()).unwrap();
        assert_eq!(back.level(), m.level());
        for (a, b) in m.components().iter().zip(back.components()) {
            assert!((a.weight - b.weight).abs() <= 1e-12);
            assert!((a.mean - b.mean).amax() <= 1e-12);
            assert!((a.covariance - b.covariance).amax() <= 1e-12);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert!(matches!(read_model::<3, _>("".as_bytes()), Err(GsmError::Parse { .. })));
        assert!(matches!(read_model::<3, _>("# only a comment\n".as_bytes()), Err(GsmError::Parse { .. })));
        let bad = "GSM 3 1 3\n1 0 0 0 1 0 0 1 0 x\n";
        match read_model::<3, _>(bad.as_bytes()) {
            Err(GsmError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let short = "GSM 3 2 3\n1 0 0 0 1 0 0 1 0 1\n";
        assert!(matches!(read_model::<3, _>(short.as_bytes()), Err(GsmError::Parse { .. })));
        let wrong_dim = "GSM 2 1 3\n1 0 0 1 0 1\n";
        assert!(matches!(read_model::<3, _>(wrong_dim.as_bytes()), Err(GsmError::Parse { line: 1, .. })));
    }

    #[test]
    fn xyz_and_ply() {
        let xyz = "# cloud\n1 2 3\n\n4 5 6 # trailing\n";
        let pts: Vec<Vector3<f64>> = read_point_cloud(xyz.as_bytes()).unwrap();
        assert_eq!(pts, vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(4.0, 5.0, 6.0)]);

        let ply = "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\nproperty float nx\n\
                   property float x\nproperty float y\nproperty float z\nelement face 0\n\
                   property list uchar int vertex_indices\nend_header\n9 1 2 3\n9 4 5 6\n";
        let pts: Vec<Vector3<f64>> = read_point_cloud(ply.as_bytes()).unwrap();
        assert_eq!(pts, vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(4.0, 5.0, 6.0)]);

        let binary = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(read_point_cloud::<3, _>(binary.as_bytes()).is_err());
        assert!(read_point_cloud::<3, _>("1 2\n".as_bytes()).is_err());
        assert!(read_point_cloud::<3, _>("".as_bytes()).unwrap().is_empty());
    }
}
