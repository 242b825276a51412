//! File formats: legacy ASCII VTK for fields, CSV for point clouds,
//! coefficient dumps and head histories.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::fem::Field;
use crate::forward::HeadHistory;
use crate::mesh::{Point, TriangleMesh};
use crate::pointeval::PointInterpolator;

/// Write `mesh` with one vertex-data array per field.
///
/// Fields of degree 2 are written through their vertex values; use
/// [`write_coefficients_csv`] for the full coefficient vector.
pub fn write_vtk<W: Write>(mut w: W, mesh: &TriangleMesh, fields: &[(&str, &Field)]) -> Result<()> {
    for (name, f) in fields {
        if f.space().mesh().as_ref() as *const TriangleMesh != mesh as *const TriangleMesh {
            return Err(Error::MeshMismatch);
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("invalid field name '{}'", name)));
        }
    }
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "pointassim")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.num_vertices())?;
    for v in mesh.vertices() {
        writeln!(w, "{} {} 0", v[0], v[1])?;
    }
    writeln!(w, "CELLS {} {}", mesh.num_cells(), 4 * mesh.num_cells())?;
    for c in mesh.cells() {
        writeln!(w, "3 {} {} {}", c[0], c[1], c[2])?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.num_cells())?;
    for _ in 0..mesh.num_cells() {
        writeln!(w, "5")?;
    }
    if !fields.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.num_vertices())?;
        for (name, f) in fields {
            writeln!(w, "SCALARS {} double 1", name)?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in f.vertex_values() {
                writeln!(w, "{}", v)?;
            }
        }
    }
    Ok(())
}

/// Contents of a VTK file written by [`write_vtk`].
#[derive(Clone, Debug, PartialEq)]
pub struct VtkData {
    pub vertices: Vec<Point>,
    pub cells: Vec<[usize; 3]>,
    pub point_data: Vec<(String, Vec<f64>)>,
}

pub fn read_vtk<R: BufRead>(r: R) -> Result<VtkData> {
    let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
    let mut it = lines.iter().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let perr = |line: usize, m: &str| Error::Parse { line, message: m.to_string() };
    let mut next = |what: &str| it.next().ok_or_else(|| perr(lines.len(), &format!("unexpected end, expected {}", what)));
    fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize) -> Result<T> {
        tok.and_then(|t| t.parse().ok()).ok_or(Error::Parse { line, message: "expected a number".into() })
    }

    for expect in ["# vtk", "", "ASCII", "DATASET UNSTRUCTURED_GRID"] {
        let (ln, l) = next(expect)?;
        if !l.starts_with(expect) {
            return Err(perr(ln, &format!("expected '{}'", expect)));
        }
    }
    let (ln, l) = next("POINTS")?;
    let mut tok = l.split_whitespace();
    if tok.next() != Some("POINTS") {
        return Err(perr(ln, "expected POINTS"));
    }
    let nv: usize = num(tok.next(), ln)?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = next("point")?;
        let mut t = l.split_whitespace();
        vertices.push([num(t.next(), ln)?, num(t.next(), ln)?]);
    }
    let (ln, l) = next("CELLS")?;
    let mut tok = l.split_whitespace();
    if tok.next() != Some("CELLS") {
        return Err(perr(ln, "expected CELLS"));
    }
    let nc: usize = num(tok.next(), ln)?;
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let (ln, l) = next("cell")?;
        let t: Vec<usize> = l.split_whitespace().map(|s| num(Some(s), ln)).collect::<Result<_>>()?;
        if t.len() != 4 || t[0] != 3 {
            return Err(perr(ln, "expected a triangle"));
        }
        cells.push([t[1], t[2], t[3]]);
    }
    let (ln, l) = next("CELL_TYPES")?;
    if !l.starts_with("CELL_TYPES") {
        return Err(perr(ln, "expected CELL_TYPES"));
    }
    for _ in 0..nc {
        next("cell type")?;
    }
    let mut point_data = Vec::new();
    while let Some((ln, l)) = it.next() {
        if l.is_empty() || l.starts_with("POINT_DATA") {
            continue;
        }
        let mut t = l.split_whitespace();
        if t.next() != Some("SCALARS") {
            return Err(perr(ln, "expected SCALARS"));
        }
        let name = t.next().ok_or_else(|| perr(ln, "missing array name"))?.to_string();
        it.next();
        let mut vals = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = it.next().ok_or_else(|| perr(lines.len(), "truncated data"))?;
            vals.push(num(Some(l), ln)?);
        }
        point_data.push((name, vals));
    }
    Ok(VtkData { vertices, cells, point_data })
}

/// `dof,x,y,value` for every coefficient of `field`.
pub fn write_coefficients_csv<W: Write>(mut w: W, field: &Field) -> Result<()> {
    writeln!(w, "dof,x,y,value")?;
    for (d, (x, v)) in field.space().dof_coords().iter().zip(field.coeffs()).enumerate() {
        writeln!(w, "{},{},{},{}", d, x[0], x[1], v)?;
    }
    Ok(())
}

/// A scattered point set with optional values and standard deviations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub values: Option<Vec<f64>>,
    pub sigmas: Option<Vec<f64>>,
}

pub fn write_points_csv<W: Write>(mut w: W, cloud: &PointCloud) -> Result<()> {
    let n = cloud.points.len();
    for col in [&cloud.values, &cloud.sigmas].into_iter().flatten() {
        if col.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: col.len() });
        }
    }
    if cloud.sigmas.is_some() && cloud.values.is_none() {
        return Err(Error::InvalidArgument("sigma column requires a value column".into()));
    }
    let header = match (&cloud.values, &cloud.sigmas) {
        (None, _) => "x,y",
        (Some(_), None) => "x,y,value",
        (Some(_), Some(_)) => "x,y,value,sigma",
    };
    writeln!(w, "{}", header)?;
    for (i, p) in cloud.points.iter().enumerate() {
        write!(w, "{},{}", p[0], p[1])?;
        if let Some(v) = &cloud.values {
            write!(w, ",{}", v[i])?;
        }
        if let Some(s) = &cloud.sigmas {
            write!(w, ",{}", s[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Read `x,y[,value[,sigma]]` with a header line.
pub fn read_points_csv<R: BufRead>(r: R) -> Result<PointCloud> {
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
    };
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let width = match cols.as_slice() {
        ["x", "y"] => 2,
        ["x", "y", "value"] => 3,
        ["x", "y", "value", "sigma"] => 4,
        _ => return Err(Error::Parse { line: 1, message: format!("unsupported header '{}'", header.trim()) }),
    };
    let mut cloud = PointCloud {
        values: (width >= 3).then(Vec::new),
        sigmas: (width == 4).then(Vec::new),
        ..Default::default()
    };
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ln = i + 1;
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: ln, message: e.to_string() })?;
        if vals.len() != width {
            return Err(Error::Parse { line: ln, message: format!("expected {} columns, found {}", width, vals.len()) });
        }
        cloud.points.push([vals[0], vals[1]]);
        if let Some(v) = cloud.values.as_mut() {
            v.push(vals[2]);
        }
        if let Some(s) = cloud.sigmas.as_mut() {
            s.push(vals[3]);
        }
    }
    Ok(cloud)
}

/// `time,well,head` rows for every step and well.
pub fn write_head_history_csv<W: Write>(mut w: W, history: &HeadHistory, wells: &PointInterpolator) -> Result<()> {
    writeln!(w, "time,well,head")?;
    for (t, h) in history.times.iter().zip(&history.heads) {
        for (i, v) in wells.apply_coeffs(h.coeffs())?.iter().enumerate() {
            writeln!(w, "{},{},{}", t, i, v)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{interpolate_callable, FunctionSpace, P1, P2};
    use crate::mesh::build_rectangle_mesh;
    use std::sync::Arc;

    #[test]
    fn vtk_round_trip() {
        let mesh = Arc::new(build_rectangle_mesh(3, 2, 1.5, 1.0).unwrap());
        let s1 = FunctionSpace::new(mesh.clone(), P1).unwrap();
        let s2 = FunctionSpace::new(mesh.clone(), P2).unwrap();
        let a = interpolate_callable(&s1, |x| x[0] / 3.0 + x[1]);
        let b = interpolate_callable(&s2, |x| x[0] * x[1] - 0.1);
        let mut buf = Vec::new();
        write_vtk(&mut buf, &mesh, &[("a", &a), ("b", &b)]).unwrap();
        let back = read_vtk(&buf[..]).unwrap();
        assert_eq!(back.vertices, mesh.vertices());
        assert_eq!(back.cells, mesh.cells());
        assert_eq!(back.point_data[0], ("a".to_string(), a.coeffs().to_vec()));
        assert_eq!(back.point_data[1].1, b.vertex_values());
    }

    #[test]
    fn vtk_rejects_foreign_fields() {
        let mesh = Arc::new(build_rectangle_mesh(2, 2, 1.0, 1.0).unwrap());
        let other = Arc::new(build_rectangle_mesh(2, 2, 1.0, 1.0).unwrap());
        let f = Field::zeros(FunctionSpace::new(other, P1).unwrap());
        assert!(write_vtk(Vec::new(), &mesh, &[("f", &f)]).is_err());
        assert!(matches!(read_vtk(&b"# vtk\nx\nBINARY\n"[..]), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn coefficient_sidecar() {
        let mesh = Arc::new(build_rectangle_mesh(1, 1, 1.0, 1.0).unwrap());
        let s = FunctionSpace::new(mesh, P2).unwrap();
        let f = interpolate_callable(&s, |x| x[0]);
        let mut buf = Vec::new();
        write_coefficients_csv(&mut buf, &f).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + s.ndofs());
        assert!(text.lines().nth(2).unwrap().ends_with(",1"));
    }

    #[test]
    fn point_csv_round_trip() {
        let cloud = PointCloud {
            points: vec![[0.1, 0.2], [1.0 / 3.0, 0.5]],
            values: Some(vec![1.5, -2.0]),
            sigmas: Some(vec![0.01, 0.02]),
        };
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &cloud).unwrap();
        assert_eq!(read_points_csv(&buf[..]).unwrap(), cloud);
        let bare = read_points_csv(&b"x,y\n0.5,0.25\n"[..]).unwrap();
        assert_eq!(bare.points, vec![[0.5, 0.25]]);
        assert!(bare.values.is_none());
    }

    #[test]
    fn point_csv_errors_carry_line_numbers() {
        let e = read_points_csv(&b"x,y,value\n0,0,1\n0,abc,1\n"[..]).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        let e = read_points_csv(&b"x,y\n0,0,1\n"[..]).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(read_points_csv(&b"lat,lon\n"[..]).is_err());
    }
}
