//! CSV, VTK and run-directory output.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{FieldRole, SolutionField};
use crate::homogenize::{EmpiricalStats, PerturbationDecomposition};
use crate::mesh::{build_structured_mesh, Rect, TriMesh};
use crate::pipeline::SampleTensor;

/// Shortest round-trip representation with `.` as decimal separator.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Legacy ASCII VTK unstructured grid with one point-data scalar.
pub fn write_vtk<W: Write>(field: &SolutionField, name: &str, mut out: W) -> Result<()> {
    let mesh = &field.mesh;
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{name}")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.n_nodes())?;
    for p in mesh.nodes() {
        writeln!(out, "{} {} 0", num(p[0]), num(p[1]))?;
    }
    let nt = mesh.n_triangles();
    writeln!(out, "CELLS {} {}", nt, 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(out, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(out, "5")?;
    }
    writeln!(out, "POINT_DATA {}", mesh.n_nodes())?;
    writeln!(out, "SCALARS {name} double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in &field.values {
        writeln!(out, "{}", num(*v))?;
    }
    Ok(())
}

/// `x,y,value` rows in node order.
pub fn write_field_csv<W: Write>(field: &SolutionField, mut out: W) -> Result<()> {
    writeln!(out, "x,y,value")?;
    for (p, v) in field.mesh.nodes().iter().zip(&field.values) {
        writeln!(out, "{},{},{}", num(p[0]), num(p[1]), num(*v))?;
    }
    Ok(())
}

/// Read a field written by [`write_field_csv`] on a structured mesh, rebuilding the mesh.
pub fn read_field_csv<R: BufRead>(input: R, role: FieldRole) -> Result<SolutionField> {
    let mut points = Vec::new();
    let mut values = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 {
            if line != "x,y,value" {
                return Err(Error::InvalidInput(format!("unexpected field header `{line}`")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parts: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("line {}: {e}", i + 1)))?;
        if parts.len() != 3 {
            return Err(Error::InvalidInput(format!("line {}: expected 3 columns", i + 1)));
        }
        points.push([parts[0], parts[1]]);
        values.push(parts[2]);
    }
    if points.len() < 4 {
        return Err(Error::InvalidInput("field has fewer than 4 nodes".into()));
    }
    let min = |k: usize| points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
    let max = |k: usize| points.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
    let domain = Rect::new(min(0), min(1), max(0), max(1));
    let nx = points.iter().take_while(|p| (p[1] - domain.y0).abs() < 1e-12).count() - 1;
    if nx == 0 {
        return Err(Error::InvalidInput("field is not on a structured mesh".into()));
    }
    let n = (nx as f64 / domain.width()).round() as usize;
    let mesh: TriMesh = build_structured_mesh(domain, n)?;
    let matches = mesh.n_nodes() == points.len()
        && mesh
            .nodes()
            .iter()
            .zip(&points)
            .all(|(a, b)| (a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
    if !matches {
        return Err(Error::InvalidInput("field nodes do not form a structured mesh".into()));
    }
    SolutionField::new(Arc::new(mesh), values, role)
}

pub fn tensors_csv(tensors: &[SampleTensor]) -> String {
    let mut out = String::from("sample_index,block_k1,block_k2,a11,a12,a21,a22,cg_iterations\n");
    for t in tensors {
        let e = t.tensor.0;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            t.sample_index,
            t.block.0,
            t.block.1,
            num(e[0][0]),
            num(e[0][1]),
            num(e[1][0]),
            num(e[1][1]),
            t.cg_iterations
        ));
    }
    out
}

pub fn stats_csv(stats: &EmpiricalStats) -> String {
    let row = |name: &str, m: crate::Mat2| {
        format!(
            "{name},{},{},{},{},{}\n",
            num(m.0[0][0]),
            num(m.0[0][1]),
            num(m.0[1][0]),
            num(m.0[1][1]),
            stats.sample_count
        )
    };
    let mut out = String::from("statistic,a11,a12,a21,a22,samples\n");
    out.push_str(&row("mean", stats.mean));
    out.push_str(&row("variance", stats.variance));
    out
}

pub fn decomposition_csv(d: &PerturbationDecomposition) -> String {
    let mut out = String::from("block_k1,block_k2,a1_11,a1_12,a1_21,a1_22,z1\n");
    for ((k, a), (_, z)) in d.a1_blocks.iter().zip(&d.z1) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            k.0,
            k.1,
            num(a.0[0][0]),
            num(a.0[0][1]),
            num(a.0[1][0]),
            num(a.0[1][1]),
            num(*z)
        ));
    }
    out
}

/// A fresh output directory. Existing non-empty directories are never reused.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self> {
        if path.exists() {
            let occupied = fs::read_dir(path)?.next().is_some();
            if occupied {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!("output directory {} is not empty", path.display()),
                )));
            }
        }
        fs::create_dir_all(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// First of `base`, `base-1`, `base-2`, ... that does not exist yet.
    pub fn create_unique(base: &Path) -> Result<Self> {
        let mut candidate = base.to_path_buf();
        let mut k = 1;
        while candidate.exists() {
            candidate = PathBuf::from(format!("{}-{k}", base.display()));
            k += 1;
        }
        Self::create(&candidate)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.path.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// `<stem>.vtk` and `<stem>.csv`.
    pub fn write_field(&mut self, stem: &str, field: &SolutionField) -> Result<()> {
        let mut vtk = Vec::new();
        write_vtk(field, stem, &mut vtk)?;
        fs::write(self.path.join(format!("{stem}.vtk")), vtk)?;
        let mut csv = Vec::new();
        write_field_csv(field, &mut csv)?;
        fs::write(self.path.join(format!("{stem}.csv")), csv)?;
        self.written.push(format!("{stem}.vtk"));
        self.written.push(format!("{stem}.csv"));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::FieldRole;

    fn field() -> SolutionField {
        let mesh = Arc::new(build_structured_mesh(Rect::unit(), 4).unwrap());
        SolutionField::interpolate(mesh, |p| p[0] * (1.0 - p[1]) + 0.1, FieldRole::Other)
    }

    #[test]
    fn vtk_layout() {
        let mut buf = Vec::new();
        write_vtk(&field(), "u", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\nu\nASCII\nDATASET UNSTRUCTURED_GRID\n"));
        assert!(text.contains("POINTS 25 double\n"));
        assert!(text.contains("CELLS 32 128\n"));
        assert!(text.contains("CELL_TYPES 32\n"));
        assert!(text.contains("POINT_DATA 25\nSCALARS u double 1\nLOOKUP_TABLE default\n"));
        assert_eq!(text.lines().filter(|l| *l == "5").count(), 32);
    }

    #[test]
    fn field_csv_roundtrip_is_exact() {
        let f = field();
        let mut buf = Vec::new();
        write_field_csv(&f, &mut buf).unwrap();
        let back = read_field_csv(buf.as_slice(), FieldRole::Other).unwrap();
        assert_eq!(back.values, f.values);
        assert_eq!(back.mesh.nodes(), f.mesh.nodes());
        assert_eq!(back.mesh.triangles(), f.mesh.triangles());
    }

    #[test]
    fn bad_field_csv_rejected() {
        assert!(read_field_csv("a,b\n".as_bytes(), FieldRole::Other).is_err());
        assert!(read_field_csv("x,y,value\n0,0,1\n1,0,x\n".as_bytes(), FieldRole::Other).is_err());
    }

    #[test]
    fn run_dir_refuses_occupied_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let mut d = RunDir::create(&tmp.path().join("a")).unwrap();
        d.write("x.csv", "1\n").unwrap();
        assert!(matches!(RunDir::create(d.path()), Err(Error::Io(_))));
        let other = RunDir::create_unique(d.path()).unwrap();
        assert!(other.path().ends_with("a-1"));
    }
}
