//! CSV tables, legacy VTK files and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sosm_core::fespace::{Field, FunctionSpace};
use sosm_core::forms::UnknownLayout;
use sosm_core::mesh::Mesh;
use sosm_core::mms::{ErrorRecord, METRIC_COUNT};
use sosm_core::quadrature::TriangleRule;
use sosm_core::solver::NewtonReport;

/// Rectangular table of optional floats; `None` is written as an empty field.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Option<f64>>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Writes `table` with a header row. Floats use the shortest decimal that
/// parses back to the same value.
pub fn write_csv(table: &Table, path: &Path) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.map_or_else(String::new, |x| x.to_string())))?;
    }
    w.flush()
}

pub fn read_csv(path: &Path) -> std::io::Result<Table> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut table = Table::new(header);
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>().map(Some).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
                }
            })
            .collect::<std::io::Result<Vec<_>>>()?;
        table.push(row);
    }
    Ok(table)
}

/// Error table with the columns `h, dofs`, the metrics, then `rate_<metric>`
/// comparing each row with the previous one.
pub fn error_table(records: &[ErrorRecord], rates: &[[Option<f64>; METRIC_COUNT]]) -> Table {
    let mut header = vec!["h".to_string(), "dofs".to_string()];
    header.extend(ErrorRecord::NAMES.iter().map(|s| s.to_string()));
    header.extend(ErrorRecord::NAMES.iter().map(|s| format!("rate_{s}")));
    let mut t = Table::new(header);
    for (k, r) in records.iter().enumerate() {
        let mut row = vec![Some(r.h), Some(r.dofs as f64)];
        row.extend(r.metrics());
        match k.checked_sub(1).and_then(|j| rates.get(j)) {
            Some(rate) => row.extend(rate.iter().copied()),
            None => row.extend([None; METRIC_COUNT]),
        }
        t.push(row);
    }
    t
}

/// Iteration history of one or more continuation steps. Within a step the
/// initial residual has iteration 0 and no update.
pub fn newton_table(reports: &[NewtonReport]) -> Table {
    let mut t = Table::new(["step", "iteration", "residual", "update_norm", "damping"].map(String::from).to_vec());
    for (s, report) in reports.iter().enumerate() {
        for (k, r) in report.residuals.iter().enumerate() {
            let (u, d) = match k.checked_sub(1) {
                Some(j) => (report.update_norms.get(j).copied(), report.damping.get(j).copied()),
                None => (None, None),
            };
            t.push(vec![Some((s + 1) as f64), Some(k as f64), Some(*r), u, d]);
        }
    }
    t
}

enum Sampling {
    Vertex,
    CellAverage,
}

fn sampling(space: &FunctionSpace) -> Sampling {
    let f = space.family();
    if f.is_continuous() {
        Sampling::Vertex
    } else {
        Sampling::CellAverage
    }
}

fn vertex_values(field: &Field, mesh: &Mesh) -> Vec<Vec<f64>> {
    // Lagrange numbering puts the vertex DOFs first in each component
    let space = field.space();
    let nv = mesh.num_vertices();
    let c = field.coeffs();
    (0..space.ncomp()).map(|k| (0..nv).map(|v| c[k * space.nscalar() + v]).collect()).collect()
}

fn cell_averages(field: &Field, mesh: &Mesh) -> Vec<Vec<f64>> {
    let space = field.space();
    let dim = space.value_dim();
    let rule = TriangleRule::new(space.family().degree() + 1);
    let rt = space.quadrature_table(&rule);
    let mut out = vec![vec![0.0; mesh.num_cells()]; dim];
    for cell in 0..mesh.num_cells() {
        let t = space.tabulate_with(cell, &rt);
        let vals = field.values_at(cell, &t);
        let area: f64 = t.jxw.iter().sum();
        for (d, col) in out.iter_mut().enumerate() {
            col[cell] = (0..t.nq).map(|q| t.jxw[q] * vals[dim * q + d]).sum::<f64>() / area;
        }
    }
    out
}

fn write_block<W: Write>(w: &mut W, name: &str, comps: &[Vec<f64>]) -> std::io::Result<()> {
    if comps.len() == 1 {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in &comps[0] {
            writeln!(w, "{v}")?;
        }
    } else {
        writeln!(w, "VECTORS {name} double")?;
        for i in 0..comps[0].len() {
            writeln!(w, "{} {} 0", comps[0][i], comps[1][i])?;
        }
        writeln!(w, "SCALARS {name}_magnitude double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for i in 0..comps[0].len() {
            writeln!(w, "{}", comps[0][i].hypot(comps[1][i]))?;
        }
    }
    Ok(())
}

/// Legacy ASCII VTK unstructured grid. Continuous fields become point data;
/// discontinuous and H(div) fields become cell data holding cell averages.
/// Names must not contain whitespace.
pub fn write_vtk(path: &Path, mesh: &Mesh, fields: &[(&str, &Field)]) -> std::io::Result<()> {
    for (name, f) in fields {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bad field name {name:?}")));
        }
        if f.space().mesh().num_cells() != mesh.num_cells() || f.space().mesh().num_vertices() != mesh.num_vertices() {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("field {name} lives on another mesh")));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "sosm")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.num_vertices())?;
    for p in mesh.vertices() {
        writeln!(w, "{} {} 0", p[0], p[1])?;
    }
    let nc = mesh.num_cells();
    writeln!(w, "CELLS {} {}", nc, 4 * nc)?;
    for c in mesh.cells() {
        writeln!(w, "3 {} {} {}", c[0], c[1], c[2])?;
    }
    writeln!(w, "CELL_TYPES {nc}")?;
    for _ in 0..nc {
        writeln!(w, "5")?;
    }
    let (point, cell): (Vec<_>, Vec<_>) = fields.iter().partition(|(_, f)| matches!(sampling(f.space()), Sampling::Vertex));
    if !point.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.num_vertices())?;
        for (name, f) in point {
            write_block(&mut w, name, &vertex_values(f, mesh))?;
        }
    }
    if !cell.is_empty() {
        writeln!(w, "CELL_DATA {nc}")?;
        for (name, f) in cell {
            write_block(&mut w, name, &cell_averages(f, mesh))?;
        }
    }
    w.flush()
}

#[derive(Debug, Clone, Serialize)]
pub struct MeshRecord {
    pub m: usize,
    pub h: f64,
    pub cells: usize,
    pub dofs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mole_fraction_defect: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_average_defect: Option<f64>,
    pub seconds: f64,
}

impl MeshRecord {
    pub fn new(m: usize, layout: &UnknownLayout) -> Self {
        MeshRecord {
            m,
            h: 1.0 / m as f64,
            cells: layout.mesh().num_cells(),
            dofs: layout.total(),
            iterations: None,
            converged: false,
            mole_fraction_defect: None,
            mass_average_defect: None,
            seconds: 0.0,
        }
    }
}

/// Run record written as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub scenario: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub meshes: Vec<MeshRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mole_fraction_defect: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_average_defect: Option<f64>,
    pub artifacts: Vec<String>,
    pub seconds: f64,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }
}

/// `<crate version>+<git revision>`, the revision captured at build time.
pub fn version_string() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("SOSM_GIT_REVISION"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sosm_core::fespace::{interpolate_scalar, interpolate_vector, ElementFamily};
    use sosm_core::mesh::build_unit_square;
    use std::sync::Arc;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("sosm-output-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn empty_table_is_header_only() {
        let p = tmp("empty.csv");
        write_csv(&Table::new(vec!["a".into(), "b".into()]), &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a,b\n");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut t = Table::new(vec!["x".into(), "y".into()]);
        t.push(vec![Some(0.1 + 0.2), None]);
        t.push(vec![Some(1.0 / 3.0), Some(-2.5e-300)]);
        let p = tmp("rt.csv");
        write_csv(&t, &p).unwrap();
        assert_eq!(read_csv(&p).unwrap(), t);
    }

    #[test]
    fn error_table_columns_follow_metric_order() {
        let t = error_table(&[], &[]);
        assert_eq!(&t.header[..9], &["h", "dofs", "E_v", "E_grad_v", "E_p", "E_J", "E_mu", "E_MA", "E_x"]);
        assert_eq!(t.header.len(), 2 + 2 * METRIC_COUNT);
    }

    #[test]
    fn vtk_constant_fields_and_counts() {
        let mesh = Arc::new(build_unit_square(3).unwrap());
        let cg = Arc::new(FunctionSpace::new(mesh.clone(), ElementFamily::ContinuousLagrange(1)).unwrap());
        let dg = Arc::new(FunctionSpace::new(mesh.clone(), ElementFamily::DiscontinuousLagrange(0)).unwrap());
        let rt = Arc::new(FunctionSpace::new(mesh.clone(), ElementFamily::RaviartThomas(1)).unwrap());
        let a = interpolate_scalar(&cg, |_| 1.0);
        let b = interpolate_scalar(&dg, |_| 1.0);
        let c = interpolate_vector(&rt, |_| [1.0, 0.0]);
        let p = tmp("unit.vtk");
        write_vtk(&p, &mesh, &[("a", &a), ("b", &b), ("c", &c)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains(&format!("CELLS {} {}", mesh.num_cells(), 4 * mesh.num_cells())));
        assert!(text.contains(&format!("CELL_TYPES {}", mesh.num_cells())));
        let block = |name: &str| -> Vec<f64> {
            let start = text.find(&format!("SCALARS {name} double 1")).unwrap();
            text[start..].lines().skip(2).take_while(|l| l.parse::<f64>().is_ok()).map(|l| l.parse().unwrap()).collect()
        };
        let va = block("a");
        assert_eq!(va.len(), mesh.num_vertices());
        assert!(va.iter().all(|&v| v == 1.0));
        let vb = block("b");
        assert_eq!(vb.len(), mesh.num_cells());
        assert!(vb.iter().all(|&v| v == 1.0));
        assert!(block("c_magnitude").iter().all(|&v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn vtk_rejects_bad_names() {
        let mesh = Arc::new(build_unit_square(1).unwrap());
        let cg = Arc::new(FunctionSpace::new(mesh.clone(), ElementFamily::ContinuousLagrange(1)).unwrap());
        let a = interpolate_scalar(&cg, |_| 1.0);
        assert!(write_vtk(&tmp("bad.vtk"), &mesh, &[("x 1", &a)]).is_err());
    }

    #[test]
    fn newton_table_layout() {
        let r = NewtonReport {
            residuals: vec![1.0, 1e-3, 1e-9],
            update_norms: vec![0.5, 1e-4],
            damping: vec![1.0, 1.0],
            converged: true,
            iterations: 2,
            failure: None,
        };
        let t = newton_table(&[r.clone(), r]);
        assert_eq!(t.rows.len(), 6);
        assert_eq!(t.rows[0][3], None);
        assert_eq!(t.rows[5], vec![Some(2.0), Some(2.0), Some(1e-9), Some(1e-4), Some(1.0)]);
    }
}
