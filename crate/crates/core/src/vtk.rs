//! Legacy ASCII VTK output of nodal fields on a triangulation.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fem::PhaseField;
use crate::mesh::Mesh;
use crate::scalar::Real;

/// Writes an `UNSTRUCTURED_GRID` with one `SCALARS` block per named nodal
/// array. Coordinates get `z = 0`; values are printed with `{:e}` so output is
/// reproducible byte for byte.
pub fn write_vtk<T: Real, W: Write>(mut w: W, mesh: &Mesh<T>, title: &str, scalars: &[(&str, &[T])]) -> Result<()> {
    let nv = mesh.num_vertices();
    for (name, data) in scalars {
        if data.len() != nv {
            return Err(Error::DimensionMismatch(format!("field {name} has {} values for {nv} vertices", data.len())));
        }
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidParameter(format!("field name {name:?} must be a single token")));
        }
    }
    // the header line must not contain newlines
    let title: String = title.chars().map(|c| if c == '\n' { ' ' } else { c }).collect();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nv} double")?;
    for p in mesh.vertices() {
        writeln!(w, "{:e} {:e} 0", p[0].as_f64(), p[1].as_f64())?;
    }
    let nt = mesh.num_triangles();
    writeln!(w, "CELLS {nt} {}", 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    if !scalars.is_empty() {
        writeln!(w, "POINT_DATA {nv}")?;
    }
    for (name, data) in scalars {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in data.iter() {
            writeln!(w, "{:e}", v.as_f64())?;
        }
    }
    Ok(())
}

/// Components of `u` as `u1..ur`.
pub fn write_phase_field_vtk<T: Real, W: Write>(w: W, mesh: &Mesh<T>, title: &str, u: &PhaseField<T>) -> Result<()> {
    u.check_mesh(mesh)?;
    let comps: Vec<Vec<T>> = (0..u.phases()).map(|i| u.component(i)).collect();
    let names: Vec<String> = (1..=u.phases()).map(|i| format!("u{i}")).collect();
    let fields: Vec<(&str, &[T])> = names.iter().map(String::as_str).zip(comps.iter().map(Vec::as_slice)).collect();
    write_vtk(w, mesh, title, &fields)
}
