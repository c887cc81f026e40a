//! Conforming triangular meshes of planar domains.
//!
//! Cells are stored counterclockwise. Every edge is a [`Facet`] whose vertex
//! pair is stored in ascending order; the global facet normal is the tangent
//! `x[b] - x[a]` rotated clockwise. A cell sees a facet with sign `+1` when
//! that global normal points out of the cell.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Result, SosmError};

pub const TAG_LEFT: i32 = 1;
pub const TAG_RIGHT: i32 = 2;
pub const TAG_BOTTOM: i32 = 3;
pub const TAG_TOP: i32 = 4;

/// Local edge `e` of a cell joins local vertices `LOCAL_EDGES[e]` and is
/// opposite local vertex `e`.
pub const LOCAL_EDGES: [[usize; 2]; 3] = [[1, 2], [0, 2], [0, 1]];

#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    /// Endpoints, ascending.
    pub vertices: [usize; 2],
    /// Owner (lower cell index) and, for interior facets, the neighbour.
    pub cells: (usize, Option<usize>),
}

impl Facet {
    pub fn is_boundary(&self) -> bool {
        self.cells.1.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    cells: Vec<[usize; 3]>,
    facets: Vec<Facet>,
    cell_facets: Vec<[usize; 3]>,
    boundary_tags: BTreeMap<usize, i32>,
}

impl Mesh {
    /// Builds a mesh from raw vertices and cells. Clockwise cells are
    /// reoriented; degenerate cells are rejected. `tag` labels every boundary
    /// facet from its endpoint coordinates and vertex ids.
    pub fn from_parts<F>(vertices: Vec<[f64; 2]>, mut cells: Vec<[usize; 3]>, tag: F) -> Result<Self>
    where
        F: Fn([f64; 2], [f64; 2], [usize; 2]) -> Option<i32>,
    {
        if cells.is_empty() {
            return Err(SosmError::InvalidMesh("no cells".into()));
        }
        for (c, cell) in cells.iter_mut().enumerate() {
            for &v in cell.iter() {
                if v >= vertices.len() {
                    return Err(SosmError::OutOfRange { index: v, len: vertices.len() });
                }
            }
            let a = signed_area(&vertices, cell);
            if a.abs() < 1e-300 {
                return Err(SosmError::InvalidMesh(format!("cell {c} is degenerate")));
            }
            if a < 0.0 {
                cell.swap(1, 2);
            }
        }

        let mut lookup: HashMap<[usize; 2], usize> = HashMap::new();
        let mut facets: Vec<Facet> = Vec::new();
        let mut cell_facets = vec![[0usize; 3]; cells.len()];
        for (c, cell) in cells.iter().enumerate() {
            for (e, pair) in LOCAL_EDGES.iter().enumerate() {
                let (a, b) = (cell[pair[0]], cell[pair[1]]);
                let key = if a < b { [a, b] } else { [b, a] };
                let f = *lookup.entry(key).or_insert_with(|| {
                    facets.push(Facet { vertices: key, cells: (c, None) });
                    facets.len() - 1
                });
                if facets[f].cells.0 != c {
                    if facets[f].cells.1.is_some() {
                        return Err(SosmError::InvalidMesh(format!(
                            "edge {key:?} shared by more than two cells"
                        )));
                    }
                    facets[f].cells.1 = Some(c);
                }
                cell_facets[c][e] = f;
            }
        }

        let mut boundary_tags = BTreeMap::new();
        for (f, facet) in facets.iter().enumerate() {
            if facet.is_boundary() {
                let [a, b] = facet.vertices;
                let t = tag(vertices[a], vertices[b], facet.vertices).ok_or_else(|| {
                    SosmError::InvalidMesh(format!("boundary facet {f} has no tag"))
                })?;
                boundary_tags.insert(f, t);
            }
        }

        Ok(Mesh { vertices, cells, facets, cell_facets, boundary_tags })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn cell_facets(&self, cell: usize) -> [usize; 3] {
        self.cell_facets[cell]
    }

    pub fn boundary_tags(&self) -> &BTreeMap<usize, i32> {
        &self.boundary_tags
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn cell_coords(&self, cell: usize) -> [[f64; 2]; 3] {
        let c = self.cells[cell];
        [self.vertices[c[0]], self.vertices[c[1]], self.vertices[c[2]]]
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        signed_area(&self.vertices, &self.cells[cell])
    }

    pub fn facet_length(&self, facet: usize) -> f64 {
        let [a, b] = self.facets[facet].vertices;
        dist(self.vertices[a], self.vertices[b])
    }

    /// Unit global normal of a facet.
    pub fn facet_normal(&self, facet: usize) -> [f64; 2] {
        let [a, b] = self.facets[facet].vertices;
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        let t = [pb[0] - pa[0], pb[1] - pa[1]];
        let l = (t[0] * t[0] + t[1] * t[1]).sqrt();
        [t[1] / l, -t[0] / l]
    }

    /// `+1` if the global normal of local edge `local` points out of `cell`.
    pub fn facet_sign(&self, cell: usize, local: usize) -> f64 {
        let c = self.cells[cell];
        // counterclockwise traversal of local edge e runs from vertex e+1 to e+2
        let from = c[(local + 1) % 3];
        let to = c[(local + 2) % 3];
        if from < to {
            1.0
        } else {
            -1.0
        }
    }

    /// Outward unit normal of local edge `local` of `cell`.
    pub fn outward_normal(&self, cell: usize, local: usize) -> [f64; 2] {
        let n = self.facet_normal(self.cell_facets[cell][local]);
        let s = self.facet_sign(cell, local);
        [s * n[0], s * n[1]]
    }

    pub fn boundary_facets(&self) -> impl Iterator<Item = (usize, i32)> + '_ {
        self.boundary_tags.iter().map(|(&f, &t)| (f, t))
    }

    pub fn is_boundary_vertex(&self) -> Vec<bool> {
        let mut flags = vec![false; self.vertices.len()];
        for (&f, _) in &self.boundary_tags {
            for v in self.facets[f].vertices {
                flags[v] = true;
            }
        }
        flags
    }

    /// Maximum cell diameter (longest edge).
    pub fn mesh_size(&self) -> f64 {
        (0..self.facets.len()).map(|f| self.facet_length(f)).fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.cells.len()).map(|c| self.cell_area(c)).sum()
    }

    /// Splits every cell into four through edge midpoints. Boundary tags are
    /// inherited from the parent facet.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let nv = self.vertices.len();
        let mut vertices = self.vertices.clone();
        for facet in &self.facets {
            let [a, b] = facet.vertices;
            let (pa, pb) = (self.vertices[a], self.vertices[b]);
            vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        }
        let mut cells = Vec::with_capacity(4 * self.cells.len());
        for (c, cell) in self.cells.iter().enumerate() {
            let f = self.cell_facets[c];
            // midpoint opposite local vertex i
            let m = [nv + f[0], nv + f[1], nv + f[2]];
            let [a, b, d] = *cell;
            cells.push([a, m[2], m[1]]);
            cells.push([m[2], b, m[0]]);
            cells.push([m[1], m[0], d]);
            cells.push([m[2], m[0], m[1]]);
        }
        let tags = &self.boundary_tags;
        Mesh::from_parts(vertices, cells, |_, _, pair| {
            let mid = pair.iter().copied().find(|&v| v >= nv)?;
            tags.get(&(mid - nv)).copied()
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "VERT {}", self.vertices.len())?;
        for p in &self.vertices {
            writeln!(w, "{} {}", p[0], p[1])?;
        }
        writeln!(w, "CELL {}", self.cells.len())?;
        for c in &self.cells {
            writeln!(w, "{} {} {}", c[0], c[1], c[2])?;
        }
        writeln!(w, "BFACET {}", self.boundary_tags.len())?;
        for (&f, &t) in &self.boundary_tags {
            let [a, b] = self.facets[f].vertices;
            writeln!(w, "{a} {b} {t}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(file)
    }

    /// Reads the plain-text format written by [`Mesh::write_to`].
    pub fn read_from<R: BufRead>(r: R) -> Result<Mesh> {
        let mut tokens: Vec<String> = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        let mut it = tokens.into_iter();
        expect(&mut it, "VERT")?;
        let nv: usize = parse_tok(&mut it)?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            vertices.push([parse_tok::<f64>(&mut it)?, parse_tok::<f64>(&mut it)?]);
        }
        expect(&mut it, "CELL")?;
        let nc: usize = parse_tok(&mut it)?;
        let mut cells = Vec::with_capacity(nc);
        for _ in 0..nc {
            cells.push([parse_tok(&mut it)?, parse_tok(&mut it)?, parse_tok(&mut it)?]);
        }
        expect(&mut it, "BFACET")?;
        let nb: usize = parse_tok(&mut it)?;
        let mut tags = HashMap::new();
        for _ in 0..nb {
            let a: usize = parse_tok(&mut it)?;
            let b: usize = parse_tok(&mut it)?;
            let t: i32 = parse_tok(&mut it)?;
            tags.insert(if a < b { [a, b] } else { [b, a] }, t);
        }
        Mesh::from_parts(vertices, cells, |_, _, pair| tags.get(&pair).copied())
    }

    pub fn load(path: &Path) -> Result<Mesh> {
        Mesh::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn expect(it: &mut impl Iterator<Item = String>, name: &str) -> Result<()> {
    match it.next() {
        Some(t) if t == name => Ok(()),
        other => Err(SosmError::Parse(format!("expected {name}, found {other:?}"))),
    }
}

fn parse_tok<T: std::str::FromStr>(it: &mut impl Iterator<Item = String>) -> Result<T> {
    let t = it.next().ok_or_else(|| SosmError::Parse("unexpected end of file".into()))?;
    t.parse().map_err(|_| SosmError::Parse(format!("bad token {t:?}")))
}

fn signed_area(vertices: &[[f64; 2]], cell: &[usize; 3]) -> f64 {
    let [a, b, c] = [vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

/// Structured mesh of the unit square with `m` intervals per side. Every
/// square is cut along its lower-left to upper-right diagonal.
pub fn build_unit_square(m: usize) -> Result<Mesh> {
    if m == 0 {
        return Err(SosmError::InvalidInput("unit square needs m >= 1".into()));
    }
    build_blocks(&[(0, 0)], m, |a, b| {
        let eps = 1e-12;
        if a[0].abs() < eps && b[0].abs() < eps {
            Some(TAG_LEFT)
        } else if (a[0] - 1.0).abs() < eps && (b[0] - 1.0).abs() < eps {
            Some(TAG_RIGHT)
        } else if a[1].abs() < eps && b[1].abs() < eps {
            Some(TAG_BOTTOM)
        } else if (a[1] - 1.0).abs() < eps && (b[1] - 1.0).abs() < eps {
            Some(TAG_TOP)
        } else {
            None
        }
    })
}

/// Union of unit blocks `[i, i+1] x [j, j+1]`, each meshed like
/// [`build_unit_square`] with `m` intervals per side.
pub fn build_blocks<F>(blocks: &[(i64, i64)], m: usize, tag: F) -> Result<Mesh>
where
    F: Fn([f64; 2], [f64; 2]) -> Option<i32>,
{
    if m == 0 || blocks.is_empty() {
        return Err(SosmError::InvalidInput("block mesh needs m >= 1 and a block".into()));
    }
    let mi = m as i64;
    let mut index: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for &(bi, bj) in blocks {
        for j in 0..=mi {
            for i in 0..=mi {
                index.entry((bj * mi + j, bi * mi + i)).or_insert(0);
            }
        }
    }
    // row-major numbering (y, then x)
    let mut vertices = Vec::with_capacity(index.len());
    for (k, (key, slot)) in index.iter_mut().enumerate() {
        *slot = k;
        vertices.push([key.1 as f64 / m as f64, key.0 as f64 / m as f64]);
    }
    let mut cells = Vec::with_capacity(2 * m * m * blocks.len());
    for &(bi, bj) in blocks {
        for j in 0..mi {
            for i in 0..mi {
                let (x, y) = (bi * mi + i, bj * mi + j);
                let v00 = index[&(y, x)];
                let v10 = index[&(y, x + 1)];
                let v11 = index[&(y + 1, x + 1)];
                let v01 = index[&(y + 1, x)];
                cells.push([v00, v10, v11]);
                cells.push([v00, v11, v01]);
            }
        }
    }
    Mesh::from_parts(vertices, cells, |a, b, _| tag(a, b))
}
