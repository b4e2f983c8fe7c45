//! Structured triangulation of the unit square with the three-material
//! partition used throughout: an inner block, the remaining upper half and
//! the remaining lower half. Material interfaces sit on the quarter lines, so
//! cell counts must be divisible by four for elements to align with them.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryTag {
    /// Bottom edge: inflow boundary carrying the model correction.
    Inflow,
    /// Top edge: homogeneous Dirichlet.
    Dirichlet,
    /// Left and right edges: homogeneous Neumann.
    Neumann,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    /// Vertex coordinates, id = j * (nx + 1) + i.
    pub vertices: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Material id per triangle: 0 lower background, 1 inner block, 2 upper background.
    pub subdomain: Vec<u8>,
    /// Boundary edges (v0, v1) with their tag; bottom edges are ordered by x.
    pub boundary_edges: Vec<(usize, usize, BoundaryTag)>,
}

impl Mesh {
    /// Each grid cell is split along its bottom-left -> top-right diagonal.
    pub fn build(nx: usize, ny: usize) -> Result<Self> {
        if nx < 4 || ny < 4 || nx % 4 != 0 || ny % 4 != 0 {
            return Err(Error::Mesh(format!(
                "cell counts must be >= 4 and divisible by 4, got {nx} x {ny}"
            )));
        }
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([i as f64 / nx as f64, j as f64 / ny as f64]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        let mut subdomain = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let quads = [
                    [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)],
                    [vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)],
                ];
                for tri in quads {
                    let cx = (vertices[tri[0]][0] + vertices[tri[1]][0] + vertices[tri[2]][0]) / 3.0;
                    let cy = (vertices[tri[0]][1] + vertices[tri[1]][1] + vertices[tri[2]][1]) / 3.0;
                    let sub = if cx > 0.25 && cx < 0.75 && cy > 0.25 && cy < 0.75 {
                        1
                    } else if cy > 0.5 {
                        2
                    } else {
                        0
                    };
                    triangles.push(tri);
                    subdomain.push(sub);
                }
            }
        }
        let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
        for i in 0..nx {
            boundary_edges.push((vid(i, 0), vid(i + 1, 0), BoundaryTag::Inflow));
        }
        for i in 0..nx {
            boundary_edges.push((vid(i, ny), vid(i + 1, ny), BoundaryTag::Dirichlet));
        }
        for j in 0..ny {
            boundary_edges.push((vid(0, j), vid(0, j + 1), BoundaryTag::Neumann));
            boundary_edges.push((vid(nx, j), vid(nx, j + 1), BoundaryTag::Neumann));
        }
        Ok(Mesh { nx, ny, vertices, triangles, subdomain, boundary_edges })
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let pc = self.vertices[c];
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn subdomain_area(&self, sub: u8) -> f64 {
        (0..self.triangles.len())
            .filter(|&t| self.subdomain[t] == sub)
            .map(|t| self.triangle_area(t))
            .sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nx": self.nx,
            "ny": self.ny,
            "vertices": self.vertices,
            "triangles": self.triangles,
            "subdomain": self.subdomain,
            "boundary_edges": self.boundary_edges,
        })
    }
}
