//! P1 finite-element space on the structured mesh with homogeneous Dirichlet
//! values on the top edge eliminated. The Y-inner product is the Dirichlet
//! integral over the whole square (positive definite thanks to the
//! elimination); material-weighted operators are built per subdomain.

use crate::error::{Error, Result};
use crate::la::{BandCholesky, Coo, Csr, SymBand};
use crate::mesh_fem::mesh::Mesh;

/// Element stiffness of a linear triangle; rows/cols follow the vertex order.
pub fn p1_local_stiffness(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2]) -> [[f64; 3]; 3] {
    let b = [p1[1] - p2[1], p2[1] - p0[1], p0[1] - p1[1]];
    let c = [p2[0] - p1[0], p0[0] - p2[0], p1[0] - p0[0]];
    let area2 = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (b[i] * b[j] + c[i] * c[j]) / (2.0 * area2);
        }
    }
    k
}

/// Element mass of a linear triangle.
pub fn p1_local_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

pub struct FESpace {
    pub mesh: Mesh,
    pub dof_of_vertex: Vec<Option<usize>>,
    pub vertex_of_dof: Vec<usize>,
    /// Number of free degrees of freedom.
    pub n: usize,
    /// Y-inner-product matrix (unit-coefficient stiffness over all materials).
    pub gram: Csr,
    gram_chol: BandCholesky,
    /// P1 mass on the free dofs; L2 norms of functions vanishing on the top edge.
    pub mass: Csr,
}

impl FESpace {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let nv = mesh.vertices.len();
        let mut dof_of_vertex = vec![None; nv];
        let mut vertex_of_dof = Vec::new();
        for v in 0..nv {
            // Top edge y = 1 carries the essential condition.
            if mesh.vertices[v][1] < 1.0 {
                dof_of_vertex[v] = Some(vertex_of_dof.len());
                vertex_of_dof.push(v);
            }
        }
        let n = vertex_of_dof.len();
        let gram = assemble_stiffness_raw(&mesh, &dof_of_vertex, n, None);
        let mass = assemble_mass_raw(&mesh, &dof_of_vertex, n);
        let band = SymBand::from_csr(&gram)?;
        let gram_chol = band.cholesky().map_err(|e| match e {
            Error::NotPositiveDefinite { index, pivot } => Error::Numerical(format!(
                "Y inner-product matrix is not SPD (pivot {pivot} at dof {index})"
            )),
            other => other,
        })?;
        Ok(FESpace { mesh, dof_of_vertex, vertex_of_dof, n, gram, gram_chol, mass })
    }

    /// Stiffness restricted to one material (or all of them for `None`).
    pub fn assemble_stiffness(&self, sub: Option<u8>) -> Csr {
        assemble_stiffness_raw(&self.mesh, &self.dof_of_vertex, self.n, sub)
    }

    pub fn gram_cholesky(&self) -> &BandCholesky {
        &self.gram_chol
    }

    /// Riesz representer of the functional with coefficient vector `g`.
    pub fn riesz(&self, g: &[f64]) -> Vec<f64> {
        self.gram_chol.solve(g)
    }

    pub fn y_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.gram.bilinear(a, b)
    }

    pub fn y_norm(&self, a: &[f64]) -> f64 {
        self.y_inner(a, a).max(0.0).sqrt()
    }

    pub fn l2_norm(&self, a: &[f64]) -> f64 {
        self.mass.bilinear(a, a).max(0.0).sqrt()
    }

    /// Point evaluation of a coefficient vector (Dirichlet vertices read 0).
    pub fn eval(&self, coeffs: &[f64], x: f64, y: f64) -> f64 {
        let nx = self.mesh.nx;
        let ny = self.mesh.ny;
        let fx = (x * nx as f64).clamp(0.0, nx as f64 - 1e-12);
        let fy = (y * ny as f64).clamp(0.0, ny as f64 - 1e-12);
        let i = fx.floor() as usize;
        let j = fy.floor() as usize;
        let xi = fx - i as f64;
        let eta = fy - j as f64;
        let vid = |ii: usize, jj: usize| jj * (nx + 1) + ii;
        let val = |v: usize| match self.dof_of_vertex[v] {
            Some(d) => coeffs[d],
            None => 0.0,
        };
        let f00 = val(vid(i, j));
        let f10 = val(vid(i + 1, j));
        let f01 = val(vid(i, j + 1));
        let f11 = val(vid(i + 1, j + 1));
        if xi >= eta {
            f00 * (1.0 - xi) + f10 * (xi - eta) + f11 * eta
        } else {
            f00 * (1.0 - eta) + f11 * xi + f01 * (eta - xi)
        }
    }

    /// Free dofs along the inflow edge ordered by x, as segment pairs.
    pub fn inflow_segments(&self) -> Vec<InflowSegment> {
        let mut segs: Vec<InflowSegment> = self
            .mesh
            .boundary_edges
            .iter()
            .filter(|(_, _, tag)| *tag == crate::mesh_fem::mesh::BoundaryTag::Inflow)
            .map(|&(a, b, _)| {
                let (xa, xb) = (self.mesh.vertices[a][0], self.mesh.vertices[b][0]);
                let (da, db) = (self.dof_of_vertex[a].unwrap(), self.dof_of_vertex[b].unwrap());
                if xa <= xb {
                    InflowSegment { dof_a: da, dof_b: db, xa, xb }
                } else {
                    InflowSegment { dof_a: db, dof_b: da, xa: xb, xb: xa }
                }
            })
            .collect();
        segs.sort_by(|s, t| s.xa.total_cmp(&t.xa));
        segs
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InflowSegment {
    pub dof_a: usize,
    pub dof_b: usize,
    pub xa: f64,
    pub xb: f64,
}

fn assemble_stiffness_raw(
    mesh: &Mesh,
    dof_of_vertex: &[Option<usize>],
    n: usize,
    sub: Option<u8>,
) -> Csr {
    let mut coo = Coo::new(n, n);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if let Some(s) = sub {
            if mesh.subdomain[t] != s {
                continue;
            }
        }
        let k = p1_local_stiffness(
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        );
        scatter(&mut coo, dof_of_vertex, tri, &k);
    }
    coo.to_csr()
}

fn assemble_mass_raw(mesh: &Mesh, dof_of_vertex: &[Option<usize>], n: usize) -> Csr {
    let mut coo = Coo::new(n, n);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let m = p1_local_mass(mesh.triangle_area(t));
        scatter(&mut coo, dof_of_vertex, tri, &m);
    }
    coo.to_csr()
}

fn scatter(coo: &mut Coo, dof_of_vertex: &[Option<usize>], tri: &[usize; 3], local: &[[f64; 3]; 3]) {
    for (li, &vi) in tri.iter().enumerate() {
        let Some(di) = dof_of_vertex[vi] else { continue };
        for (lj, &vj) in tri.iter().enumerate() {
            let Some(dj) = dof_of_vertex[vj] else { continue };
            coo.push(di, dj, local[li][lj]);
        }
    }
}
