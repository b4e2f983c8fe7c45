//! Pointwise-like sensor functionals: normalized Gaussian weights integrated
//! against FE functions by per-element quadrature.

use crate::mesh_fem::quadrature::TRI_DEGREE4;
use crate::mesh_fem::space::FESpace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSensor {
    pub center: [f64; 2],
    pub sigma: f64,
}

impl GaussianSensor {
    pub fn weight(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let s2 = self.sigma * self.sigma;
        (-(dx * dx + dy * dy) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
    }

    /// Coefficient vector of v -> int w v over the free dofs. Elements whose
    /// bounding box is farther than 8 sigma from the center are skipped; the
    /// neglected weight is below 1e-14 of the total.
    pub fn assemble(&self, space: &FESpace) -> Vec<f64> {
        let mut g = vec![0.0; space.n];
        let cutoff = 8.0 * self.sigma;
        for (t, tri) in space.mesh.triangles.iter().enumerate() {
            let ps = [
                space.mesh.vertices[tri[0]],
                space.mesh.vertices[tri[1]],
                space.mesh.vertices[tri[2]],
            ];
            let (mut xmin, mut xmax) = (ps[0][0], ps[0][0]);
            let (mut ymin, mut ymax) = (ps[0][1], ps[0][1]);
            for p in &ps[1..] {
                xmin = xmin.min(p[0]);
                xmax = xmax.max(p[0]);
                ymin = ymin.min(p[1]);
                ymax = ymax.max(p[1]);
            }
            let ddx = (self.center[0] - xmax).max(xmin - self.center[0]).max(0.0);
            let ddy = (self.center[1] - ymax).max(ymin - self.center[1]).max(0.0);
            if ddx * ddx + ddy * ddy > cutoff * cutoff {
                continue;
            }
            let area = space.mesh.triangle_area(t);
            for (bary, w) in TRI_DEGREE4 {
                let x = bary[0] * ps[0][0] + bary[1] * ps[1][0] + bary[2] * ps[2][0];
                let y = bary[0] * ps[0][1] + bary[1] * ps[1][1] + bary[2] * ps[2][1];
                let wq = w * area * self.weight(x, y);
                for (l, &v) in tri.iter().enumerate() {
                    if let Some(d) = space.dof_of_vertex[v] {
                        g[d] += wq * bary[l];
                    }
                }
            }
        }
        g
    }

    /// g applied to a coefficient vector.
    pub fn apply(&self, space: &FESpace, coeffs: &[f64]) -> f64 {
        let g = self.assemble(space);
        g.iter().zip(coeffs.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Regular grid of sensor centers on (lo, hi)^2, row-major in (x, y).
pub fn sensor_grid(n_per_side: usize, lo: f64, hi: f64, sigma: f64) -> Vec<GaussianSensor> {
    let mut sensors = Vec::with_capacity(n_per_side * n_per_side);
    for jy in 0..n_per_side {
        for ix in 0..n_per_side {
            let fx = if n_per_side == 1 { 0.5 } else { ix as f64 / (n_per_side - 1) as f64 };
            let fy = if n_per_side == 1 { 0.5 } else { jy as f64 / (n_per_side - 1) as f64 };
            sensors.push(GaussianSensor {
                center: [lo + (hi - lo) * fx, lo + (hi - lo) * fy],
                sigma,
            });
        }
    }
    sensors
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_fem::mesh::Mesh;
    use approx::assert_relative_eq;

    #[test]
    fn unit_mass_on_a_resolved_sensor() {
        // sigma well above h: quadrature resolves the weight, so applying the
        // functional to the constant 1 recovers 1 (the top-edge ramp is far
        // from the sensor support).
        let space = FESpace::new(Mesh::build(32, 32).unwrap()).unwrap();
        let sensor = GaussianSensor { center: [0.5, 0.45], sigma: 0.05 };
        let ones = vec![1.0; space.n];
        assert_relative_eq!(sensor.apply(&space, &ones), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn second_moment_identity_drives_convergence() {
        // For v = x^2 + y^2 the exact value is |c|^2 + 2 sigma^2 (Gaussian
        // moments); interpolation error is O(h^2), so halving h roughly
        // quarters the error.
        let sensor = GaussianSensor { center: [0.5, 0.45], sigma: 0.05 };
        let exact = 0.5 * 0.5 + 0.45 * 0.45 + 2.0 * 0.05 * 0.05;
        let mut errors = Vec::new();
        for n in [16usize, 32, 64] {
            let space = FESpace::new(Mesh::build(n, n).unwrap()).unwrap();
            let v: Vec<f64> = space
                .vertex_of_dof
                .iter()
                .map(|&vt| {
                    let [x, y] = space.mesh.vertices[vt];
                    x * x + y * y
                })
                .collect();
            errors.push((sensor.apply(&space, &v) - exact).abs());
        }
        let rate1 = (errors[0] / errors[1]).log2();
        let rate2 = (errors[1] / errors[2]).log2();
        assert!(rate1 > 1.5 && rate1 < 2.6, "rate1 = {rate1}, errors = {errors:?}");
        assert!(rate2 > 1.5 && rate2 < 2.6, "rate2 = {rate2}, errors = {errors:?}");
    }

    #[test]
    fn grid_covers_the_requested_box() {
        let sensors = sensor_grid(3, 0.2, 0.8, 0.01);
        assert_eq!(sensors.len(), 9);
        assert_eq!(sensors[0].center, [0.2, 0.2]);
        assert_eq!(sensors[8].center, [0.8, 0.8]);
        assert_eq!(sensors[5].center, [0.8, 0.5]);
    }
}
