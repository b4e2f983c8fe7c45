//! Meshing, P1 finite elements, edge trace space and sensor functionals.

pub mod functionals;
pub mod mesh;
pub mod quadrature;
pub mod space;
pub mod trace;

pub use functionals::{sensor_grid, GaussianSensor};
pub use mesh::{BoundaryTag, Mesh};
pub use space::{p1_local_mass, p1_local_stiffness, FESpace};
pub use trace::{basis_value, shifted_legendre, BoundaryTraceSpace};
