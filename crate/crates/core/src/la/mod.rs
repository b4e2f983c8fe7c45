//! Linear-algebra plumbing: sparse assembly, banded Cholesky, dense
//! (generalized) symmetric eigensolves and Gram-Schmidt.

pub mod band;
pub mod dense;
pub mod sparse;

pub use band::{BandCholesky, SymBand};
pub use dense::{
    gen_eigen_psd_range, gen_eigen_spd, mgs_orthonormalize, singular_values,
    smallest_singular_value_inf, sym_eigen_sorted,
};
pub use sparse::{Coo, Csr};
