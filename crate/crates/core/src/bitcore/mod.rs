//! Packed ±1 vectors, XNOR-popcount kernels and rotations.
//!
//! Encoding: element `+1` is a set bit, `−1` a clear bit, so
//! `a·b = d − 2·popcount(a ⊕ b)`. Binarization follows `θ(x) = +1` iff
//! `x > 0`; zero maps to `−1`.

mod bitvec;
mod rotation;

pub use bitvec::{binarize, dot_bb, dot_rb, BitMatrix, BitVector, MAX_WIRE_DIM};
pub use rotation::{fwht, gbt, random_rotation, RotationKind, RotationMatrix};
