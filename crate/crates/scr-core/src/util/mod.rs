//! Seeded RNG streams, content hashing, and small shared I/O helpers.

pub mod csv;
pub mod hashing;
pub mod rng;
