//! Shared test support: independent oracles and graph generators.

pub mod gen;
pub mod oracles;
