pub mod cdcheck;
pub mod cli;
pub mod disintegration;
pub mod expr;
pub mod hamiltonian;
pub mod structure;
