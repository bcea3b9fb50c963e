pub mod error;
pub mod expr;
pub mod lie;
pub mod matrix;
pub mod ode;
pub mod sampling;
pub mod symbols;
pub mod synthesis;
pub mod sysfile;
pub mod models;
pub mod simulate;
