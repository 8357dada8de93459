pub mod adapt;
pub mod corpus;
pub mod embedstore;
pub mod evalsuite;
pub mod exec;
pub mod mockhttp;
pub mod retry;
pub mod translate;

pub use exec::Execution;
