//! Independent reference implementations and check suites shared by the
//! integration tests and the acceptance target.

pub mod gradcheck;
pub mod oracles;
pub mod suites;

pub use suites::Check;
