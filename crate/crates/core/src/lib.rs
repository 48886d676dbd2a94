pub mod codes;
pub mod measures;
pub mod bits;
pub mod dioph;
pub mod dprm;
pub mod cli;
