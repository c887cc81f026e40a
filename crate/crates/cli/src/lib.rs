//! Configuration-driven runs of the SOSM solver: scenarios, outputs and the mixing demo.

pub mod config;
pub mod demo;
pub mod output;
pub mod run;
pub mod selftest;
