//! Check routines shared by the unit-level test targets and the acceptance
//! suite. Each returns a measurement; the caller decides what passes.

#![allow(dead_code)]

pub mod conv;
pub mod gradients;
