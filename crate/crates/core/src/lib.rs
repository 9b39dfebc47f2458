//! Interpreted Petri nets translated into interpreted higher-dimensional
//! automata, with detection of concurrency-induced output inconsistencies,
//! a concurrent-step controller and a simulated plant for closed-loop runs.
//!
//! The pipeline: parse an IPN ([`ipn`]), build the reachable HDA fragment
//! ([`hda`]), label its cells and analyze them ([`translate`]), then either
//! report findings with witnesses or execute the model against the plant
//! ([`controller`], [`plantsim`]).

pub mod controller;
pub mod cube;
pub mod hda;
pub mod ipn;
pub mod models;
pub mod plantsim;
pub mod trace;
pub mod translate;

pub use cube::{parse_clause, parse_cube, Clause, Cube, PropSet, Valuation};
pub use hda::{pn_to_hda, reachability_graph, Cell, Computation, Hda};
pub use ipn::{Budget, Concset, IOWord, Ipn, Marking};
pub use translate::{build_ihda, check_invariants, find_inconsistent, label_cell, Ihda};
