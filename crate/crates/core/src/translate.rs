//! IPN → IHDA translation: input-compatibility pruning, cell labeling,
//! detection of contradictory output labels and of global output-invariant
//! violations, and witness extraction.
//!
//! A cell's output label conjoins the labels of every place that is marked
//! or feeds a running transition with the output cubes of the running
//! transitions. When independent branches demand contradictory outputs the
//! conjunction collapses to FALSE, which is exactly what the analysis flags.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};
use thiserror::Error;

use crate::cube::{Clause, Cube, Valuation};
use crate::hda::{construct_cells, Cell, Computation, Hda, HdaError};
use crate::ipn::{Budget, Concset, IOWord, Ipn, IpnError};

/// An HDA whose cells carry (input cube, output cube) labels. Only cells
/// with a satisfiable input conjunction are stored, so the input component
/// of a label is never FALSE; the output component may be.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ihda {
    hda: Hda,
    labels: BTreeMap<Cell, (Cube, Cube)>,
}

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error(transparent)]
    Hda(#[from] HdaError),
    #[error(transparent)]
    Ipn(#[from] IpnError),
}

/// Why a cell was flagged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FindingKind {
    /// The cell's output label is FALSE.
    BotOutput,
    /// The cell's (satisfiable) output label contradicts a global clause.
    Invariant(Clause),
}

/// One flagged cell with its witness execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub cell: Cell,
    pub kind: FindingKind,
    pub witness: Computation,
    /// Concrete I/O prefix induced by the witness; stops before the target
    /// when the target's output label is FALSE.
    pub word: IOWord,
    /// The offending literal pair for FALSE outputs, e.g. ("Pusher", "!Pusher").
    pub literal_conflict: Option<(String, String)>,
    /// No flagged proper super-cell exists.
    pub maximal: bool,
}

/// Findings ordered with maximal cells first, then by cell key.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnalysisReport {
    pub findings: Vec<Finding>,
}

impl AnalysisReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn maximal(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.maximal)
    }
}

/// The label of a single cell: the conjunction of the input cubes of the
/// running transitions, and the conjunction of the labels of all marked or
/// preset places with the output cubes of the running transitions.
pub fn label_cell(ipn: &Ipn, cell: &Cell) -> (Cube, Cube) {
    let input = ipn.step_input_cube(&cell.concset);
    let corner = cell.marking.plus(&ipn.preset_step(&cell.concset));
    let output = ipn
        .marked_output(&corner)
        .conj(&ipn.step_output_cube(&cell.concset))
        .expect("same prop set");
    (input, output)
}

/// Builds the IHDA: the reachable HDA fragment restricted to cells whose
/// transition-input conjunction is satisfiable, each labeled by
/// [`label_cell`]. Cells of dimension 0 and 1 are always input compatible
/// and therefore always retained.
pub fn build_ihda(ipn: &Ipn, budget: &Budget) -> Result<Ihda, TranslateError> {
    let keep = |c: &Concset| !ipn.step_input_cube(c).is_false();
    let hda = construct_cells(ipn, budget, &keep)?;
    let labels: BTreeMap<Cell, (Cube, Cube)> = hda
        .cells()
        .map(|cell| (cell.clone(), label_cell(ipn, cell)))
        .collect();
    debug_assert!(labels.values().all(|(input, _)| !input.is_false()));
    Ok(Ihda { hda, labels })
}

impl Ihda {
    pub fn hda(&self) -> &Hda {
        &self.hda
    }

    pub fn label(&self, cell: &Cell) -> Option<&(Cube, Cube)> {
        self.labels.get(cell)
    }

    pub fn labels(&self) -> impl Iterator<Item = (&Cell, &(Cube, Cube))> {
        self.labels.iter()
    }

    /// JSON rendering of the labeled cell store in canonical order.
    pub fn cells_json(&self) -> Value {
        let cells: Vec<Value> = self
            .labels
            .iter()
            .map(|(cell, (input, output))| {
                json!({
                    "marking": self.hda.marking_json(&cell.marking),
                    "concset": self.hda.concset_json(&cell.concset),
                    "dim": cell.dim(),
                    "input": input.to_string(),
                    "output": output.to_string(),
                })
            })
            .collect();
        json!({
            "initial": self.hda.marking_json(&self.hda.initial().marking),
            "cells": cells,
        })
    }
}

/// Replaces place output labels per the `place=cube` pairs; the relabeling
/// route for imposing output restrictions on an existing model.
pub fn restrict_place_labels(ipn: &Ipn, restrictions: &[(String, Cube)]) -> Result<Ipn, IpnError> {
    let mut net = ipn.clone();
    for (place, cube) in restrictions {
        net = net.with_place_label(place, cube.clone())?;
    }
    Ok(net)
}

fn conflicting_literals(ipn: &Ipn, cell: &Cell) -> Option<(String, String)> {
    // Re-run the conjunction of label_cell contribution by contribution and
    // report the first proposition driven to both polarities.
    let outputs = ipn.outputs();
    let corner = cell.marking.plus(&ipn.preset_step(&cell.concset));
    let mut contributions: Vec<Cube> = corner
        .support()
        .map(|p| ipn.places()[p].label.clone())
        .collect();
    for (t, _) in cell.concset.support() {
        contributions.push(ipn.transitions()[t].output.clone());
    }
    let mut acc = Cube::top(outputs);
    for cube in &contributions {
        if let Some((idx, existing, incoming)) = acc.conflict_with(cube) {
            let name = outputs.name(idx);
            let render = |pol: bool| {
                if pol {
                    name.to_string()
                } else {
                    format!("!{name}")
                }
            };
            return Some((render(existing), render(incoming)));
        }
        acc = acc.conj(cube).expect("same prop set");
    }
    None
}

/// Builds the concrete I/O prefix induced by a computation: one letter per
/// step, inputs completed to false over the step's input cube, outputs
/// completed to false over its output label. A FALSE-labeled final step is
/// skipped; the conflict is reported symbolically instead.
fn witness_word(ipn: &Ipn, ihda: &Ihda, comp: &Computation) -> IOWord {
    let mut pairs = Vec::new();
    for step in &comp.steps {
        let (input, output) = ihda
            .label(step)
            .cloned()
            .unwrap_or_else(|| label_cell(ipn, step));
        if output.is_false() {
            break;
        }
        let i = input
            .complete_valuation(false)
            .expect("input labels satisfiable");
        let o = output.complete_valuation(false).expect("checked above");
        pairs.push((i, o));
    }
    IOWord { pairs }
}

/// Shortest witness computation to `cell`, with its induced I/O prefix.
pub fn witness(
    ipn: &Ipn,
    ihda: &Ihda,
    cell: &Cell,
) -> Result<Option<(Computation, IOWord)>, HdaError> {
    let comp = match ihda.hda.find_computation(cell)? {
        Some(c) => c,
        None => return Ok(None),
    };
    let word = witness_word(ipn, ihda, &comp);
    Ok(Some((comp, word)))
}

fn proper_faces(hda: &Hda, cell: &Cell) -> BTreeSet<Cell> {
    let mut out = BTreeSet::new();
    let n = hda.transition_ids().len();
    // Enumerate all (A, B) splits of sub-multisets of the concset.
    let mut splits = vec![(Concset::empty(n), Concset::empty(n))];
    for (t, mult) in cell.concset.support() {
        let mut next = Vec::new();
        for (a, b) in &splits {
            for ka in 0..=mult {
                for kb in 0..=(mult - ka) {
                    let mut a2 = a.clone();
                    let mut b2 = b.clone();
                    a2.add(t, ka);
                    b2.add(t, kb);
                    next.push((a2, b2));
                }
            }
        }
        splits = next;
    }
    for (a, b) in splits {
        if a.is_empty() && b.is_empty() {
            continue;
        }
        if let Ok(face) = hda.face(cell, &a, &b) {
            out.insert(face);
        }
    }
    out
}

fn assemble_report(
    ipn: &Ipn,
    ihda: &Ihda,
    mut flagged: Vec<(Cell, FindingKind)>,
) -> Result<AnalysisReport, HdaError> {
    // A flagged cell is maximal when it is no proper face of another flagged
    // cell (faces of faces are faces, so direct face sets suffice).
    let cells: BTreeSet<Cell> = flagged.iter().map(|(c, _)| c.clone()).collect();
    let mut covered: BTreeSet<Cell> = BTreeSet::new();
    for cell in &cells {
        for face in proper_faces(&ihda.hda, cell) {
            covered.insert(face);
        }
    }
    flagged.sort_by(|(a, ka), (b, kb)| {
        let ma = !covered.contains(a);
        let mb = !covered.contains(b);
        mb.cmp(&ma)
            .then_with(|| a.cmp(b))
            .then_with(|| format!("{ka:?}").cmp(&format!("{kb:?}")))
    });
    let mut findings = Vec::new();
    for (cell, kind) in flagged {
        let (witness, word) = match witness(ipn, ihda, &cell)? {
            Some(pair) => pair,
            None => (
                Computation {
                    initial: ihda.hda.initial().clone(),
                    steps: vec![],
                },
                IOWord { pairs: vec![] },
            ),
        };
        let literal_conflict = match kind {
            FindingKind::BotOutput => conflicting_literals(ipn, &cell),
            FindingKind::Invariant(_) => None,
        };
        findings.push(Finding {
            maximal: !covered.contains(&cell),
            cell,
            kind,
            witness,
            word,
            literal_conflict,
        });
    }
    Ok(AnalysisReport { findings })
}

/// All cells whose output label is FALSE, each with a shortest witness.
pub fn find_inconsistent(ipn: &Ipn, ihda: &Ihda) -> Result<AnalysisReport, HdaError> {
    let flagged: Vec<(Cell, FindingKind)> = ihda
        .labels
        .iter()
        .filter(|(_, (_, output))| output.is_false())
        .map(|(cell, _)| (cell.clone(), FindingKind::BotOutput))
        .collect();
    assemble_report(ipn, ihda, flagged)
}

/// Every (cell, clause) pair where the cell's output label forces the
/// negation of the whole clause. FALSE-labeled cells are reported by
/// [`find_inconsistent`] instead and skipped here.
pub fn check_invariants(
    ipn: &Ipn,
    ihda: &Ihda,
    invariants: &[Clause],
) -> Result<AnalysisReport, HdaError> {
    let mut flagged = Vec::new();
    for (cell, (_, output)) in &ihda.labels {
        if output.is_false() {
            continue;
        }
        for clause in invariants {
            if output
                .violates_clause(clause)
                .expect("clauses over outputs")
            {
                flagged.push((cell.clone(), FindingKind::Invariant(clause.clone())));
            }
        }
    }
    assemble_report(ipn, ihda, flagged)
}

impl AnalysisReport {
    pub fn to_json(&self, ipn: &Ipn, ihda: &Ihda) -> Value {
        let findings: Vec<Value> = self
            .findings
            .iter()
            .map(|f| {
                let hda = ihda.hda();
                let steps: Vec<Value> = f
                    .witness
                    .steps
                    .iter()
                    .map(|s| {
                        json!({
                            "marking": hda.marking_json(&s.marking),
                            "concset": hda.concset_json(&s.concset),
                        })
                    })
                    .collect();
                let word: Vec<Value> = f
                    .word
                    .pairs
                    .iter()
                    .map(|(i, o)| json!({"inputs": i.to_map(), "outputs": o.to_map()}))
                    .collect();
                let mut entry = json!({
                    "cell": {
                        "marking": hda.marking_json(&f.cell.marking),
                        "concset": hda.concset_json(&f.cell.concset),
                    },
                    "kind": match &f.kind {
                        FindingKind::BotOutput => "bot-output",
                        FindingKind::Invariant(_) => "invariant",
                    },
                    "maximal": f.maximal,
                    "witness": steps,
                    "word": word,
                });
                if let FindingKind::Invariant(clause) = &f.kind {
                    entry["clause"] = json!(clause.to_string());
                }
                if let Some((a, b)) = &f.literal_conflict {
                    entry["literal_conflict"] = json!([a, b]);
                }
                let _ = ipn;
                entry
            })
            .collect();
        json!({ "findings": findings })
    }

    /// Human-readable one-liner per finding, maximal cells first.
    pub fn render(&self, ipn: &Ipn) -> String {
        let mut out = String::new();
        for f in &self.findings {
            let kind = match &f.kind {
                FindingKind::BotOutput => "output label is FALSE".to_string(),
                FindingKind::Invariant(clause) => format!("violates invariant {clause}"),
            };
            let conflict = match &f.literal_conflict {
                Some((a, b)) => format!(" ({a} vs {b})"),
                None => String::new(),
            };
            let path: Vec<String> = f
                .witness
                .steps
                .iter()
                .map(|s| ipn.format_concset(&s.concset))
                .collect();
            out.push_str(&format!(
                "{} cell {} ⨯ {}: {}{}\n    witness: {}\n",
                if f.maximal { "maximal" } else { "subcell" },
                ipn.format_marking(&f.cell.marking),
                ipn.format_concset(&f.cell.concset),
                kind,
                conflict,
                if path.is_empty() {
                    "(initial cell)".to_string()
                } else {
                    path.join(" ; ")
                },
            ));
        }
        out
    }
}

/// Valuation helper for tests and the controller: the input valuation
/// completing a cell's input cube with false.
pub fn default_input(ipn: &Ipn, cell: &Cell) -> Valuation {
    label_cell(ipn, cell)
        .0
        .complete_valuation(false)
        .expect("input labels satisfiable")
}
