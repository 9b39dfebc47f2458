//! Anonymous precubical sets and higher-dimensional automata built from a
//! Petri net. A cell is a pair (marking, concset): the marking holds the
//! tokens not engaged in any firing, the concset the transitions currently
//! running. Face maps are computed from the net arithmetic rather than
//! stored, so the cell store plus the net skeleton is the whole structure.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde_json::{json, Value};
use thiserror::Error;

use crate::ipn::{Budget, BudgetError, Concset, Ipn, Marking};

/// A cell of the precubical set. Its dimension is the total multiplicity of
/// the concset; 0-cells are plain markings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub marking: Marking,
    pub concset: Concset,
}

impl Cell {
    pub fn dim(&self) -> u32 {
        self.concset.size()
    }
}

#[derive(Debug, Error)]
pub enum HdaError {
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error("face multisets exceed the cell's concset")]
    FaceOutOfRange,
    #[error("cell is not stored in the automaton")]
    UnknownCell,
}

/// The net skeleton an HDA keeps for computing faces and rendering names.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Skeleton {
    place_ids: Vec<String>,
    transition_ids: Vec<String>,
    pre: Vec<Marking>,
    post: Vec<Marking>,
}

impl Skeleton {
    fn of(ipn: &Ipn) -> Self {
        Skeleton {
            place_ids: ipn.places().iter().map(|p| p.id.clone()).collect(),
            transition_ids: ipn.transitions().iter().map(|t| t.id.clone()).collect(),
            pre: (0..ipn.transitions().len())
                .map(|t| ipn.preset(t))
                .collect(),
            post: (0..ipn.transitions().len())
                .map(|t| ipn.postset(t))
                .collect(),
        }
    }

    fn preset_step(&self, c: &Concset) -> Marking {
        let mut m = Marking::zero(self.place_ids.len());
        for (t, mult) in c.support() {
            for _ in 0..mult {
                m = m.plus(&self.pre[t]);
            }
        }
        m
    }

    fn postset_step(&self, c: &Concset) -> Marking {
        let mut m = Marking::zero(self.place_ids.len());
        for (t, mult) in c.support() {
            for _ in 0..mult {
                m = m.plus(&self.post[t]);
            }
        }
        m
    }
}

/// A higher-dimensional automaton over the transitions of a net, with a
/// single initial 0-cell. Iteration over cells is lexicographic on
/// (marking, concset), so reports and exports are reproducible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hda {
    skel: Skeleton,
    cells: BTreeSet<Cell>,
    initial: Cell,
    by_corner: BTreeMap<Marking, Vec<Cell>>,
}

/// An alternating concurrent-step computation: the initial 0-cell followed
/// by the step cells; intermediate 0-cells are the corners of the steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Computation {
    pub initial: Cell,
    pub steps: Vec<Cell>,
}

impl Computation {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Final cell: the last step, or the initial 0-cell for the empty
    /// computation.
    pub fn target(&self) -> &Cell {
        self.steps.last().unwrap_or(&self.initial)
    }
}

/// Reachability graph computed directly on the net, kept independent of the
/// HDA construction so the two can cross-check each other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachabilityGraph {
    pub nodes: BTreeSet<Marking>,
    /// (source marking, transition index, target marking)
    pub edges: BTreeSet<(Marking, usize, Marking)>,
    pub initial: Marking,
}

/// One precubical-identity or closure violation found by
/// [`Hda::verify_precubical`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub cell: Cell,
    pub detail: String,
}

fn check_budget(net_places: &[String], m: &Marking, budget: &Budget) -> Result<(), BudgetError> {
    for p in m.support() {
        if m.count(p) > budget.max_tokens_per_place {
            return Err(BudgetError::TokenBound {
                place: net_places[p].clone(),
                count: m.count(p),
                bound: budget.max_tokens_per_place,
            });
        }
    }
    Ok(())
}

/// Explores the reachable markings of the net by single firings, then emits
/// every cell (m, c) whose corner m + •c is reachable. `keep` filters
/// concsets as they grow; growth stops along a branch once it rejects.
pub(crate) fn construct_cells(
    ipn: &Ipn,
    budget: &Budget,
    keep: &dyn Fn(&Concset) -> bool,
) -> Result<Hda, HdaError> {
    let skel = Skeleton::of(ipn);
    let m0 = ipn.initial_marking();
    check_budget(&skel.place_ids, &m0, budget)?;

    let mut reachable: BTreeSet<Marking> = BTreeSet::new();
    let mut queue: VecDeque<Marking> = VecDeque::new();
    reachable.insert(m0.clone());
    queue.push_back(m0.clone());
    while let Some(m) = queue.pop_front() {
        for t in 0..skel.transition_ids.len() {
            if m.covers(&skel.pre[t]) {
                let next = m.minus(&skel.pre[t]).plus(&skel.post[t]);
                check_budget(&skel.place_ids, &next, budget)?;
                if reachable.insert(next.clone()) {
                    if reachable.len() > budget.max_markings {
                        return Err(BudgetError::MarkingBound {
                            bound: budget.max_markings,
                        }
                        .into());
                    }
                    queue.push_back(next);
                }
            }
        }
    }

    let mut cells: BTreeSet<Cell> = BTreeSet::new();
    for corner in &reachable {
        let mut current = Concset::empty(skel.transition_ids.len());
        collect_steps(&skel, corner, 0, &mut current, keep, &mut |c| {
            cells.insert(Cell {
                marking: corner.minus(&skel.preset_step(c)),
                concset: c.clone(),
            });
        });
    }

    let initial = Cell {
        marking: m0,
        concset: Concset::empty(skel.transition_ids.len()),
    };
    Ok(Hda::assemble(skel, cells, initial))
}

fn collect_steps(
    skel: &Skeleton,
    remaining: &Marking,
    t: usize,
    current: &mut Concset,
    keep: &dyn Fn(&Concset) -> bool,
    sink: &mut dyn FnMut(&Concset),
) {
    if t == skel.transition_ids.len() {
        sink(current);
        return;
    }
    collect_steps(skel, remaining, t + 1, current, keep, sink);
    let mut rem = remaining.clone();
    let mut added = 0;
    while rem.covers(&skel.pre[t]) {
        rem = rem.minus(&skel.pre[t]);
        current.add(t, 1);
        added += 1;
        // The filter is monotone (a rejected step stays rejected when
        // grown), so the whole branch can be cut here.
        if !keep(current) {
            break;
        }
        collect_steps(skel, &rem, t + 1, current, keep, sink);
    }
    if added > 0 {
        let mut sub = Concset::empty(skel.transition_ids.len());
        sub.add(t, added);
        *current = current.minus(&sub);
    }
}

/// Translates the net into its reachable HDA fragment: all cells whose
/// lower-left corner is a reachable marking, closed under face maps.
pub fn pn_to_hda(ipn: &Ipn, budget: &Budget) -> Result<Hda, HdaError> {
    construct_cells(ipn, budget, &|_| true)
}

impl Hda {
    fn assemble(skel: Skeleton, cells: BTreeSet<Cell>, initial: Cell) -> Hda {
        let mut by_corner: BTreeMap<Marking, Vec<Cell>> = BTreeMap::new();
        for cell in &cells {
            let corner = cell.marking.plus(&skel.preset_step(&cell.concset));
            by_corner.entry(corner).or_default().push(cell.clone());
        }
        Hda {
            skel,
            cells,
            initial,
            by_corner,
        }
    }

    /// Rebuilds an automaton from raw parts. No validation is performed;
    /// [`Hda::verify_precubical`] is the consistency check.
    pub fn from_parts(ipn: &Ipn, cells: BTreeSet<Cell>, initial: Cell) -> Hda {
        Hda::assemble(Skeleton::of(ipn), cells, initial)
    }

    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: &Cell) -> bool {
        self.cells.contains(cell)
    }

    pub fn initial(&self) -> &Cell {
        &self.initial
    }

    pub fn transition_ids(&self) -> &[String] {
        &self.skel.transition_ids
    }

    pub fn place_ids(&self) -> &[String] {
        &self.skel.place_ids
    }

    pub fn dim(&self) -> u32 {
        self.cells.iter().map(Cell::dim).max().unwrap_or(0)
    }

    pub fn counts_by_dim(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for c in &self.cells {
            *counts.entry(c.dim()).or_insert(0) += 1;
        }
        counts
    }

    pub fn cells_of_dim(&self, k: u32) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(move |c| c.dim() == k)
    }

    /// The 0-cell where every transition of the cell is still unstarted.
    pub fn lower_corner(&self, cell: &Cell) -> Cell {
        Cell {
            marking: cell.marking.plus(&self.skel.preset_step(&cell.concset)),
            concset: Concset::empty(self.skel.transition_ids.len()),
        }
    }

    /// The 0-cell where every transition of the cell has terminated.
    pub fn upper_corner(&self, cell: &Cell) -> Cell {
        Cell {
            marking: cell.marking.plus(&self.skel.postset_step(&cell.concset)),
            concset: Concset::empty(self.skel.transition_ids.len()),
        }
    }

    /// Cells whose lower corner is the given marking, in canonical order.
    pub fn cells_at_corner(&self, corner: &Marking) -> &[Cell] {
        self.by_corner.get(corner).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The face map δ_{A,B}: the transitions in `a` are unstarted (their
    /// presets restored), the transitions in `b` have terminated (their
    /// postsets added). Total on stored cells by the closure invariant.
    pub fn face(&self, x: &Cell, a: &Concset, b: &Concset) -> Result<Cell, HdaError> {
        if !x.concset.covers(&a.plus(b)) {
            return Err(HdaError::FaceOutOfRange);
        }
        Ok(Cell {
            marking: x
                .marking
                .plus(&self.skel.preset_step(a))
                .plus(&self.skel.postset_step(b)),
            concset: x.concset.minus(a).minus(b),
        })
    }

    /// All ways to split a sub-multiset of `u` into an (unstart, terminate)
    /// pair, including the trivial (∅, ∅).
    fn face_splits(&self, u: &Concset) -> Vec<(Concset, Concset)> {
        let n = self.skel.transition_ids.len();
        let mut out = vec![(Concset::empty(n), Concset::empty(n))];
        for (t, mult) in u.support() {
            let mut next = Vec::new();
            for (a, b) in &out {
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
            out = next;
        }
        out
    }

    /// Exhaustively checks the precubical identity δ_{C,D}∘δ_{A,B} =
    /// δ_{A+C,B+D} on every stored cell, and that every face image is itself
    /// stored. Returns the violations found, empty on a correct construction.
    pub fn verify_precubical(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        for x in &self.cells {
            for (a, b) in self.face_splits(&x.concset) {
                let first = self.face(x, &a, &b).expect("split within concset");
                if !self.cells.contains(&first) {
                    violations.push(Violation {
                        cell: x.clone(),
                        detail: format!(
                            "face image ({:?}, {:?}) is not stored",
                            first.marking, first.concset
                        ),
                    });
                    continue;
                }
                for (c, d) in self.face_splits(&first.concset) {
                    let composed = self.face(&first, &c, &d).expect("split within concset");
                    let direct = self
                        .face(x, &a.plus(&c), &b.plus(&d))
                        .expect("split within concset");
                    if composed != direct {
                        violations.push(Violation {
                            cell: x.clone(),
                            detail: "composed faces disagree with the direct face".to_string(),
                        });
                    }
                }
            }
        }
        violations
    }

    /// Removes every cell of dimension above `k`. Faces of surviving cells
    /// are unaffected since faces only lower dimension.
    pub fn truncate(&self, k: u32) -> Hda {
        let cells = self
            .cells
            .iter()
            .filter(|c| c.dim() <= k)
            .cloned()
            .collect();
        Hda::assemble(self.skel.clone(), cells, self.initial.clone())
    }

    /// Shortest computation from the initial 0-cell whose final step cell is
    /// `target` (or whose final 0-cell is `target` when it has dimension 0).
    /// The prefix walks 1-cells only, so every witness linearizes into an
    /// ordinary firing sequence; `None` when the target is unreachable.
    pub fn find_computation(&self, target: &Cell) -> Result<Option<Computation>, HdaError> {
        if !self.cells.contains(target) {
            return Err(HdaError::UnknownCell);
        }
        let goal = if target.dim() == 0 {
            target.marking.clone()
        } else {
            self.lower_corner(target).marking
        };

        let mut prev: BTreeMap<Marking, (Marking, Cell)> = BTreeMap::new();
        let mut seen: BTreeSet<Marking> = BTreeSet::new();
        let mut queue: VecDeque<Marking> = VecDeque::new();
        let start = self.initial.marking.clone();
        seen.insert(start.clone());
        queue.push_back(start.clone());
        let mut found = start == goal;
        while let Some(m) = queue.pop_front() {
            if m == goal {
                found = true;
                break;
            }
            for cell in self.cells_at_corner(&m) {
                if cell.dim() != 1 {
                    continue;
                }
                let next = self.upper_corner(cell).marking;
                if seen.insert(next.clone()) {
                    prev.insert(next.clone(), (m.clone(), cell.clone()));
                    queue.push_back(next);
                }
            }
        }
        if !found {
            return Ok(None);
        }

        let mut steps = Vec::new();
        let mut cursor = goal;
        while cursor != start {
            let (before, step) = prev.get(&cursor).expect("path recorded").clone();
            steps.push(step);
            cursor = before;
        }
        steps.reverse();
        if target.dim() > 0 {
            steps.push(target.clone());
        }
        Ok(Some(Computation {
            initial: self.initial.clone(),
            steps,
        }))
    }

    /// Checks the alternation conditions of a computation: each step's lower
    /// corner must be the previous step's upper corner.
    pub fn validate_computation(&self, comp: &Computation) -> bool {
        if comp.initial.dim() != 0 || !self.cells.contains(&comp.initial) {
            return false;
        }
        let mut at = comp.initial.clone();
        for step in &comp.steps {
            if !self.cells.contains(step) || self.lower_corner(step) != at {
                return false;
            }
            at = self.upper_corner(step);
        }
        true
    }

    /// JSON value of the full cell store: a list of {marking, concset, dim}
    /// in canonical order.
    pub fn cells_json(&self) -> Value {
        let cells: Vec<Value> = self
            .cells
            .iter()
            .map(|c| {
                json!({
                    "marking": self.marking_json(&c.marking),
                    "concset": self.concset_json(&c.concset),
                    "dim": c.dim(),
                })
            })
            .collect();
        json!({
            "initial": self.marking_json(&self.initial.marking),
            "cells": cells,
        })
    }

    pub fn marking_json(&self, m: &Marking) -> Value {
        let map: BTreeMap<String, u32> = m
            .support()
            .map(|p| (self.skel.place_ids[p].clone(), m.count(p)))
            .collect();
        json!(map)
    }

    pub fn concset_json(&self, c: &Concset) -> Value {
        let map: BTreeMap<String, u32> = c
            .support()
            .map(|(t, k)| (self.skel.transition_ids[t].clone(), k))
            .collect();
        json!(map)
    }

    fn marking_label(&self, m: &Marking) -> String {
        let parts: Vec<String> = m
            .support()
            .map(|p| {
                if m.count(p) == 1 {
                    self.skel.place_ids[p].clone()
                } else {
                    format!("{}:{}", self.skel.place_ids[p], m.count(p))
                }
            })
            .collect();
        format!("{{{}}}", parts.join(", "))
    }

    fn concset_label(&self, c: &Concset) -> String {
        let mut parts = Vec::new();
        for (t, mult) in c.support() {
            for _ in 0..mult {
                parts.push(self.skel.transition_ids[t].clone());
            }
        }
        parts.join(", ")
    }

    /// GraphViz rendering of the k-truncation for k ≤ 2: 0-cells as nodes,
    /// 1-cells as labeled edges, 2-cells as shaded annotation boxes tied to
    /// their lower and upper corners.
    pub fn to_dot(&self, k: u32) -> String {
        let mut out = String::from("digraph hda {\n  rankdir=LR;\n  node [shape=circle];\n");
        let zero_cells: Vec<&Cell> = self.cells_of_dim(0).collect();
        let index: BTreeMap<&Cell, usize> = zero_cells
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, i))
            .collect();
        for (i, cell) in zero_cells.iter().enumerate() {
            let shape = if **cell == self.initial {
                ", shape=doublecircle"
            } else {
                ""
            };
            out.push_str(&format!(
                "  n{} [label=\"{}\"{}];\n",
                i,
                self.marking_label(&cell.marking),
                shape
            ));
        }
        if k >= 1 {
            for cell in self.cells_of_dim(1) {
                let lo = index[&self.lower_corner(cell)];
                let hi = index[&self.upper_corner(cell)];
                out.push_str(&format!(
                    "  n{} -> n{} [label=\"{}\"];\n",
                    lo,
                    hi,
                    self.concset_label(&cell.concset)
                ));
            }
        }
        if k >= 2 {
            for (i, cell) in self.cells_of_dim(2).enumerate() {
                let lo = index[&self.lower_corner(cell)];
                let hi = index[&self.upper_corner(cell)];
                out.push_str(&format!(
                    "  sq{i} [shape=box, style=filled, fillcolor=lightgrey, label=\"{}\"];\n",
                    self.concset_label(&cell.concset)
                ));
                out.push_str(&format!("  n{lo} -> sq{i} [style=dashed, dir=none];\n"));
                out.push_str(&format!("  sq{i} -> n{hi} [style=dashed, dir=none];\n"));
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Builds the reachability graph by plain breadth-first firing. This shares
/// no traversal code with [`pn_to_hda`]; the two being isomorphic on nodes,
/// edges and 0-/1-cells is a checked property, not a construction artifact.
pub fn reachability_graph(ipn: &Ipn, budget: &Budget) -> Result<ReachabilityGraph, HdaError> {
    let place_ids: Vec<String> = ipn.places().iter().map(|p| p.id.clone()).collect();
    let m0 = ipn.initial_marking();
    check_budget(&place_ids, &m0, budget)?;
    let mut nodes: BTreeSet<Marking> = BTreeSet::new();
    let mut edges: BTreeSet<(Marking, usize, Marking)> = BTreeSet::new();
    let mut queue: VecDeque<Marking> = VecDeque::new();
    nodes.insert(m0.clone());
    queue.push_back(m0.clone());
    while let Some(m) = queue.pop_front() {
        for t in 0..ipn.transitions().len() {
            if !m.covers(&ipn.preset(t)) {
                continue;
            }
            let next = ipn.fire(&m, t).expect("preset covered");
            check_budget(&place_ids, &next, budget)?;
            edges.insert((m.clone(), t, next.clone()));
            if nodes.insert(next.clone()) {
                if nodes.len() > budget.max_markings {
                    return Err(BudgetError::MarkingBound {
                        bound: budget.max_markings,
                    }
                    .into());
                }
                queue.push_back(next);
            }
        }
    }
    Ok(ReachabilityGraph {
        nodes,
        edges,
        initial: m0,
    })
}
