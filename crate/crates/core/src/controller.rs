//! The concurrent-step controller: a cyclic executor that turns each input
//! valuation into an output valuation by selecting a maximal admissible step
//! in the model, plus the word-conformance checker for the two-counter
//! concurrent-step semantics and the TCP client side of the closed loop.

use std::collections::{BTreeSet, VecDeque};
use std::io::BufReader;
use std::net::TcpStream;

use thiserror::Error;

use crate::cube::{Clause, Valuation};
use crate::hda::Cell;
use crate::ipn::{Concset, IOWord, Ipn, Marking};
use crate::plantsim::{recv_msg, send_msg, WireMsg};
use crate::trace::TraceRecord;
use crate::translate::{check_invariants, find_inconsistent, label_cell, AnalysisReport, Ihda};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerState {
    pub marking: Marking,
    pub cycle: u64,
    pub last_step: Concset,
    pub halted_reason: Option<String>,
}

/// Word/path counter pair of the two-counter semantics. Each checker move
/// increments at least one counter and neither ever decreases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cursor {
    pub n0: usize,
    pub n1: usize,
}

/// How the two counter rules are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterMode {
    /// A wait consumes a letter holding the path cell; a step consumes a
    /// letter moving through the step cell to its upper corner.
    Interpreted,
    /// The rules exactly as stated: either only the path counter advances
    /// (no letter consumed) or both advance. Repeated waits at one cell are
    /// not expressible in this reading.
    StrictIvA,
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("model rejected: {0}")]
    Refusal(Refusal),
    #[error("controller halted: {0}")]
    Halted(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("analysis failed: {0}")]
    Analysis(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Preflight refusal: the model carries contradictory or invariant-violating
/// cells and may not be executed without an explicit override.
#[derive(Debug)]
pub struct Refusal {
    pub inconsistent: AnalysisReport,
    pub violations: AnalysisReport,
}

impl std::fmt::Display for Refusal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} contradictory and {} invariant-violating cells ({} maximal)",
            self.inconsistent.findings.len(),
            self.violations.findings.len(),
            self.inconsistent.maximal().count() + self.violations.maximal().count(),
        )
    }
}

/// Refuses to start a controller on a model with findings.
pub fn preflight(ipn: &Ipn, ihda: &Ihda, invariants: &[Clause]) -> Result<(), ControlError> {
    let inconsistent =
        find_inconsistent(ipn, ihda).map_err(|e| ControlError::Analysis(e.to_string()))?;
    let violations = check_invariants(ipn, ihda, invariants)
        .map_err(|e| ControlError::Analysis(e.to_string()))?;
    if inconsistent.is_empty() && violations.is_empty() {
        Ok(())
    } else {
        Err(ControlError::Refusal(Refusal {
            inconsistent,
            violations,
        }))
    }
}

/// The cyclic executor. Holds the net, the configured output invariants and
/// the evolving state; one [`StepController::cycle`] call per control cycle.
#[derive(Debug, Clone)]
pub struct StepController<'a> {
    ipn: &'a Ipn,
    invariants: Vec<Clause>,
    pub state: ControllerState,
}

impl<'a> StepController<'a> {
    pub fn new(ipn: &'a Ipn, invariants: Vec<Clause>) -> Self {
        StepController {
            ipn,
            invariants,
            state: ControllerState {
                marking: ipn.initial_marking(),
                cycle: 0,
                last_step: Concset::empty(ipn.transitions().len()),
                halted_reason: None,
            },
        }
    }

    pub fn ipn(&self) -> &Ipn {
        self.ipn
    }

    /// Greedy-maximal step selection: walk the enabled transitions in
    /// declared order and add each (with multiplicity while tokens last) as
    /// long as the tokens suffice jointly, the input valuation satisfies the
    /// growing input conjunction, the candidate cell's output label stays
    /// satisfiable and no configured invariant clause is violated. Returns
    /// the empty step (wait) when nothing is enabled.
    pub fn select_step(&self, m: &Marking, i: &Valuation) -> Concset {
        let n = self.ipn.transitions().len();
        let mut step = Concset::empty(n);
        for t in self.ipn.enabled(m, i) {
            loop {
                let mut candidate = step.clone();
                candidate.add(t, 1);
                if !m.covers(&self.ipn.preset_step(&candidate)) {
                    break;
                }
                let cell = Cell {
                    marking: m.minus(&self.ipn.preset_step(&candidate)),
                    concset: candidate.clone(),
                };
                let (input, output) = label_cell(self.ipn, &cell);
                if !i.satisfies(&input).unwrap_or(false) || output.is_false() {
                    break;
                }
                if self
                    .invariants
                    .iter()
                    .any(|cl| output.violates_clause(cl).unwrap_or(false))
                {
                    break;
                }
                step = candidate;
            }
        }
        step
    }

    /// One control cycle: select a step, emit the default-false completion
    /// of its cell's output label, advance the marking. A FALSE output label
    /// is a hard halt; it means verification was bypassed.
    pub fn cycle(&mut self, i: &Valuation) -> Result<Valuation, ControlError> {
        let m = self.state.marking.clone();
        let step = self.select_step(&m, i);
        let cell = Cell {
            marking: m.minus(&self.ipn.preset_step(&step)),
            concset: step.clone(),
        };
        let (_, output) = label_cell(self.ipn, &cell);
        if output.is_false() {
            let reason = format!(
                "output label of step {} at {} is FALSE",
                self.ipn.format_concset(&step),
                self.ipn.format_marking(&m),
            );
            self.state.halted_reason = Some(reason.clone());
            return Err(ControlError::Halted(reason));
        }
        let o = output.complete_valuation(false).expect("not FALSE");
        debug_assert!(o.satisfies(&output).unwrap());
        self.state.marking = self
            .ipn
            .fire_step(&m, &step)
            .expect("selected step is token-enabled");
        self.state.last_step = step;
        self.state.cycle += 1;
        Ok(o)
    }
}

fn compatible(
    letter: &(Valuation, Valuation),
    label: &(crate::cube::Cube, crate::cube::Cube),
) -> bool {
    letter.0.satisfies(&label.0).unwrap_or(false) && letter.1.satisfies(&label.1).unwrap_or(false)
}

/// Whether some computation consumes the whole word under the chosen counter
/// reading, keeping every visited (letter, cell) pair compatible. Search over
/// (cursor, cell) states starting at the initial 0-cell.
pub fn conforms(ihda: &Ihda, w: &IOWord, mode: CounterMode) -> bool {
    match mode {
        CounterMode::Interpreted => conforms_interpreted(ihda, w),
        CounterMode::StrictIvA => conforms_strict(ihda, w),
    }
}

fn conforms_interpreted(ihda: &Ihda, w: &IOWord) -> bool {
    let hda = ihda.hda();
    let n_trans = hda.transition_ids().len();
    let start = hda.initial().marking.clone();
    let mut seen: BTreeSet<(usize, Marking)> = BTreeSet::new();
    let mut queue: VecDeque<(Cursor, Marking)> = VecDeque::new();
    seen.insert((0, start.clone()));
    queue.push_back((Cursor { n0: 0, n1: 0 }, start));
    while let Some((cursor, m)) = queue.pop_front() {
        if cursor.n0 == w.len() {
            return true;
        }
        let letter = &w.pairs[cursor.n0];
        // Step: consume the letter at a step cell starting here, landing on
        // its upper corner (path advances past the step cell and the corner).
        let mut step_enabled = false;
        for cell in hda.cells_at_corner(&m) {
            if cell.dim() == 0 {
                continue;
            }
            let label = ihda.label(cell).expect("stored cells are labeled");
            if !letter.0.satisfies(&label.0).unwrap_or(false) {
                continue;
            }
            step_enabled = true;
            if letter.1.satisfies(&label.1).unwrap_or(false) {
                let next = hda.upper_corner(cell).marking;
                if seen.insert((cursor.n0 + 1, next.clone())) {
                    queue.push_back((
                        Cursor {
                            n0: cursor.n0 + 1,
                            n1: cursor.n1 + 2,
                        },
                        next,
                    ));
                }
            }
        }
        // Wait: consume the letter at the current 0-cell, legal only when no
        // step at this corner is input-enabled (maximal progress).
        if !step_enabled {
            let zero = Cell {
                marking: m.clone(),
                concset: Concset::empty(n_trans),
            };
            if let Some(label) = ihda.label(&zero) {
                if compatible(letter, label) && seen.insert((cursor.n0 + 1, m.clone())) {
                    queue.push_back((
                        Cursor {
                            n0: cursor.n0 + 1,
                            n1: cursor.n1,
                        },
                        m.clone(),
                    ));
                }
            }
        }
    }
    false
}

fn conforms_strict(ihda: &Ihda, w: &IOWord) -> bool {
    let hda = ihda.hda();
    if w.is_empty() {
        return true;
    }
    let initial = hda.initial().clone();
    if !compatible(
        &w.pairs[0],
        ihda.label(&initial).expect("initial is labeled"),
    ) {
        return false;
    }
    let mut seen: BTreeSet<(usize, Cell)> = BTreeSet::new();
    let mut queue: VecDeque<(Cursor, Cell)> = VecDeque::new();
    seen.insert((0, initial.clone()));
    queue.push_back((Cursor { n0: 0, n1: 0 }, initial));
    while let Some((cursor, at)) = queue.pop_front() {
        if cursor.n0 == w.len() {
            return true;
        }
        // Path successors alternate: a 0-cell opens any step at its corner,
        // a step cell closes onto its upper corner.
        let nexts: Vec<Cell> = if at.dim() == 0 {
            hda.cells_at_corner(&at.marking)
                .iter()
                .filter(|c| c.dim() > 0)
                .cloned()
                .collect()
        } else {
            vec![hda.upper_corner(&at)]
        };
        for next in nexts {
            let label = ihda.label(&next).expect("stored cells are labeled");
            // Rule: only the path counter advances; the current letter must
            // stay compatible with the new cell.
            if cursor.n0 < w.len()
                && compatible(&w.pairs[cursor.n0], label)
                && seen.insert((cursor.n0, next.clone()))
            {
                queue.push_back((
                    Cursor {
                        n0: cursor.n0,
                        n1: cursor.n1 + 1,
                    },
                    next.clone(),
                ));
            }
            // Rule: both counters advance, consuming the current letter.
            let n0 = cursor.n0 + 1;
            let ok = n0 == w.len() || compatible(&w.pairs[n0], label);
            if ok && seen.insert((n0, next.clone())) {
                queue.push_back((
                    Cursor {
                        n0,
                        n1: cursor.n1 + 1,
                    },
                    next,
                ));
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub max_cycles: u64,
    /// Send bye once the marking has left and come back to the initial one.
    pub stop_on_return: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_cycles: 10_000,
            stop_on_return: false,
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub cycles: u64,
    pub final_marking: Marking,
    pub returned_to_initial: bool,
    pub trace: Vec<TraceRecord>,
    pub server_reason: Option<String>,
    pub faults: Vec<(u64, String)>,
}

/// Client side of the closed loop. Connects over an established stream,
/// validates the handshake against the model's proposition sets and runs
/// cycles until a stop condition or the server says bye. Preflight is the
/// caller's responsibility (it needs the IHDA; this loop does not).
pub fn run_client(
    ipn: &Ipn,
    invariants: Vec<Clause>,
    stream: TcpStream,
    opts: &RunOptions,
) -> Result<RunReport, ControlError> {
    let mut stream = stream;
    let mut reader = BufReader::new(stream.try_clone()?);
    let hello = match recv_msg(&mut reader).map_err(|e| ControlError::Protocol(e.to_string()))? {
        Some(WireMsg::Hello { hello }) => hello,
        other => {
            return Err(ControlError::Protocol(format!(
                "expected hello, got {other:?}"
            )))
        }
    };
    let model_inputs: BTreeSet<&str> = ipn.inputs().names().iter().map(String::as_str).collect();
    let plant_inputs: BTreeSet<&str> = hello.inputs.iter().map(String::as_str).collect();
    let model_outputs: BTreeSet<&str> = ipn.outputs().names().iter().map(String::as_str).collect();
    let plant_outputs: BTreeSet<&str> = hello.outputs.iter().map(String::as_str).collect();
    if model_inputs != plant_inputs || model_outputs != plant_outputs {
        let reason = "proposition sets of plant and model differ".to_string();
        let _ = send_msg(
            &mut stream,
            &WireMsg::Bye {
                bye: reason.clone(),
            },
        );
        return Err(ControlError::Protocol(reason));
    }
    send_msg(&mut stream, &WireMsg::Ack { ack: true })
        .map_err(|e| ControlError::Protocol(e.to_string()))?;

    let mut controller = StepController::new(ipn, invariants);
    let m0 = ipn.initial_marking();
    let mut left_initial = false;
    let mut trace = Vec::new();
    let mut faults = Vec::new();
    let mut server_reason = None;

    loop {
        let msg = recv_msg(&mut reader).map_err(|e| ControlError::Protocol(e.to_string()))?;
        let (cycle, inputs, fault) = match msg {
            Some(WireMsg::Cycle {
                cycle,
                inputs,
                fault,
            }) => (cycle, inputs, fault),
            Some(WireMsg::Bye { bye }) => {
                server_reason = Some(bye);
                break;
            }
            other => {
                return Err(ControlError::Protocol(format!(
                    "expected cycle, got {other:?}"
                )))
            }
        };
        if let Some(f) = fault {
            faults.push((cycle, f));
        }
        let stop = (opts.stop_on_return && left_initial && controller.state.marking == m0)
            || controller.state.cycle >= opts.max_cycles;
        if stop {
            let _ = send_msg(
                &mut stream,
                &WireMsg::Bye {
                    bye: "controller done".to_string(),
                },
            );
            break;
        }
        let i = Valuation::from_map(ipn.inputs(), &inputs).map_err(ControlError::Protocol)?;
        let o = match controller.cycle(&i) {
            Ok(o) => o,
            Err(e) => {
                let _ = send_msg(&mut stream, &WireMsg::Bye { bye: e.to_string() });
                return Err(e);
            }
        };
        trace.push(TraceRecord {
            cycle,
            inputs: i.to_map(),
            step: ipn.concset_to_ids(&controller.state.last_step),
            outputs: o.to_map(),
            marking: ipn.marking_to_map(&controller.state.marking),
        });
        if controller.state.marking != m0 {
            left_initial = true;
        }
        send_msg(
            &mut stream,
            &WireMsg::Outputs {
                outputs: o.to_map(),
            },
        )
        .map_err(|e| ControlError::Protocol(e.to_string()))?;
    }

    Ok(RunReport {
        cycles: controller.state.cycle,
        returned_to_initial: left_initial && controller.state.marking == m0,
        final_marking: controller.state.marking.clone(),
        trace,
        server_reason,
        faults,
    })
}
