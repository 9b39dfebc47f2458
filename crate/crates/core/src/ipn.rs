//! Interpreted Petri nets: a marked place/transition net whose places carry
//! output cubes and whose transitions carry (input cube, output cube) pairs,
//! together with the step semantics that drives everything downstream.
//!
//! Arcs are unweighted and nets are expected to be bounded; a [`Budget`]
//! guards every state-space construction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::cube::{parse_cube, Cube, PropSet, Valuation};

/// Token counts per place, indexed by declaration order. Absent places hold 0.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Marking(Vec<u32>);

impl Marking {
    pub fn zero(places: usize) -> Self {
        Marking(vec![0; places])
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        Marking(counts)
    }

    pub fn count(&self, place: usize) -> u32 {
        self.0[place]
    }

    pub fn set(&mut self, place: usize, tokens: u32) {
        self.0[place] = tokens;
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Pointwise ≥, the multiset order used for enabledness.
    pub fn covers(&self, other: &Marking) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a >= b)
    }

    pub fn plus(&self, other: &Marking) -> Marking {
        Marking(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Pointwise subtraction; caller must have checked `covers`.
    pub fn minus(&self, other: &Marking) -> Marking {
        Marking(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, _)| i)
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }
}

/// A multiset of transitions fired concurrently. Multiplicity above one means
/// autoconcurrent firing of the same transition.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Concset(Vec<u32>);

impl Concset {
    pub fn empty(transitions: usize) -> Self {
        Concset(vec![0; transitions])
    }

    pub fn singleton(transitions: usize, t: usize) -> Self {
        let mut c = Concset::empty(transitions);
        c.0[t] = 1;
        c
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        Concset(counts)
    }

    pub fn multiplicity(&self, t: usize) -> u32 {
        self.0[t]
    }

    pub fn add(&mut self, t: usize, n: u32) {
        self.0[t] += n;
    }

    /// Total multiplicity; the dimension of the cell this concset spans.
    pub fn size(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn covers(&self, other: &Concset) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a >= b)
    }

    pub fn plus(&self, other: &Concset) -> Concset {
        Concset(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn minus(&self, other: &Concset) -> Concset {
        Concset(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn support(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c))
    }
}

/// A finite prefix of an interpreted execution: one (input valuation,
/// output valuation) pair per control cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IOWord {
    pub pairs: Vec<(Valuation, Valuation)>,
}

impl IOWord {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Place {
    pub id: String,
    pub label: Cube,
    pub tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub id: String,
    pub input: Cube,
    pub output: Cube,
    /// Sorted place indices; arcs are unweighted so these are sets.
    pub pre: Vec<usize>,
    pub post: Vec<usize>,
}

/// An interpreted Petri net. Immutable after parsing; markings evolve by
/// value, so the net itself is freely shareable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ipn {
    places: Vec<Place>,
    transitions: Vec<Transition>,
    inputs: Arc<PropSet>,
    outputs: Arc<PropSet>,
}

#[derive(Debug, Error)]
pub enum IpnError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown place `{0}`")]
    UnknownPlace(String),
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("insufficient tokens to fire step (place `{0}`)")]
    InsufficientTokens(String),
    #[error("label on `{0}` is FALSE")]
    FalseLabel(String),
}

/// Guards for state-space construction over bounded nets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub max_tokens_per_place: u32,
    pub max_markings: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_tokens_per_place: 1,
            max_markings: 100_000,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BudgetError {
    #[error("place `{place}` reached {count} tokens, above the budget of {bound}")]
    TokenBound {
        place: String,
        count: u32,
        bound: u32,
    },
    #[error("marking count exceeded the budget of {bound}")]
    MarkingBound { bound: usize },
}

/// One entry of [`Ipn::successors`]: either the single wait successor or a
/// transition firing, with the output cube the step must satisfy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Successor {
    Wait {
        marking: Marking,
        output: Cube,
    },
    Fire {
        transition: usize,
        marking: Marking,
        output: Cube,
    },
}

impl Ipn {
    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn inputs(&self) -> &Arc<PropSet> {
        &self.inputs
    }

    pub fn outputs(&self) -> &Arc<PropSet> {
        &self.outputs
    }

    pub fn place_index(&self, id: &str) -> Option<usize> {
        self.places.iter().position(|p| p.id == id)
    }

    pub fn transition_index(&self, id: &str) -> Option<usize> {
        self.transitions.iter().position(|t| t.id == id)
    }

    pub fn initial_marking(&self) -> Marking {
        Marking(self.places.iter().map(|p| p.tokens).collect())
    }

    /// Replaces the output label of a place; the relabeling workflow for
    /// expressing output restrictions directly in the model.
    pub fn with_place_label(&self, place: &str, label: Cube) -> Result<Ipn, IpnError> {
        let idx = self
            .place_index(place)
            .ok_or_else(|| IpnError::UnknownPlace(place.to_string()))?;
        if label.is_false() {
            return Err(IpnError::FalseLabel(place.to_string()));
        }
        let mut net = self.clone();
        net.places[idx].label = label;
        Ok(net)
    }

    /// The preset of a single transition as a marking.
    pub fn preset(&self, t: usize) -> Marking {
        let mut m = Marking::zero(self.places.len());
        for &p in &self.transitions[t].pre {
            m.0[p] += 1;
        }
        m
    }

    pub fn postset(&self, t: usize) -> Marking {
        let mut m = Marking::zero(self.places.len());
        for &p in &self.transitions[t].post {
            m.0[p] += 1;
        }
        m
    }

    /// `•c`: the multiset sum of presets weighted by multiplicities.
    pub fn preset_step(&self, c: &Concset) -> Marking {
        let mut m = Marking::zero(self.places.len());
        for (t, mult) in c.support() {
            for &p in &self.transitions[t].pre {
                m.0[p] += mult;
            }
        }
        m
    }

    /// `c•`, the postset analogue of [`Ipn::preset_step`].
    pub fn postset_step(&self, c: &Concset) -> Marking {
        let mut m = Marking::zero(self.places.len());
        for (t, mult) in c.support() {
            for &p in &self.transitions[t].post {
                m.0[p] += mult;
            }
        }
        m
    }

    /// Transitions whose preset is covered and whose input cube the current
    /// valuation satisfies, in declaration order.
    pub fn enabled(&self, m: &Marking, i: &Valuation) -> Vec<usize> {
        self.transitions
            .iter()
            .enumerate()
            .filter(|(t, tr)| m.covers(&self.preset(*t)) && i.satisfies(&tr.input).unwrap_or(false))
            .map(|(t, _)| t)
            .collect()
    }

    /// Conjunction of the input cubes of all transitions in the step.
    /// Multiplicity does not matter: conjunction is idempotent.
    pub fn step_input_cube(&self, c: &Concset) -> Cube {
        let mut cube = Cube::top(&self.inputs);
        for (t, _) in c.support() {
            cube = cube
                .conj(&self.transitions[t].input)
                .expect("same prop set");
        }
        cube
    }

    /// Conjunction of the output cubes of all transitions in the step.
    pub fn step_output_cube(&self, c: &Concset) -> Cube {
        let mut cube = Cube::top(&self.outputs);
        for (t, _) in c.support() {
            cube = cube
                .conj(&self.transitions[t].output)
                .expect("same prop set");
        }
        cube
    }

    /// A concset is a valid concurrent step at `m` under `i` iff the marking
    /// covers the weighted preset sum and `i` satisfies the joint input cube.
    pub fn step_enabled(&self, m: &Marking, c: &Concset, i: &Valuation) -> bool {
        m.covers(&self.preset_step(c)) && i.satisfies(&self.step_input_cube(c)).unwrap_or(false)
    }

    /// `m − •c + c•`. Fails when tokens are insufficient.
    pub fn fire_step(&self, m: &Marking, c: &Concset) -> Result<Marking, IpnError> {
        let pre = self.preset_step(c);
        if !m.covers(&pre) {
            let p = (0..m.len())
                .find(|&p| m.0[p] < pre.0[p])
                .expect("some place short");
            return Err(IpnError::InsufficientTokens(self.places[p].id.clone()));
        }
        Ok(m.minus(&pre).plus(&self.postset_step(c)))
    }

    pub fn fire(&self, m: &Marking, t: usize) -> Result<Marking, IpnError> {
        self.fire_step(m, &Concset::singleton(self.transitions.len(), t))
    }

    /// Conjunction of the output labels of all marked places. May be FALSE;
    /// that is a model fault surfaced by the analysis, not an error here.
    pub fn marked_output(&self, m: &Marking) -> Cube {
        let mut cube = Cube::top(&self.outputs);
        for p in m.support() {
            cube = cube.conj(&self.places[p].label).expect("same prop set");
        }
        cube
    }

    /// All legal moves at `(m, i)`. The wait successor is offered only when
    /// no transition is enabled: the wait step requires that no transition
    /// has both a covered preset and a compatible input valuation.
    pub fn successors(&self, m: &Marking, i: &Valuation) -> Vec<Successor> {
        let enabled = self.enabled(m, i);
        if enabled.is_empty() {
            return vec![Successor::Wait {
                marking: m.clone(),
                output: self.marked_output(m),
            }];
        }
        enabled
            .into_iter()
            .map(|t| {
                let output = self
                    .marked_output(m)
                    .conj(&self.transitions[t].output)
                    .expect("same prop set");
                Successor::Fire {
                    transition: t,
                    marking: self.fire(m, t).expect("enabled transition fires"),
                    output,
                }
            })
            .collect()
    }

    /// Whether some run of wait and single-transition steps consumes the word
    /// with every output valuation satisfying the produced cube. Breadth-first
    /// over (marking, position) pairs.
    pub fn check_word_prefix(&self, w: &IOWord) -> bool {
        let mut seen: BTreeSet<(Marking, usize)> = BTreeSet::new();
        let mut queue: VecDeque<(Marking, usize)> = VecDeque::new();
        let start = (self.initial_marking(), 0usize);
        seen.insert(start.clone());
        queue.push_back(start);
        while let Some((m, pos)) = queue.pop_front() {
            if pos == w.pairs.len() {
                return true;
            }
            let (i, o) = &w.pairs[pos];
            for succ in self.successors(&m, i) {
                let (next, output) = match succ {
                    Successor::Wait { marking, output } => (marking, output),
                    Successor::Fire {
                        marking, output, ..
                    } => (marking, output),
                };
                if o.satisfies(&output).unwrap_or(false) {
                    let state = (next, pos + 1);
                    if seen.insert(state.clone()) {
                        queue.push_back(state);
                    }
                }
            }
        }
        false
    }

    /// Renders a marking as `{place: tokens, ...}` with zero entries omitted.
    pub fn format_marking(&self, m: &Marking) -> String {
        let parts: Vec<String> = m
            .support()
            .map(|p| {
                if m.count(p) == 1 {
                    self.places[p].id.clone()
                } else {
                    format!("{}:{}", self.places[p].id, m.count(p))
                }
            })
            .collect();
        format!("{{{}}}", parts.join(", "))
    }

    /// Renders a concset as a multiset of transition ids.
    pub fn format_concset(&self, c: &Concset) -> String {
        let mut parts = Vec::new();
        for (t, mult) in c.support() {
            for _ in 0..mult {
                parts.push(self.transitions[t].id.clone());
            }
        }
        format!("{{{}}}", parts.join(", "))
    }

    pub fn marking_to_map(&self, m: &Marking) -> BTreeMap<String, u32> {
        m.support()
            .map(|p| (self.places[p].id.clone(), m.count(p)))
            .collect()
    }

    pub fn concset_to_ids(&self, c: &Concset) -> Vec<String> {
        let mut ids = Vec::new();
        for (t, mult) in c.support() {
            for _ in 0..mult {
                ids.push(self.transitions[t].id.clone());
            }
        }
        ids
    }

    pub fn concset_from_ids(&self, ids: &[String]) -> Result<Concset, IpnError> {
        let mut c = Concset::empty(self.transitions.len());
        for id in ids {
            let t = self
                .transition_index(id)
                .ok_or_else(|| IpnError::UnknownTransition(id.clone()))?;
            c.add(t, 1);
        }
        Ok(c)
    }

    pub fn marking_from_map(&self, map: &BTreeMap<String, u32>) -> Result<Marking, IpnError> {
        let mut m = Marking::zero(self.places.len());
        for (id, &count) in map {
            let p = self
                .place_index(id)
                .ok_or_else(|| IpnError::UnknownPlace(id.clone()))?;
            m.set(p, count);
        }
        Ok(m)
    }
}

impl fmt::Display for Ipn {
    /// The textual model format; `Ipn::parse` reads it back.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "inputs:")?;
        for n in self.inputs.names() {
            write!(f, " {n}")?;
        }
        writeln!(f)?;
        write!(f, "outputs:")?;
        for n in self.outputs.names() {
            write!(f, " {n}")?;
        }
        writeln!(f)?;
        writeln!(f, "places:")?;
        for p in &self.places {
            write!(f, "  {}", p.id)?;
            if !p.label.is_top() {
                write!(f, " output \"{}\"", p.label)?;
            }
            if p.tokens > 0 {
                write!(f, " tokens {}", p.tokens)?;
            }
            writeln!(f)?;
        }
        writeln!(f, "transitions:")?;
        for t in &self.transitions {
            write!(f, "  {}", t.id)?;
            if !t.input.is_top() {
                write!(f, " in \"{}\"", t.input)?;
            }
            if !t.output.is_top() {
                write!(f, " out \"{}\"", t.output)?;
            }
            write!(f, " pre")?;
            for &p in &t.pre {
                write!(f, " {}", self.places[p].id)?;
            }
            write!(f, " post")?;
            for &p in &t.post {
                write!(f, " {}", self.places[p].id)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> IpnError {
    IpnError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Splits a line into words, keeping double-quoted spans as single tokens.
fn tokenize_line(line: usize, text: &str) -> Result<Vec<String>, IpnError> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(ch) => s.push(ch),
                    None => return Err(parse_err(line, "unterminated quote")),
                }
            }
            tokens.push(format!("\"{s}"));
        } else {
            let mut s = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() || ch == '"' {
                    break;
                }
                s.push(ch);
                chars.next();
            }
            tokens.push(s);
        }
    }
    Ok(tokens)
}

fn quoted(token: &str) -> Option<&str> {
    token.strip_prefix('"')
}

#[derive(PartialEq)]
enum Section {
    None,
    Inputs,
    Outputs,
    Places,
    Transitions,
}

struct RawPlace {
    line: usize,
    id: String,
    label: Option<String>,
    tokens: u32,
}

struct RawTransition {
    line: usize,
    id: String,
    input: Option<String>,
    output: Option<String>,
    pre: Vec<String>,
    post: Vec<String>,
}

impl Ipn {
    /// Parses the line-oriented model format. Sections `inputs:`, `outputs:`,
    /// `places:` and `transitions:` in any order, `#` comments, entries one
    /// per line (proposition names may also follow the section header).
    pub fn parse(text: &str) -> Result<Ipn, IpnError> {
        let mut section = Section::None;
        let mut input_names: Vec<String> = Vec::new();
        let mut output_names: Vec<String> = Vec::new();
        let mut raw_places: Vec<RawPlace> = Vec::new();
        let mut raw_transitions: Vec<RawTransition> = Vec::new();

        for (lineno, raw_line) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = match raw_line.find('#') {
                Some(i) => &raw_line[..i],
                None => raw_line,
            };
            let mut tokens = tokenize_line(line, content)?;
            if tokens.is_empty() {
                continue;
            }
            let head = tokens[0].clone();
            match head.as_str() {
                "inputs:" | "outputs:" | "places:" | "transitions:" => {
                    section = match head.as_str() {
                        "inputs:" => Section::Inputs,
                        "outputs:" => Section::Outputs,
                        "places:" => Section::Places,
                        _ => Section::Transitions,
                    };
                    tokens.remove(0);
                    if tokens.is_empty() {
                        continue;
                    }
                    match section {
                        Section::Inputs => input_names.extend(tokens),
                        Section::Outputs => output_names.extend(tokens),
                        _ => return Err(parse_err(line, "entries start on the next line")),
                    }
                    continue;
                }
                _ => {}
            }
            match section {
                Section::None => return Err(parse_err(line, "content before any section header")),
                Section::Inputs => input_names.extend(tokens),
                Section::Outputs => output_names.extend(tokens),
                Section::Places => {
                    raw_places.push(parse_place_line(line, &tokens)?);
                }
                Section::Transitions => {
                    raw_transitions.push(parse_transition_line(line, &tokens)?);
                }
            }
        }

        let inputs = PropSet::new(input_names).map_err(|e| parse_err(0, format!("inputs: {e}")))?;
        let outputs =
            PropSet::new(output_names).map_err(|e| parse_err(0, format!("outputs: {e}")))?;

        let mut place_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut places = Vec::new();
        for rp in &raw_places {
            if place_index.contains_key(&rp.id) {
                return Err(parse_err(rp.line, format!("duplicate place `{}`", rp.id)));
            }
            let label = match &rp.label {
                Some(text) => parse_cube(text, &outputs)
                    .map_err(|e| parse_err(rp.line, format!("place `{}`: {e}", rp.id)))?,
                None => Cube::top(&outputs),
            };
            if label.is_false() {
                return Err(parse_err(
                    rp.line,
                    format!("place `{}` labeled FALSE", rp.id),
                ));
            }
            place_index.insert(rp.id.clone(), places.len());
            places.push(Place {
                id: rp.id.clone(),
                label,
                tokens: rp.tokens,
            });
        }

        let mut trans_ids: BTreeSet<String> = BTreeSet::new();
        let mut transitions = Vec::new();
        for rt in &raw_transitions {
            if !trans_ids.insert(rt.id.clone()) {
                return Err(parse_err(
                    rt.line,
                    format!("duplicate transition `{}`", rt.id),
                ));
            }
            let input = match &rt.input {
                Some(text) => parse_cube(text, &inputs)
                    .map_err(|e| parse_err(rt.line, format!("transition `{}`: {e}", rt.id)))?,
                None => Cube::top(&inputs),
            };
            let output = match &rt.output {
                Some(text) => parse_cube(text, &outputs)
                    .map_err(|e| parse_err(rt.line, format!("transition `{}`: {e}", rt.id)))?,
                None => Cube::top(&outputs),
            };
            if input.is_false() || output.is_false() {
                return Err(parse_err(
                    rt.line,
                    format!("transition `{}` labeled FALSE", rt.id),
                ));
            }
            let resolve = |ids: &[String], kind: &str| -> Result<Vec<usize>, IpnError> {
                let mut out = Vec::new();
                for id in ids {
                    let idx = *place_index.get(id).ok_or_else(|| {
                        parse_err(rt.line, format!("{kind} arc to undeclared place `{id}`"))
                    })?;
                    if out.contains(&idx) {
                        return Err(parse_err(
                            rt.line,
                            format!("duplicate {kind} place `{id}` (arcs are unweighted)"),
                        ));
                    }
                    out.push(idx);
                }
                out.sort_unstable();
                Ok(out)
            };
            transitions.push(Transition {
                id: rt.id.clone(),
                input,
                output,
                pre: resolve(&rt.pre, "pre")?,
                post: resolve(&rt.post, "post")?,
            });
        }

        Ok(Ipn {
            places,
            transitions,
            inputs,
            outputs,
        })
    }
}

fn parse_place_line(line: usize, tokens: &[String]) -> Result<RawPlace, IpnError> {
    let mut it = tokens.iter();
    let id = it.next().expect("non-empty").clone();
    if quoted(&id).is_some() {
        return Err(parse_err(line, "place id must not be quoted"));
    }
    let mut place = RawPlace {
        line,
        id,
        label: None,
        tokens: 0,
    };
    while let Some(tok) = it.next() {
        match tok.as_str() {
            "output" => {
                let v = it
                    .next()
                    .and_then(|t| quoted(t))
                    .ok_or_else(|| parse_err(line, "expected quoted cube after `output`"))?;
                place.label = Some(v.to_string());
            }
            "tokens" => {
                let v = it
                    .next()
                    .ok_or_else(|| parse_err(line, "expected count after `tokens`"))?;
                place.tokens = v
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad token count `{v}`")))?;
            }
            other => return Err(parse_err(line, format!("unexpected token `{other}`"))),
        }
    }
    Ok(place)
}

fn parse_transition_line(line: usize, tokens: &[String]) -> Result<RawTransition, IpnError> {
    let mut it = tokens.iter().peekable();
    let id = it.next().expect("non-empty").clone();
    if quoted(&id).is_some() {
        return Err(parse_err(line, "transition id must not be quoted"));
    }
    let mut tr = RawTransition {
        line,
        id,
        input: None,
        output: None,
        pre: Vec::new(),
        post: Vec::new(),
    };
    let mut saw_pre = false;
    let mut saw_post = false;
    while let Some(tok) = it.next() {
        match tok.as_str() {
            "in" => {
                let v = it
                    .next()
                    .and_then(|t| quoted(t))
                    .ok_or_else(|| parse_err(line, "expected quoted cube after `in`"))?;
                tr.input = Some(v.to_string());
            }
            "out" => {
                let v = it
                    .next()
                    .and_then(|t| quoted(t))
                    .ok_or_else(|| parse_err(line, "expected quoted cube after `out`"))?;
                tr.output = Some(v.to_string());
            }
            "pre" => {
                saw_pre = true;
                while let Some(next) = it.peek() {
                    if matches!(next.as_str(), "post" | "in" | "out") {
                        break;
                    }
                    tr.pre.push(it.next().unwrap().clone());
                }
            }
            "post" => {
                saw_post = true;
                while let Some(next) = it.peek() {
                    if matches!(next.as_str(), "pre" | "in" | "out") {
                        break;
                    }
                    tr.post.push(it.next().unwrap().clone());
                }
            }
            other => return Err(parse_err(line, format!("unexpected token `{other}`"))),
        }
    }
    if !saw_pre || !saw_post {
        return Err(parse_err(
            line,
            format!("transition `{}` needs `pre` and `post`", tr.id),
        ));
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    fn buggy() -> Ipn {
        Ipn::parse(models::TRANSFER_BUGGY).unwrap()
    }

    fn fixed() -> Ipn {
        Ipn::parse(models::TRANSFER_FIXED).unwrap()
    }

    fn valuation(ipn: &Ipn, truthy: &[&str]) -> Valuation {
        let mut v = Valuation::all(ipn.inputs(), false);
        for name in truthy {
            let i = ipn.inputs().index_of(name).unwrap();
            v.set(i, true);
        }
        v
    }

    #[test]
    fn parse_transfer_buggy_shape() {
        let net = buggy();
        assert_eq!(net.places().len(), 10);
        assert_eq!(net.transitions().len(), 8);
        assert_eq!(net.inputs().len(), 8);
        assert_eq!(net.outputs().len(), 7);
        let ids: Vec<&str> = net.transitions().iter().map(|t| t.id.as_str()).collect();
        assert_eq!(
            ids,
            ["t_A", "t_B", "t_C", "t_D", "t_E", "t_F", "t_G", "t_I"]
        );
        assert_eq!(net.initial_marking().total(), 1);
    }

    #[test]
    fn parse_transfer_fixed_same_interface() {
        let net = fixed();
        assert_eq!(net.inputs(), buggy().inputs());
        assert_eq!(net.outputs(), buggy().outputs());
        assert_eq!(net.transitions().len(), 8);
        // Sequentialized lower branch: t_F feeds the return place directly.
        let t_f = net.transition_index("t_F").unwrap();
        let t_e = net.transition_index("t_E").unwrap();
        assert_eq!(net.transitions()[t_f].post, net.transitions()[t_e].pre);
    }

    #[test]
    fn parse_rejects_undeclared_place() {
        let text = "\
inputs: a
outputs: X
places:
  p1 tokens 1
transitions:
  t1 in \"a\" pre p1 post p_ghost
";
        let err = Ipn::parse(text).unwrap_err();
        assert!(err.to_string().contains("p_ghost"), "{err}");
    }

    #[test]
    fn parse_rejects_false_label_and_duplicates() {
        let base = "inputs: a\noutputs: X\nplaces:\n";
        let err = Ipn::parse(&format!("{base}  p1 output \"X & !X\"\n")).unwrap_err();
        assert!(err.to_string().contains("FALSE"));
        let err = Ipn::parse(&format!("{base}  p1\n  p1\n")).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn preset_step_weighs_multiplicity() {
        let net = buggy();
        let t_b = net.transition_index("t_B").unwrap();
        let t_d = net.transition_index("t_D").unwrap();
        let mut c = Concset::empty(net.transitions().len());
        c.add(t_b, 1);
        c.add(t_d, 1);
        let pre = net.preset_step(&c);
        assert_eq!(pre, net.preset(t_b).plus(&net.preset(t_d)));
        assert_eq!(pre.total(), 2);

        assert_eq!(
            net.preset_step(&Concset::empty(net.transitions().len())),
            Marking::zero(net.places().len())
        );

        let mut twice = Concset::empty(net.transitions().len());
        twice.add(t_b, 2);
        assert_eq!(
            net.preset_step(&twice),
            net.preset(t_b).plus(&net.preset(t_b))
        );
    }

    #[test]
    fn enabled_at_initial_marking() {
        let net = buggy();
        let m0 = net.initial_marking();
        let start = valuation(&net, &["start"]);
        let enabled = net.enabled(&m0, &start);
        assert_eq!(enabled, vec![net.transition_index("t_A").unwrap()]);

        let nothing = valuation(&net, &[]);
        assert!(net.enabled(&m0, &nothing).is_empty());
        assert!(net
            .enabled(
                &Marking::zero(net.places().len()),
                &valuation(&net, &["start", "r1"])
            )
            .is_empty());
    }

    #[test]
    fn step_enabled_at_the_fork() {
        let net = buggy();
        // Fire t_A then t_G to reach the fork marking.
        let m0 = net.initial_marking();
        let m1 = net.fire(&m0, net.transition_index("t_A").unwrap()).unwrap();
        let fork = net.fire(&m1, net.transition_index("t_G").unwrap()).unwrap();

        let t_b = net.transition_index("t_B").unwrap();
        let t_d = net.transition_index("t_D").unwrap();
        let mut both = Concset::empty(net.transitions().len());
        both.add(t_b, 1);
        both.add(t_d, 1);
        let i = valuation(&net, &["r1", "l2"]);
        assert!(net.step_enabled(&fork, &both, &i));

        let mut twice = Concset::empty(net.transitions().len());
        twice.add(t_b, 2);
        assert!(
            !net.step_enabled(&fork, &twice, &i),
            "single token on the branch place"
        );

        let empty = Concset::empty(net.transitions().len());
        assert!(net.step_enabled(&fork, &empty, &valuation(&net, &[])));
    }

    #[test]
    fn fire_step_diamond_property() {
        let net = buggy();
        let m0 = net.initial_marking();
        let m1 = net.fire(&m0, net.transition_index("t_A").unwrap()).unwrap();
        let fork = net.fire(&m1, net.transition_index("t_G").unwrap()).unwrap();
        let t_b = net.transition_index("t_B").unwrap();
        let t_d = net.transition_index("t_D").unwrap();

        let mut both = Concset::empty(net.transitions().len());
        both.add(t_b, 1);
        both.add(t_d, 1);
        let joint = net.fire_step(&fork, &both).unwrap();
        let seq_bd = net.fire(&net.fire(&fork, t_b).unwrap(), t_d).unwrap();
        let seq_db = net.fire(&net.fire(&fork, t_d).unwrap(), t_b).unwrap();
        assert_eq!(joint, seq_bd);
        assert_eq!(joint, seq_db);

        let empty = Concset::empty(net.transitions().len());
        assert_eq!(net.fire_step(&fork, &empty).unwrap(), fork);

        assert!(net.fire_step(&m0, &both).is_err());
    }

    #[test]
    fn marked_output_conjunction() {
        let net = buggy();
        let m0 = net.initial_marking();
        let m1 = net.fire(&m0, net.transition_index("t_A").unwrap()).unwrap();
        let fork = net.fire(&m1, net.transition_index("t_G").unwrap()).unwrap();
        assert_eq!(net.marked_output(&fork).to_string(), "R1 & L2");
        assert_eq!(
            net.marked_output(&Marking::zero(net.places().len()))
                .to_string(),
            "TRUE"
        );
        assert_eq!(net.marked_output(&m1).to_string(), "Transfer");
    }

    #[test]
    fn successors_follow_maximal_progress() {
        let net = buggy();
        let m0 = net.initial_marking();
        let idle = valuation(&net, &[]);
        let succs = net.successors(&m0, &idle);
        assert_eq!(succs.len(), 1);
        assert!(matches!(&succs[0], Successor::Wait { marking, .. } if *marking == m0));

        let start = valuation(&net, &["start"]);
        let succs = net.successors(&m0, &start);
        assert_eq!(succs.len(), 1);
        assert!(matches!(&succs[0], Successor::Fire { .. }));

        let m1 = net.fire(&m0, net.transition_index("t_A").unwrap()).unwrap();
        let fork = net.fire(&m1, net.transition_index("t_G").unwrap()).unwrap();
        let both = valuation(&net, &["r1", "l2"]);
        let succs = net.successors(&fork, &both);
        assert_eq!(succs.len(), 2, "two interleavings at the fork");
        assert!(succs.iter().all(|s| matches!(s, Successor::Fire { .. })));
    }

    #[test]
    fn empty_word_is_compatible() {
        let net = buggy();
        assert!(net.check_word_prefix(&IOWord { pairs: Vec::new() }));
    }

    #[test]
    fn word_of_waits_is_compatible() {
        let net = buggy();
        let i = valuation(&net, &[]);
        let o = net
            .marked_output(&net.initial_marking())
            .complete_valuation(false)
            .unwrap();
        let w = IOWord {
            pairs: vec![(i.clone(), o.clone()), (i, o)],
        };
        assert!(net.check_word_prefix(&w));
    }

    #[test]
    fn serialize_parse_round_trip() {
        for net in [buggy(), fixed()] {
            let text = net.to_string();
            let back = Ipn::parse(&text).unwrap();
            assert_eq!(net, back);
        }
    }
}
