//! Boolean cube algebra over named atomic propositions.
//!
//! A cube is a conjunction of literals (propositions or their negations),
//! never a disjunction. Cubes label places, transitions and cells; the
//! unsatisfiable cube `FALSE` is a first-class value because contradictory
//! labels are exactly what the analysis looks for.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// An ordered set of distinct proposition names. The declaration order is
/// fixed at creation and defines the canonical literal order for every cube,
/// valuation and clause over the set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropSet {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl PropSet {
    pub fn new<I, S>(names: I) -> Result<Arc<Self>, CubeError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(CubeError::DuplicateProposition(name.clone()));
            }
        }
        Ok(Arc::new(PropSet { names, index }))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CubeError {
    #[error("duplicate proposition `{0}`")]
    DuplicateProposition(String),
    #[error("proposition sets differ")]
    PropSetMismatch,
    #[error("operation undefined on the FALSE cube")]
    FalseCube,
    #[error("clause `{0}` is a tautology (contains a proposition and its negation)")]
    TautologicalClause(String),
    #[error("clause must contain at least one literal")]
    EmptyClause,
}

/// Cube text syntax error with a byte offset into the input.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("{msg} at position {pos}")]
pub struct ParseError {
    pub msg: String,
    pub pos: usize,
}

impl ParseError {
    fn new(msg: impl Into<String>, pos: usize) -> Self {
        ParseError {
            msg: msg.into(),
            pos,
        }
    }
}

/// A conjunction of literals in canonical (declaration) order, or the
/// distinguished unsatisfiable cube. The empty conjunction is `TRUE`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cube {
    over: Arc<PropSet>,
    /// One slot per proposition: `Some(true)` positive literal,
    /// `Some(false)` negative literal, `None` unmentioned.
    lits: Vec<Option<bool>>,
    is_false: bool,
}

impl Cube {
    pub fn top(over: &Arc<PropSet>) -> Self {
        Cube {
            over: over.clone(),
            lits: vec![None; over.len()],
            is_false: false,
        }
    }

    pub fn bottom(over: &Arc<PropSet>) -> Self {
        Cube {
            over: over.clone(),
            lits: vec![None; over.len()],
            is_false: true,
        }
    }

    pub fn literal(over: &Arc<PropSet>, idx: usize, positive: bool) -> Self {
        let mut lits = vec![None; over.len()];
        lits[idx] = Some(positive);
        Cube {
            over: over.clone(),
            lits,
            is_false: false,
        }
    }

    pub fn prop_set(&self) -> &Arc<PropSet> {
        &self.over
    }

    pub fn is_false(&self) -> bool {
        self.is_false
    }

    pub fn is_top(&self) -> bool {
        !self.is_false && self.lits.iter().all(Option::is_none)
    }

    /// Literals in canonical order as `(proposition index, polarity)` pairs.
    /// Empty for both `TRUE` and `FALSE`.
    pub fn literals(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.lits
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|pol| (i, pol)))
    }

    pub fn polarity(&self, idx: usize) -> Option<bool> {
        if self.is_false {
            None
        } else {
            self.lits[idx]
        }
    }

    /// Semantic conjunction. The result is `FALSE` exactly when an operand is
    /// `FALSE` or some proposition would get both polarities.
    pub fn conj(&self, other: &Cube) -> Result<Cube, CubeError> {
        if self.over != other.over {
            return Err(CubeError::PropSetMismatch);
        }
        if self.is_false || other.is_false {
            return Ok(Cube::bottom(&self.over));
        }
        let mut lits = self.lits.clone();
        for (i, pol) in other.literals() {
            match lits[i] {
                None => lits[i] = Some(pol),
                Some(existing) if existing == pol => {}
                Some(_) => return Ok(Cube::bottom(&self.over)),
            }
        }
        Ok(Cube {
            over: self.over.clone(),
            lits,
            is_false: false,
        })
    }

    /// First proposition that would be driven to both polarities by
    /// conjoining `other`, reported as the conflicting literal pair.
    pub fn conflict_with(&self, other: &Cube) -> Option<(usize, bool, bool)> {
        if self.over != other.over || self.is_false || other.is_false {
            return None;
        }
        for (i, pol) in other.literals() {
            if let Some(existing) = self.lits[i] {
                if existing != pol {
                    return Some((i, existing, pol));
                }
            }
        }
        None
    }

    /// True iff `cube ∧ clause` is unsatisfiable, i.e. the cube contains the
    /// negation of every literal of the clause. `FALSE` cubes are reported
    /// separately by callers and rejected here.
    pub fn violates_clause(&self, clause: &Clause) -> Result<bool, CubeError> {
        if self.over != clause.over {
            return Err(CubeError::PropSetMismatch);
        }
        if self.is_false {
            return Err(CubeError::FalseCube);
        }
        Ok(clause
            .literals()
            .iter()
            .all(|&(i, pol)| self.lits[i] == Some(!pol)))
    }

    /// The valuation agreeing with every literal and assigning `default`
    /// to unmentioned propositions.
    pub fn complete_valuation(&self, default: bool) -> Result<Valuation, CubeError> {
        if self.is_false {
            return Err(CubeError::FalseCube);
        }
        let bits = self.lits.iter().map(|l| l.unwrap_or(default)).collect();
        Ok(Valuation {
            over: self.over.clone(),
            bits,
        })
    }
}

impl fmt::Display for Cube {
    /// Canonical text form: literals in declaration order joined by " & ",
    /// `TRUE` for the empty cube, `FALSE` for the unsatisfiable one.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_false {
            return f.write_str("FALSE");
        }
        if self.is_top() {
            return f.write_str("TRUE");
        }
        let mut first = true;
        for (i, pol) in self.literals() {
            if !first {
                f.write_str(" & ")?;
            }
            first = false;
            if !pol {
                f.write_str("!")?;
            }
            f.write_str(self.over.name(i))?;
        }
        Ok(())
    }
}

/// A total Boolean assignment over a proposition set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Valuation {
    over: Arc<PropSet>,
    bits: Vec<bool>,
}

impl Valuation {
    pub fn all(over: &Arc<PropSet>, value: bool) -> Self {
        Valuation {
            over: over.clone(),
            bits: vec![value; over.len()],
        }
    }

    pub fn from_bits(over: &Arc<PropSet>, bits: Vec<bool>) -> Result<Self, CubeError> {
        if bits.len() != over.len() {
            return Err(CubeError::PropSetMismatch);
        }
        Ok(Valuation {
            over: over.clone(),
            bits,
        })
    }

    /// Builds a valuation from a name→bool map; the map must assign every
    /// proposition of the set exactly, with no strangers.
    pub fn from_map(over: &Arc<PropSet>, map: &BTreeMap<String, bool>) -> Result<Self, String> {
        if map.len() != over.len() {
            return Err(format!(
                "expected {} propositions, got {}",
                over.len(),
                map.len()
            ));
        }
        let mut bits = vec![false; over.len()];
        for (name, &v) in map {
            match over.index_of(name) {
                Some(i) => bits[i] = v,
                None => return Err(format!("unknown proposition `{name}`")),
            }
        }
        Ok(Valuation {
            over: over.clone(),
            bits,
        })
    }

    pub fn to_map(&self) -> BTreeMap<String, bool> {
        self.over
            .names()
            .iter()
            .cloned()
            .zip(self.bits.iter().copied())
            .collect()
    }

    pub fn prop_set(&self) -> &Arc<PropSet> {
        &self.over
    }

    pub fn get(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    pub fn get_named(&self, name: &str) -> Option<bool> {
        self.over.index_of(name).map(|i| self.bits[i])
    }

    pub fn set(&mut self, idx: usize, value: bool) {
        self.bits[idx] = value;
    }

    /// True iff every literal of the cube holds here; false for `FALSE`.
    pub fn satisfies(&self, cube: &Cube) -> Result<bool, CubeError> {
        if self.over != *cube.prop_set() {
            return Err(CubeError::PropSetMismatch);
        }
        if cube.is_false() {
            return Ok(false);
        }
        Ok(cube.literals().all(|(i, pol)| self.bits[i] == pol))
    }
}

/// A disjunction of literals used as a global output invariant, e.g.
/// `!L2 | !Pusher`. Tautological clauses are rejected at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    over: Arc<PropSet>,
    /// Sorted by proposition index; each proposition appears at most once.
    lits: Vec<(usize, bool)>,
}

impl Clause {
    pub fn new(over: &Arc<PropSet>, literals: &[(usize, bool)]) -> Result<Self, CubeError> {
        if literals.is_empty() {
            return Err(CubeError::EmptyClause);
        }
        let mut map: BTreeMap<usize, bool> = BTreeMap::new();
        for &(i, pol) in literals {
            if let Some(&existing) = map.get(&i) {
                if existing != pol {
                    return Err(CubeError::TautologicalClause(over.name(i).to_string()));
                }
            } else {
                map.insert(i, pol);
            }
        }
        Ok(Clause {
            over: over.clone(),
            lits: map.into_iter().collect(),
        })
    }

    pub fn prop_set(&self) -> &Arc<PropSet> {
        &self.over
    }

    pub fn literals(&self) -> &[(usize, bool)] {
        &self.lits
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for &(i, pol) in &self.lits {
            if !first {
                f.write_str(" | ")?;
            }
            first = false;
            if !pol {
                f.write_str("!")?;
            }
            f.write_str(self.over.name(i))?;
        }
        Ok(())
    }
}

fn is_name_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

struct Lexer<'a> {
    text: &'a str,
    pos: usize,
}

#[derive(Debug, PartialEq)]
enum Token {
    Name(String),
    Bang,
    Amp,
    Pipe,
    End,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer { text, pos: 0 }
    }

    fn next(&mut self) -> Result<(Token, usize), ParseError> {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() && (bytes[self.pos] as char).is_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        if self.pos >= bytes.len() {
            return Ok((Token::End, start));
        }
        let c = bytes[self.pos] as char;
        match c {
            '!' => {
                self.pos += 1;
                Ok((Token::Bang, start))
            }
            '&' => {
                self.pos += 1;
                Ok((Token::Amp, start))
            }
            '|' => {
                self.pos += 1;
                Ok((Token::Pipe, start))
            }
            c if is_name_start(c) => {
                while self.pos < bytes.len() && is_name_char(bytes[self.pos] as char) {
                    self.pos += 1;
                }
                Ok((Token::Name(self.text[start..self.pos].to_string()), start))
            }
            c => Err(ParseError::new(
                format!("unexpected character `{c}`"),
                start,
            )),
        }
    }
}

fn parse_literal(
    tok: Token,
    pos: usize,
    lex: &mut Lexer<'_>,
    over: &Arc<PropSet>,
) -> Result<(usize, bool), ParseError> {
    let (name, name_pos, positive) = match tok {
        Token::Bang => {
            let (t, p) = lex.next()?;
            match t {
                Token::Name(n) => (n, p, false),
                _ => return Err(ParseError::new("expected proposition after `!`", p)),
            }
        }
        Token::Name(n) => (n, pos, true),
        Token::End => return Err(ParseError::new("unexpected end of input", pos)),
        _ => return Err(ParseError::new("expected literal", pos)),
    };
    match over.index_of(&name) {
        Some(i) => Ok((i, positive)),
        None => Err(ParseError::new(
            format!("unknown proposition `{name}`"),
            name_pos,
        )),
    }
}

/// Parses the cube grammar `cube := lit | lit "&" cube`, `lit := name | "!" name`,
/// plus the keywords `TRUE` and `FALSE`. Contradictory literal pairs fold to
/// the `FALSE` cube rather than erroring.
pub fn parse_cube(text: &str, over: &Arc<PropSet>) -> Result<Cube, ParseError> {
    let mut lex = Lexer::new(text);
    let (first, first_pos) = lex.next()?;
    match &first {
        Token::End => return Err(ParseError::new("empty cube", 0)),
        Token::Name(n) if n == "TRUE" => {
            let (t, p) = lex.next()?;
            return match t {
                Token::End => Ok(Cube::top(over)),
                _ => Err(ParseError::new("trailing input after TRUE", p)),
            };
        }
        Token::Name(n) if n == "FALSE" => {
            let (t, p) = lex.next()?;
            return match t {
                Token::End => Ok(Cube::bottom(over)),
                _ => Err(ParseError::new("trailing input after FALSE", p)),
            };
        }
        _ => {}
    }
    let mut cube = Cube::top(over);
    let mut contradiction = false;
    let (mut tok, mut pos) = (first, first_pos);
    loop {
        let (idx, positive) = parse_literal(tok, pos, &mut lex, over)?;
        match cube.lits[idx] {
            None => cube.lits[idx] = Some(positive),
            Some(existing) if existing != positive => contradiction = true,
            Some(_) => {}
        }
        let (sep, sep_pos) = lex.next()?;
        match sep {
            Token::End => break,
            Token::Amp => {
                let next = lex.next()?;
                tok = next.0;
                pos = next.1;
            }
            _ => return Err(ParseError::new("expected `&` between literals", sep_pos)),
        }
    }
    if contradiction {
        Ok(Cube::bottom(over))
    } else {
        Ok(cube)
    }
}

/// Parses a clause `lit ("|" lit)*` over the given propositions.
pub fn parse_clause(text: &str, over: &Arc<PropSet>) -> Result<Clause, ParseError> {
    let mut lex = Lexer::new(text);
    let mut lits = Vec::new();
    let (mut tok, mut pos) = lex.next()?;
    if tok == Token::End {
        return Err(ParseError::new("empty clause", 0));
    }
    loop {
        let lit = parse_literal(tok, pos, &mut lex, over)?;
        lits.push(lit);
        let (sep, sep_pos) = lex.next()?;
        match sep {
            Token::End => break,
            Token::Pipe => {
                let next = lex.next()?;
                tok = next.0;
                pos = next.1;
            }
            _ => return Err(ParseError::new("expected `|` between literals", sep_pos)),
        }
    }
    Clause::new(over, &lits).map_err(|e| ParseError::new(e.to_string(), 0))
}
