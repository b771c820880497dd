//! The `.bnet` network description format.
//!
//! ```text
//! # comment
//! network "name" {
//!   node Promotions {
//!     kind: chance;
//!     states: [Catalogue, InStore, NoPromotion];
//!     prior: [0.47, 0.08, 0.45];
//!   }
//!   node Price {
//!     kind: deterministic;
//!     parents: [Promotions];
//!     states: [Normal, DiscountedInstore, DiscountedCatalogue];
//!     map { (Catalogue) -> DiscountedCatalogue; ... }
//!   }
//!   node Sales {
//!     kind: equation;
//!     parents: [Price];
//!     equation: Choose(Price, 0.25 * Triangular(9.6, 12, 24), Lognormal(3.1, 0.5242), ...)
//!             + Choose(...);
//!   }
//! }
//! ```
//!
//! The full grammar is documented in `docs/dsl.md`. Parsing is a single pass
//! of recursive descent with one token of lookahead, followed by name
//! resolution (parents may be declared after their children) and network
//! validation.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::dist::{DistTerm, Family};
use crate::network::{ChooseTerm, Cpt, DetMap, EquationExpr, Network, Node, NodeKind};

/// Probability rows off by at most this much are renormalised silently.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

const KEYWORDS: &[&str] = &[
    "network",
    "node",
    "kind",
    "chance",
    "deterministic",
    "equation",
    "parents",
    "states",
    "prior",
    "cpt",
    "map",
    "Choose",
    "Triangular",
    "Lognormal",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Keyword,
    Identifier,
    Number,
    Punctuation,
    String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    /// Source text; for strings, the unescaped contents.
    pub text: String,
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ParseError {
    pub message: String,
    pub line: usize,
    pub column: usize,
    pub expected: Option<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)?;
        if let Some(expected) = &self.expected {
            write!(f, " (expected {expected})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

impl ParseError {
    fn at(pos: Pos, message: impl Into<String>) -> Self {
        ParseError {
            message: message.into(),
            line: pos.line,
            column: pos.column,
            expected: None,
        }
    }
}

/// Splits `text` into tokens. `#` starts a comment that runs to end of line.
pub fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut column) = (0, 1, 1);

    while i < chars.len() {
        let c = chars[i];
        let start = Pos { line, column };
        let begin = i;
        let kind = match c {
            '\n' => {
                i += 1;
                line += 1;
                column = 1;
                continue;
            }
            c if c.is_whitespace() => {
                i += 1;
                column += 1;
                continue;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '"' => {
                let mut value = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None | Some('\n') => {
                            return Err(ParseError::at(start, "unterminated string literal"))
                        }
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            match chars.get(i + 1) {
                                Some(&e @ ('"' | '\\')) => value.push(e),
                                Some('n') => value.push('\n'),
                                _ => {
                                    return Err(ParseError::at(
                                        Pos {
                                            line,
                                            column: column + (i - begin),
                                        },
                                        "invalid escape in string literal",
                                    ))
                                }
                            }
                            i += 2;
                        }
                        Some(&ch) => {
                            value.push(ch);
                            i += 1;
                        }
                    }
                }
                column += i - begin;
                tokens.push(Token {
                    kind: TokenKind::String,
                    text: value,
                    line: start.line,
                    column: start.column,
                });
                continue;
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                i += 2;
                TokenKind::Punctuation
            }
            c if c.is_ascii_digit()
                || ((c == '-' || c == '.')
                    && chars
                        .get(i + 1)
                        .is_some_and(|d| d.is_ascii_digit() || *d == '.')) =>
            {
                i = scan_number(&chars, i, start)?;
                TokenKind::Number
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[begin..i].iter().collect();
                if KEYWORDS.contains(&word.as_str()) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Identifier
                }
            }
            '{' | '}' | '[' | ']' | '(' | ')' | ':' | ';' | ',' | '*' | '+' => {
                i += 1;
                TokenKind::Punctuation
            }
            other => {
                return Err(ParseError::at(
                    start,
                    format!("illegal character `{other}`"),
                ));
            }
        };
        column += i - begin;
        tokens.push(Token {
            kind,
            text: chars[begin..i].iter().collect(),
            line: start.line,
            column: start.column,
        });
    }
    Ok(tokens)
}

fn scan_number(chars: &[char], mut i: usize, start: Pos) -> Result<usize, ParseError> {
    let begin = i;
    if chars[i] == '-' {
        i += 1;
    }
    let digits = |i: &mut usize| {
        let s = *i;
        while *i < chars.len() && chars[*i].is_ascii_digit() {
            *i += 1;
        }
        *i - s
    };
    let mut count = digits(&mut i);
    if chars.get(i) == Some(&'.') {
        i += 1;
        count += digits(&mut i);
    }
    if count == 0 {
        return Err(ParseError::at(start, "malformed number"));
    }
    if matches!(chars.get(i), Some('e' | 'E')) {
        let mut j = i + 1;
        if matches!(chars.get(j), Some('+' | '-')) {
            j += 1;
        }
        if chars.get(j).is_some_and(|d| d.is_ascii_digit()) {
            i = j;
            digits(&mut i);
        }
    }
    let text: String = chars[begin..i].iter().collect();
    if text.parse::<f64>().is_err() {
        return Err(ParseError::at(start, format!("malformed number `{text}`")));
    }
    Ok(i)
}

// ---------------------------------------------------------------------------
// Syntax tree before name resolution

#[derive(Debug, Clone)]
struct Name {
    text: String,
    pos: Pos,
}

#[derive(Debug)]
struct RawRow<V> {
    key: Vec<Name>,
    value: V,
    pos: Pos,
}

#[derive(Debug)]
struct RawBranch {
    term: DistTerm,
}

#[derive(Debug)]
struct RawChoose {
    selector: Name,
    branches: Vec<RawBranch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Chance,
    Deterministic,
    Equation,
}

#[derive(Debug, Default)]
struct RawNode {
    name: Option<Name>,
    kind: Option<(Kind, Pos)>,
    parents: Option<(Vec<Name>, Pos)>,
    states: Option<(Vec<Name>, Pos)>,
    prior: Option<(Vec<f64>, Pos)>,
    cpt: Option<(Vec<RawRow<Vec<f64>>>, Pos)>,
    map: Option<(Vec<RawRow<Name>>, Pos)>,
    equation: Option<(Vec<RawChoose>, Pos)>,
}

struct Parser {
    tokens: Vec<Token>,
    cursor: usize,
    end: Pos,
}

impl Parser {
    fn new(tokens: Vec<Token>) -> Self {
        let end = tokens
            .last()
            .map(|t| Pos {
                line: t.line,
                column: t.column,
            })
            .unwrap_or(Pos { line: 1, column: 1 });
        Parser {
            tokens,
            cursor: 0,
            end,
        }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor)
    }

    fn pos(&self) -> Pos {
        self.peek()
            .map(|t| Pos {
                line: t.line,
                column: t.column,
            })
            .unwrap_or(self.end)
    }

    fn error(&self, expected: &str) -> ParseError {
        let message = match self.peek() {
            Some(t) => format!("unexpected `{}`", t.text),
            None => "unexpected end of input".to_owned(),
        };
        ParseError {
            expected: Some(expected.to_owned()),
            ..ParseError::at(self.pos(), message)
        }
    }

    fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.peek()
            .is_some_and(|t| t.kind == kind && t.text == text)
    }

    fn eat(&mut self, kind: TokenKind, text: &str) -> bool {
        if self.is(kind, text) {
            self.cursor += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, text: &str) -> Result<Pos, ParseError> {
        let pos = self.pos();
        if self.eat(TokenKind::Punctuation, text) {
            Ok(pos)
        } else {
            Err(self.error(&format!("`{text}`")))
        }
    }

    fn expect_keyword(&mut self, text: &str) -> Result<Pos, ParseError> {
        let pos = self.pos();
        if self.eat(TokenKind::Keyword, text) {
            Ok(pos)
        } else {
            Err(self.error(&format!("`{text}`")))
        }
    }

    fn name(&mut self) -> Result<Name, ParseError> {
        match self.peek() {
            Some(t) if matches!(t.kind, TokenKind::Identifier | TokenKind::String) => {
                let name = Name {
                    text: t.text.clone(),
                    pos: Pos {
                        line: t.line,
                        column: t.column,
                    },
                };
                self.cursor += 1;
                Ok(name)
            }
            _ => Err(self.error("a name")),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Number => {
                let value = t.text.parse().map_err(|_| self.error("a number"))?;
                self.cursor += 1;
                Ok(value)
            }
            _ => Err(self.error("a number")),
        }
    }

    fn delimited<T>(
        &mut self,
        open: &str,
        close: &str,
        mut item: impl FnMut(&mut Self) -> Result<T, ParseError>,
    ) -> Result<Vec<T>, ParseError> {
        self.expect_punct(open)?;
        let mut items = Vec::new();
        if self.eat(TokenKind::Punctuation, close) {
            return Ok(items);
        }
        loop {
            items.push(item(self)?);
            if self.eat(TokenKind::Punctuation, close) {
                return Ok(items);
            }
            self.expect_punct(",")?;
        }
    }

    fn network(&mut self) -> Result<(String, Vec<RawNode>), ParseError> {
        self.expect_keyword("network")?;
        let name = self.name()?.text;
        self.expect_punct("{")?;
        let mut nodes = Vec::new();
        while !self.eat(TokenKind::Punctuation, "}") {
            if !self.is(TokenKind::Keyword, "node") {
                return Err(self.error("`node` or `}`"));
            }
            nodes.push(self.node()?);
        }
        if self.peek().is_some() {
            return Err(self.error("end of input"));
        }
        Ok((name, nodes))
    }

    fn node(&mut self) -> Result<RawNode, ParseError> {
        self.expect_keyword("node")?;
        let mut raw = RawNode {
            name: Some(self.name()?),
            ..RawNode::default()
        };
        self.expect_punct("{")?;
        while !self.eat(TokenKind::Punctuation, "}") {
            let pos = self.pos();
            let field = match self.peek() {
                Some(t) if t.kind == TokenKind::Keyword => t.text.clone(),
                _ => return Err(self.error("a node field or `}`")),
            };
            self.cursor += 1;
            let duplicate = match field.as_str() {
                "kind" => {
                    self.expect_punct(":")?;
                    let kind = if self.eat(TokenKind::Keyword, "chance") {
                        Kind::Chance
                    } else if self.eat(TokenKind::Keyword, "deterministic") {
                        Kind::Deterministic
                    } else if self.eat(TokenKind::Keyword, "equation") {
                        Kind::Equation
                    } else {
                        return Err(self.error("`chance`, `deterministic` or `equation`"));
                    };
                    raw.kind.replace((kind, pos)).is_some()
                }
                "parents" => {
                    self.expect_punct(":")?;
                    let list = self.delimited("[", "]", Self::name)?;
                    raw.parents.replace((list, pos)).is_some()
                }
                "states" => {
                    self.expect_punct(":")?;
                    let list = self.delimited("[", "]", Self::name)?;
                    raw.states.replace((list, pos)).is_some()
                }
                "prior" => {
                    self.expect_punct(":")?;
                    let list = self.delimited("[", "]", Self::number)?;
                    raw.prior.replace((list, pos)).is_some()
                }
                "cpt" => {
                    let rows = self.rows(|p| {
                        p.expect_punct(":")?;
                        p.delimited("[", "]", Self::number)
                    })?;
                    raw.cpt.replace((rows, pos)).is_some()
                }
                "map" => {
                    let rows = self.rows(|p| {
                        p.expect_punct("->")?;
                        p.name()
                    })?;
                    raw.map.replace((rows, pos)).is_some()
                }
                "equation" => {
                    self.expect_punct(":")?;
                    let expr = self.expr()?;
                    raw.equation.replace((expr, pos)).is_some()
                }
                _ => {
                    self.cursor -= 1;
                    return Err(self.error("a node field or `}`"));
                }
            };
            if duplicate {
                return Err(ParseError::at(pos, format!("field `{field}` given twice")));
            }
            if !matches!(field.as_str(), "cpt" | "map") {
                self.expect_punct(";")?;
            }
        }
        Ok(raw)
    }

    fn rows<V>(
        &mut self,
        mut value: impl FnMut(&mut Self) -> Result<V, ParseError>,
    ) -> Result<Vec<RawRow<V>>, ParseError> {
        self.expect_punct("{")?;
        let mut rows = Vec::new();
        while !self.eat(TokenKind::Punctuation, "}") {
            let pos = self.pos();
            let key = self.delimited("(", ")", Self::name)?;
            let value = value(self)?;
            self.expect_punct(";")?;
            rows.push(RawRow { key, value, pos });
        }
        Ok(rows)
    }

    fn expr(&mut self) -> Result<Vec<RawChoose>, ParseError> {
        let mut terms = vec![self.choose()?];
        while self.eat(TokenKind::Punctuation, "+") {
            terms.push(self.choose()?);
        }
        Ok(terms)
    }

    fn choose(&mut self) -> Result<RawChoose, ParseError> {
        self.expect_keyword("Choose")?;
        self.expect_punct("(")?;
        let selector = self.name()?;
        let mut branches = Vec::new();
        while self.eat(TokenKind::Punctuation, ",") {
            branches.push(self.branch()?);
        }
        if branches.is_empty() {
            return Err(self.error("`,` followed by a distribution"));
        }
        self.expect_punct(")")?;
        Ok(RawChoose { selector, branches })
    }

    fn branch(&mut self) -> Result<RawBranch, ParseError> {
        let mut scale = 1.0;
        while self.peek().is_some_and(|t| t.kind == TokenKind::Number) {
            scale *= self.number()?;
            self.expect_punct("*")?;
        }
        let pos = self.pos();
        let family = if self.eat(TokenKind::Keyword, "Triangular") {
            let args = self.delimited("(", ")", Self::number)?;
            match args[..] {
                [min, mode, max] => Family::Triangular { min, mode, max },
                _ => {
                    return Err(ParseError::at(
                        pos,
                        "Triangular takes 3 arguments (min, mode, max)",
                    ))
                }
            }
        } else if self.eat(TokenKind::Keyword, "Lognormal") {
            let args = self.delimited("(", ")", Self::number)?;
            match args[..] {
                [mu, sigma] => Family::Lognormal { mu, sigma },
                _ => {
                    return Err(ParseError::at(
                        pos,
                        "Lognormal takes 2 arguments (mu, sigma)",
                    ))
                }
            }
        } else {
            return Err(self.error("`Triangular` or `Lognormal`"));
        };
        let term = DistTerm { family, scale };
        term.validate()
            .map_err(|e| ParseError::at(pos, e.to_string()))?;
        Ok(RawBranch { term })
    }
}

// ---------------------------------------------------------------------------
// Name resolution

fn normalize_row(values: Vec<f64>, node: &str, pos: Pos) -> Result<Vec<f64>, ParseError> {
    if let Some(bad) = values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(ParseError::at(
            pos,
            format!("node `{node}`: probability {bad} outside [0, 1]"),
        ));
    }
    let sum: f64 = values.iter().sum();
    // small slack so that a row printed at 6 significant digits still qualifies
    if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE * (1.0 + 1e-6) {
        return Err(ParseError::at(
            pos,
            format!("node `{node}`: probabilities sum to {sum}, not 1 (non-normalized)"),
        ));
    }
    Ok(values.into_iter().map(|p| p / sum).collect())
}

fn resolve(name: String, raw_nodes: Vec<RawNode>) -> Result<Network, ParseError> {
    let mut positions: HashMap<String, Pos> = HashMap::new();
    let mut states_of: HashMap<String, Vec<String>> = HashMap::new();
    for raw in &raw_nodes {
        let id = raw.name.as_ref().expect("node name parsed");
        if positions.insert(id.text.clone(), id.pos).is_some() {
            return Err(ParseError::at(
                id.pos,
                format!("duplicate node `{}`", id.text),
            ));
        }
        if let Some((states, _)) = &raw.states {
            states_of.insert(
                id.text.clone(),
                states.iter().map(|s| s.text.clone()).collect(),
            );
        }
    }

    let mut nodes = Vec::with_capacity(raw_nodes.len());
    for raw in raw_nodes {
        let id = raw.name.clone().expect("node name parsed");
        let node_err =
            |pos: Pos, msg: String| ParseError::at(pos, format!("node `{}`: {msg}", id.text));
        let Some((kind, _)) = raw.kind else {
            return Err(node_err(id.pos, "missing `kind`".into()));
        };
        let parents: Vec<Name> = raw.parents.map(|(p, _)| p).unwrap_or_default();
        for p in &parents {
            if !positions.contains_key(&p.text) {
                return Err(node_err(p.pos, format!("unknown parent `{}`", p.text)));
            }
        }
        let parent_ids: Vec<String> = parents.iter().map(|p| p.text.clone()).collect();

        let forbid = |present: bool, field: &str, pos: Option<Pos>| -> Result<(), ParseError> {
            if present {
                let kind_name = match kind {
                    Kind::Chance => "chance",
                    Kind::Deterministic => "deterministic",
                    Kind::Equation => "equation",
                };
                Err(ParseError::at(
                    pos.unwrap_or(id.pos),
                    format!(
                        "node `{}`: field `{field}` not allowed on a {kind_name} node",
                        id.text
                    ),
                ))
            } else {
                Ok(())
            }
        };

        // parent-state tuple of a row key
        let key_of = |key: &[Name], row_pos: Pos| -> Result<Vec<usize>, ParseError> {
            if key.len() != parents.len() {
                return Err(node_err(
                    row_pos,
                    format!(
                        "row has {} parent states, node has {} parents",
                        key.len(),
                        parents.len()
                    ),
                ));
            }
            key.iter()
                .zip(&parents)
                .map(|(state, parent)| {
                    states_of
                        .get(&parent.text)
                        .and_then(|s| s.iter().position(|x| x == &state.text))
                        .ok_or_else(|| {
                            node_err(
                                state.pos,
                                format!("parent `{}` has no state `{}`", parent.text, state.text),
                            )
                        })
                })
                .collect()
        };

        let states = |raw_states: Option<(Vec<Name>, Pos)>| -> Result<Vec<String>, ParseError> {
            raw_states
                .map(|(s, _)| s.into_iter().map(|n| n.text).collect())
                .ok_or_else(|| node_err(id.pos, "missing `states`".into()))
        };

        let node_kind = match kind {
            Kind::Chance => {
                forbid(raw.map.is_some(), "map", raw.map.as_ref().map(|m| m.1))?;
                forbid(
                    raw.equation.is_some(),
                    "equation",
                    raw.equation.as_ref().map(|m| m.1),
                )?;
                let states = states(raw.states)?;
                let mut cpt = Cpt::new();
                if parents.is_empty() {
                    forbid(raw.cpt.is_some(), "cpt", raw.cpt.as_ref().map(|m| m.1))?;
                    let (prior, pos) = raw
                        .prior
                        .ok_or_else(|| node_err(id.pos, "missing `prior`".into()))?;
                    cpt.insert(Vec::new(), normalize_row(prior, &id.text, pos)?);
                } else {
                    forbid(
                        raw.prior.is_some(),
                        "prior",
                        raw.prior.as_ref().map(|m| m.1),
                    )?;
                    let (rows, _) = raw
                        .cpt
                        .ok_or_else(|| node_err(id.pos, "missing `cpt`".into()))?;
                    for row in rows {
                        let key = key_of(&row.key, row.pos)?;
                        let values = normalize_row(row.value, &id.text, row.pos)?;
                        if cpt.insert(key, values).is_some() {
                            return Err(node_err(row.pos, "duplicate cpt row".into()));
                        }
                    }
                }
                NodeKind::Chance { states, cpt }
            }
            Kind::Deterministic => {
                forbid(
                    raw.prior.is_some(),
                    "prior",
                    raw.prior.as_ref().map(|m| m.1),
                )?;
                forbid(raw.cpt.is_some(), "cpt", raw.cpt.as_ref().map(|m| m.1))?;
                forbid(
                    raw.equation.is_some(),
                    "equation",
                    raw.equation.as_ref().map(|m| m.1),
                )?;
                let states = states(raw.states)?;
                let (rows, _) = raw
                    .map
                    .ok_or_else(|| node_err(id.pos, "missing `map`".into()))?;
                let mut map = DetMap::new();
                for row in rows {
                    let key = key_of(&row.key, row.pos)?;
                    let target = states
                        .iter()
                        .position(|s| s == &row.value.text)
                        .ok_or_else(|| {
                            node_err(row.value.pos, format!("unknown state `{}`", row.value.text))
                        })?;
                    if map.insert(key, target).is_some() {
                        return Err(node_err(row.pos, "duplicate map entry".into()));
                    }
                }
                NodeKind::Deterministic { states, map }
            }
            Kind::Equation => {
                forbid(
                    raw.states.is_some(),
                    "states",
                    raw.states.as_ref().map(|m| m.1),
                )?;
                forbid(
                    raw.prior.is_some(),
                    "prior",
                    raw.prior.as_ref().map(|m| m.1),
                )?;
                forbid(raw.cpt.is_some(), "cpt", raw.cpt.as_ref().map(|m| m.1))?;
                forbid(raw.map.is_some(), "map", raw.map.as_ref().map(|m| m.1))?;
                let (choices, _) = raw
                    .equation
                    .ok_or_else(|| node_err(id.pos, "missing `equation`".into()))?;
                let mut terms = Vec::with_capacity(choices.len());
                for choice in choices {
                    if !parent_ids.contains(&choice.selector.text) {
                        return Err(node_err(
                            choice.selector.pos,
                            format!("Choose selector `{}` is not a parent", choice.selector.text),
                        ));
                    }
                    if let Some(sel_states) = states_of.get(&choice.selector.text) {
                        if sel_states.len() != choice.branches.len() {
                            return Err(node_err(
                                choice.selector.pos,
                                format!(
                                    "arity mismatch: Choose on `{}` has {} branches, selector has {} states",
                                    choice.selector.text,
                                    choice.branches.len(),
                                    sel_states.len()
                                ),
                            ));
                        }
                    }
                    terms.push(ChooseTerm {
                        selector: choice.selector.text,
                        branches: choice.branches.into_iter().map(|b| b.term).collect(),
                    });
                }
                NodeKind::Equation {
                    expr: EquationExpr { terms },
                }
            }
        };
        nodes.push(Node {
            id: id.text,
            parents: parent_ids,
            kind: node_kind,
        });
    }

    let net = Network::new(name, nodes);
    let report = net.validate();
    if let Some(first) = report.violations.first() {
        let pos = first
            .node
            .as_ref()
            .and_then(|n| positions.get(n))
            .copied()
            .unwrap_or(Pos { line: 1, column: 1 });
        return Err(ParseError::at(pos, first.to_string()));
    }
    Ok(net)
}

/// Parses and validates a network description.
pub fn parse_network(text: &str) -> Result<Network, ParseError> {
    let mut parser = Parser::new(tokenize(text)?);
    let (name, nodes) = parser.network()?;
    resolve(name, nodes)
}

// ---------------------------------------------------------------------------
// Serialization

/// Formats a number with at most 6 significant digits and no trailing zeros.
pub fn format_number(value: f64) -> String {
    if value == 0.0 {
        return "0".to_owned();
    }
    let rounded: f64 = format!("{value:.5e}")
        .parse()
        .expect("formatted float parses");
    format!("{rounded}")
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&s)
}

fn quoted(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn name(s: &str) -> String {
    if is_identifier(s) {
        s.to_owned()
    } else {
        quoted(s)
    }
}

fn name_list<'a>(items: impl IntoIterator<Item = &'a String>) -> String {
    items
        .into_iter()
        .map(|s| name(s))
        .collect::<Vec<_>>()
        .join(", ")
}

fn number_list(items: &[f64]) -> String {
    items
        .iter()
        .map(|&v| format_number(v))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Renders a distribution term as `[scale *] Family(args)`.
pub fn format_term(term: &DistTerm) -> String {
    let body = match term.family {
        Family::Triangular { min, mode, max } => {
            format!("Triangular({})", number_list(&[min, mode, max]))
        }
        Family::Lognormal { mu, sigma } => format!("Lognormal({})", number_list(&[mu, sigma])),
    };
    if term.scale == 1.0 {
        body
    } else {
        format!("{} * {body}", format_number(term.scale))
    }
}

fn state_key(net: &Network, node: &Node, key: &[usize]) -> String {
    let parts: Vec<String> = key
        .iter()
        .zip(&node.parents)
        .map(|(&s, parent)| {
            net.node(parent)
                .and_then(|p| p.states().get(s))
                .map(|st| name(st))
                .unwrap_or_else(|| s.to_string())
        })
        .collect();
    format!("({})", parts.join(", "))
}

/// Canonical text form of a network.
pub fn serialize_network(net: &Network) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "network {} {{", quoted(net.name()));
    for (i, node) in net.nodes().iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "  node {} {{", name(&node.id));
        let _ = writeln!(out, "    kind: {};", node.kind_name());
        if !node.parents.is_empty() {
            let _ = writeln!(out, "    parents: [{}];", name_list(&node.parents));
        }
        match &node.kind {
            NodeKind::Chance { states, cpt } => {
                let _ = writeln!(out, "    states: [{}];", name_list(states));
                if node.parents.is_empty() {
                    let prior = cpt.get(&Vec::new()).map(Vec::as_slice).unwrap_or(&[]);
                    let _ = writeln!(out, "    prior: [{}];", number_list(prior));
                } else {
                    out.push_str("    cpt {\n");
                    for (key, row) in cpt {
                        let _ = writeln!(
                            out,
                            "      {}: [{}];",
                            state_key(net, node, key),
                            number_list(row)
                        );
                    }
                    out.push_str("    }\n");
                }
            }
            NodeKind::Deterministic { states, map } => {
                let _ = writeln!(out, "    states: [{}];", name_list(states));
                out.push_str("    map {\n");
                for (key, &target) in map {
                    let _ = writeln!(
                        out,
                        "      {} -> {};",
                        state_key(net, node, key),
                        name(&states[target])
                    );
                }
                out.push_str("    }\n");
            }
            NodeKind::Equation { expr } => {
                out.push_str("    equation:\n");
                for (t, term) in expr.terms.iter().enumerate() {
                    let branches: Vec<String> = term.branches.iter().map(format_term).collect();
                    let _ = write!(
                        out,
                        "      {}Choose({}, {})",
                        if t == 0 { "" } else { "+ " },
                        name(&term.selector),
                        branches.join(", ")
                    );
                    out.push_str(if t + 1 == expr.terms.len() {
                        ";\n"
                    } else {
                        "\n"
                    });
                }
            }
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}

/// Structural equality up to `tol` on probabilities and distribution
/// parameters.
pub fn structurally_equal(a: &Network, b: &Network, tol: f64) -> bool {
    let close = |x: &f64, y: &f64| (x - y).abs() <= tol;
    let rows_close =
        |x: &[f64], y: &[f64]| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| close(p, q));
    let cpt_close = |x: &Cpt, y: &Cpt| {
        x.len() == y.len()
            && x.iter()
                .zip(y)
                .all(|((ka, ra), (kb, rb))| ka == kb && rows_close(ra, rb))
    };
    let term_close = |x: &DistTerm, y: &DistTerm| {
        close(&x.scale, &y.scale)
            && match (x.family, y.family) {
                (
                    Family::Triangular {
                        min: a1,
                        mode: b1,
                        max: c1,
                    },
                    Family::Triangular {
                        min: a2,
                        mode: b2,
                        max: c2,
                    },
                ) => rows_close(&[a1, b1, c1], &[a2, b2, c2]),
                (
                    Family::Lognormal { mu: m1, sigma: s1 },
                    Family::Lognormal { mu: m2, sigma: s2 },
                ) => close(&m1, &m2) && close(&s1, &s2),
                _ => false,
            }
    };
    a.name() == b.name()
        && a.len() == b.len()
        && a.nodes().iter().zip(b.nodes()).all(|(x, y)| {
            x.id == y.id
                && x.parents == y.parents
                && match (&x.kind, &y.kind) {
                    (
                        NodeKind::Chance {
                            states: s1,
                            cpt: c1,
                        },
                        NodeKind::Chance {
                            states: s2,
                            cpt: c2,
                        },
                    ) => s1 == s2 && cpt_close(c1, c2),
                    (
                        NodeKind::Deterministic {
                            states: s1,
                            map: m1,
                        },
                        NodeKind::Deterministic {
                            states: s2,
                            map: m2,
                        },
                    ) => s1 == s2 && m1 == m2,
                    (NodeKind::Equation { expr: e1 }, NodeKind::Equation { expr: e2 }) => {
                        e1.terms.len() == e2.terms.len()
                            && e1.terms.iter().zip(&e2.terms).all(|(t1, t2)| {
                                t1.selector == t2.selector
                                    && t1.branches.len() == t2.branches.len()
                                    && t1
                                        .branches
                                        .iter()
                                        .zip(&t2.branches)
                                        .all(|(p, q)| term_close(p, q))
                            })
                    }
                    _ => false,
                }
        })
}
