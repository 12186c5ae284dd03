//! Surface syntax for EinSum programs.
//!
//! ```text
//! program   = { item (";" | newline) }
//! item      = "tensor" NAME "[" [INT {"," INT}] "]"
//!           | use "=" [AGG ["[" labels "]"]] expr
//! expr      = FN "(" [NUMBER ","] inner ")"
//!           | "(" inner ")" ["^" "2"]
//!           | inner
//! inner     = use [("*" | "+" | "-" | "/") use]
//! use       = NAME "[" [LABEL {"," LABEL}] "]"
//! AGG       = "sum" | "max"
//! FN        = "identity" | "relu" | "exp" | "square" | "scale"
//! ```
//!
//! `#` starts a comment. Upper-case labels mark promotion hints.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::graph::topo_sort;
use super::{
    Aggregate, AxisSet, BoundVector, Combine, Edge, EinsumNode, EinsumProgram, IrError, Label,
    LabelList, OpSpec, Slot, TensorDecl, TensorUse, UnaryFn, VertexId,
};

const KEYWORDS: &[&str] = &[
    "tensor", "sum", "max", "identity", "relu", "exp", "square", "scale",
];

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Accept a label repeated within one list (diagonal indexing).
    pub allow_repeated_labels: bool,
}

pub fn parse_program(text: &str) -> Result<EinsumProgram, IrError> {
    parse_program_with(text, ParseOptions::default())
}

pub fn parse_program_with(text: &str, opts: ParseOptions) -> Result<EinsumProgram, IrError> {
    let tokens = lex(text)?;
    let items = Parser { tokens, pos: 0 }.program()?;
    build(items, opts)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    Sep,
    Eq,
    Op(char),
    Caret,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> IrError {
    IrError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>, IrError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let simple = match c {
                '#' => break,
                c if c.is_whitespace() => {
                    i += 1;
                    continue;
                }
                '[' => Some(Tok::LBracket),
                ']' => Some(Tok::RBracket),
                '(' => Some(Tok::LParen),
                ')' => Some(Tok::RParen),
                ',' => Some(Tok::Comma),
                ';' => Some(Tok::Sep),
                '=' => Some(Tok::Eq),
                '^' => Some(Tok::Caret),
                '*' | '+' | '-' | '/' => Some(Tok::Op(c)),
                _ => None,
            };
            if let Some(tok) = simple {
                out.push(Token {
                    tok,
                    line: line_no,
                    column: col,
                });
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    line: line_no,
                    column: col,
                });
                continue;
            }
            if c.is_ascii_digit() || c == '.' {
                let start = i;
                while i < chars.len() {
                    let d = chars[i];
                    let exp_sign = (d == '-' || d == '+')
                        && i > start
                        && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.push(Token {
                    tok: Tok::Number(chars[start..i].iter().collect()),
                    line: line_no,
                    column: col,
                });
                continue;
            }
            return Err(syntax(line_no, col, format!("unexpected character `{c}`")));
        }
        out.push(Token {
            tok: Tok::Sep,
            line: line_no,
            column: chars.len() + 1,
        });
    }
    let line = out.last().map_or(1, |t| t.line);
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: 1,
    });
    Ok(out)
}

#[derive(Debug)]
struct RawUse {
    name: String,
    labels: Vec<(String, usize, usize)>,
}

#[derive(Debug)]
enum Item {
    Decl {
        name: String,
        bounds: Vec<usize>,
        line: usize,
        column: usize,
    },
    Assign {
        output: RawUse,
        aggregate: Aggregate,
        agg_labels: Option<Vec<(String, usize, usize)>>,
        inputs: Vec<RawUse>,
        combine: Combine,
        unary: UnaryFn,
    },
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, message: impl Into<String>) -> IrError {
        let t = self.peek();
        syntax(t.line, t.column, message)
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Token, IrError> {
        if self.peek().tok == want {
            Ok(self.next())
        } else {
            Err(self.error_here(format!("expected {what}")))
        }
    }

    fn program(mut self) -> Result<Vec<Item>, IrError> {
        let mut items = Vec::new();
        loop {
            while self.peek().tok == Tok::Sep {
                self.next();
            }
            if self.peek().tok == Tok::Eof {
                return Ok(items);
            }
            items.push(self.item()?);
            match self.peek().tok {
                Tok::Sep | Tok::Eof => {}
                _ => return Err(self.error_here("expected end of statement")),
            }
        }
    }

    fn item(&mut self) -> Result<Item, IrError> {
        if matches!(&self.peek().tok, Tok::Ident(s) if s == "tensor") {
            let kw = self.next();
            let name = self.name()?;
            self.expect(Tok::LBracket, "`[`")?;
            let mut bounds = Vec::new();
            if self.peek().tok != Tok::RBracket {
                loop {
                    let t = self.next();
                    match t.tok {
                        Tok::Number(ref n) => {
                            let b: usize = n
                                .parse()
                                .map_err(|_| syntax(t.line, t.column, "expected integer bound"))?;
                            bounds.push(b);
                        }
                        _ => return Err(syntax(t.line, t.column, "expected integer bound")),
                    }
                    if self.peek().tok == Tok::Comma {
                        self.next();
                    } else {
                        break;
                    }
                }
            }
            self.expect(Tok::RBracket, "`]`")?;
            return Ok(Item::Decl {
                name,
                bounds,
                line: kw.line,
                column: kw.column,
            });
        }

        let output = self.tensor_use()?;
        self.expect(Tok::Eq, "`=`")?;
        let mut aggregate = Aggregate::Sum;
        let mut agg_labels = None;
        if let Tok::Ident(s) = &self.peek().tok {
            if s == "sum" || s == "max" {
                aggregate = if s == "sum" {
                    Aggregate::Sum
                } else {
                    Aggregate::Max
                };
                self.next();
                if self.peek().tok == Tok::LBracket {
                    agg_labels = Some(self.label_list()?);
                }
            }
        }
        let (inputs, combine, unary) = self.expr()?;
        Ok(Item::Assign {
            output,
            aggregate,
            agg_labels,
            inputs,
            combine,
            unary,
        })
    }

    fn expr(&mut self) -> Result<(Vec<RawUse>, Combine, UnaryFn), IrError> {
        match self.peek().tok.clone() {
            Tok::Ident(f)
                if matches!(f.as_str(), "identity" | "relu" | "exp" | "square" | "scale")
                    && *self.peek_at(1) == Tok::LParen =>
            {
                self.next();
                self.next();
                let unary = if f == "scale" {
                    let c = self.number()?;
                    self.expect(Tok::Comma, "`,` after the scale factor")?;
                    UnaryFn::Scale(c)
                } else {
                    match f.as_str() {
                        "identity" => UnaryFn::Identity,
                        "relu" => UnaryFn::Relu,
                        "exp" => UnaryFn::Exp,
                        _ => UnaryFn::Square,
                    }
                };
                let (inputs, combine) = self.inner()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok((inputs, combine, unary))
            }
            Tok::LParen => {
                self.next();
                let (inputs, combine) = self.inner()?;
                self.expect(Tok::RParen, "`)`")?;
                let mut unary = UnaryFn::Identity;
                if self.peek().tok == Tok::Caret {
                    self.next();
                    let t = self.next();
                    match t.tok {
                        Tok::Number(ref n) if n == "2" => unary = UnaryFn::Square,
                        _ => return Err(syntax(t.line, t.column, "only `^2` is supported")),
                    }
                }
                Ok((inputs, combine, unary))
            }
            _ => {
                let (inputs, combine) = self.inner()?;
                Ok((inputs, combine, UnaryFn::Identity))
            }
        }
    }

    fn inner(&mut self) -> Result<(Vec<RawUse>, Combine), IrError> {
        let first = self.tensor_use()?;
        if let Tok::Op(c) = self.peek().tok {
            self.next();
            let combine = match c {
                '*' => Combine::Multiply,
                '+' => Combine::Add,
                '-' => Combine::Subtract,
                _ => Combine::Divide,
            };
            let second = self.tensor_use()?;
            Ok((vec![first, second], combine))
        } else {
            Ok((vec![first], Combine::Multiply))
        }
    }

    fn number(&mut self) -> Result<f64, IrError> {
        let mut sign = 1.0;
        if self.peek().tok == Tok::Op('-') {
            self.next();
            sign = -1.0;
        }
        let t = self.next();
        match t.tok {
            Tok::Number(ref n) => n
                .parse::<f64>()
                .map(|v| sign * v)
                .map_err(|_| syntax(t.line, t.column, format!("malformed number `{n}`"))),
            _ => Err(syntax(t.line, t.column, "expected a number")),
        }
    }

    fn name(&mut self) -> Result<String, IrError> {
        let t = self.next();
        match t.tok {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => Ok(s),
            Tok::Ident(s) => Err(syntax(
                t.line,
                t.column,
                format!("`{s}` is reserved and cannot name a tensor"),
            )),
            _ => Err(syntax(t.line, t.column, "expected a tensor name")),
        }
    }

    fn tensor_use(&mut self) -> Result<RawUse, IrError> {
        let name = self.name()?;
        let labels = self.label_list()?;
        Ok(RawUse { name, labels })
    }

    fn label_list(&mut self) -> Result<Vec<(String, usize, usize)>, IrError> {
        self.expect(Tok::LBracket, "`[`")?;
        let mut labels = Vec::new();
        if self.peek().tok != Tok::RBracket {
            loop {
                let t = self.next();
                match t.tok {
                    Tok::Ident(s) => labels.push((s, t.line, t.column)),
                    _ => return Err(syntax(t.line, t.column, "expected a label")),
                }
                if self.peek().tok == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RBracket, "`]`")?;
        Ok(labels)
    }
}

fn to_labels(raw: &[(String, usize, usize)]) -> Result<(LabelList, AxisSet, bool), IrError> {
    let mut labels = Vec::with_capacity(raw.len());
    let mut hint = AxisSet::EMPTY;
    let mut any_upper = false;
    for (axis, (s, line, column)) in raw.iter().enumerate() {
        let label =
            Label::new(s).map_err(|_| syntax(*line, *column, format!("invalid label `{s}`")))?;
        if s.starts_with(|c: char| c.is_ascii_uppercase()) {
            hint.insert(axis);
            any_upper = true;
        }
        labels.push(label);
    }
    Ok((LabelList::new(labels), hint, any_upper))
}

fn build(items: Vec<Item>, opts: ParseOptions) -> Result<EinsumProgram, IrError> {
    let mut sources = Vec::new();
    let mut names: HashMap<String, VertexId> = HashMap::new();
    let mut statements = Vec::new();

    for item in &items {
        if let Item::Decl {
            name,
            bounds,
            line,
            column,
        } = item
        {
            if names.contains_key(name) {
                return Err(IrError::DuplicateTensor(name.clone()));
            }
            if bounds.contains(&0) {
                return Err(IrError::ZeroBound(name.clone()));
            }
            if bounds.len() > AxisSet::MAX_RANK {
                return Err(syntax(*line, *column, "rank too large"));
            }
            names.insert(name.clone(), VertexId(sources.len()));
            sources.push(TensorDecl::new(name.clone(), bounds.clone()));
        }
    }
    for item in &items {
        if let Item::Assign { output, .. } = item {
            if names.contains_key(&output.name) {
                return Err(IrError::DuplicateTensor(output.name.clone()));
            }
            names.insert(
                output.name.clone(),
                VertexId(sources.len() + statements.len()),
            );
            statements.push(item);
        }
    }

    let mut edges = Vec::new();
    for (i, item) in statements.iter().enumerate() {
        let Item::Assign { inputs, .. } = item else {
            unreachable!()
        };
        let consumer = VertexId(sources.len() + i);
        let binary = inputs.len() == 2;
        for (k, u) in inputs.iter().enumerate() {
            let producer = *names
                .get(&u.name)
                .ok_or_else(|| IrError::UndeclaredTensor(u.name.clone()))?;
            let slot = match (binary, k) {
                (false, _) => Slot::Only,
                (true, 0) => Slot::Left,
                _ => Slot::Right,
            };
            edges.push(Edge {
                producer,
                consumer,
                slot,
            });
        }
    }

    let vertex_count = sources.len() + statements.len();
    let order = topo_sort(vertex_count, &edges).map_err(|v| {
        let name = if v.0 < sources.len() {
            sources[v.0].name.clone()
        } else {
            match statements[v.0 - sources.len()] {
                Item::Assign { output, .. } => output.name.clone(),
                _ => unreachable!(),
            }
        };
        IrError::Cycle(name)
    })?;

    // Resolve bounds in dependency order.
    let mut bounds: BTreeMap<VertexId, BoundVector> = sources
        .iter()
        .enumerate()
        .map(|(i, d)| (VertexId(i), d.bound.clone()))
        .collect();
    let mut nodes: Vec<Option<EinsumNode>> = vec![None; statements.len()];
    for &v in &order {
        if v.0 < sources.len() {
            continue;
        }
        let Item::Assign {
            output,
            aggregate,
            agg_labels,
            inputs,
            combine,
            unary,
        } = statements[v.0 - sources.len()]
        else {
            unreachable!()
        };
        let (out_labels, out_hint, mut hinted) = to_labels(&output.labels)?;
        let mut uses = Vec::new();
        let mut label_bounds: BTreeMap<Label, usize> = BTreeMap::new();
        for u in inputs {
            let (labels, hint, upper) = to_labels(&u.labels)?;
            hinted |= upper;
            let b = &bounds[&names[&u.name]];
            if b.rank() != labels.len() {
                return Err(IrError::RankMismatch {
                    tensor: u.name.clone(),
                    labels: labels.len(),
                    rank: b.rank(),
                });
            }
            for (axis, l) in labels.iter().enumerate() {
                match label_bounds.get(l) {
                    Some(&first) if first != b[axis] => {
                        return Err(IrError::BoundMismatch {
                            tensor: output.name.clone(),
                            label: l.to_string(),
                            first,
                            second: b[axis],
                        })
                    }
                    _ => {
                        label_bounds.insert(l.clone(), b[axis]);
                    }
                }
            }
            uses.push((u, labels, hint));
        }
        let check_repeats = |labels: &LabelList, tensor: &str| {
            if opts.allow_repeated_labels {
                return Ok(());
            }
            match labels.first_repeat() {
                Some(l) => Err(IrError::RepeatedLabel {
                    tensor: tensor.to_string(),
                    label: l.to_string(),
                }),
                None => Ok(()),
            }
        };
        check_repeats(&out_labels, &output.name)?;
        for (u, labels, _) in &uses {
            check_repeats(labels, &u.name)?;
        }

        let mut out_bound = Vec::with_capacity(out_labels.len());
        for l in &out_labels {
            match label_bounds.get(l) {
                Some(&b) => out_bound.push(b),
                None => {
                    return Err(IrError::DanglingOutputLabel {
                        tensor: output.name.clone(),
                        label: l.to_string(),
                    })
                }
            }
        }

        let node = EinsumNode {
            vertex: v,
            output: TensorDecl::new(output.name.clone(), out_bound),
            output_labels: out_labels,
            output_hint: hinted.then_some(out_hint),
            inputs: uses
                .into_iter()
                .map(|(u, labels, hint)| TensorUse {
                    tensor: u.name.clone(),
                    labels,
                    hint: hinted.then_some(hint),
                })
                .collect(),
            op: OpSpec {
                combine: *combine,
                aggregate: *aggregate,
                unary: *unary,
            },
        };

        if let Some(given) = agg_labels {
            let (given, _, _) = to_labels(given)?;
            let given_set: BTreeSet<&Label> = given.iter().collect();
            let derived = node.agg_labels();
            let derived_set: BTreeSet<&Label> = derived.iter().collect();
            if given_set != derived_set {
                let join = |s: BTreeSet<&Label>| {
                    s.into_iter()
                        .map(|l| l.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                };
                return Err(IrError::AggregationMismatch {
                    tensor: output.name.clone(),
                    given: join(given_set),
                    derived: join(derived_set),
                });
            }
        }

        bounds.insert(v, node.output.bound.clone());
        nodes[v.0 - sources.len()] = Some(node);
    }

    Ok(EinsumProgram::from_parts(
        sources,
        nodes.into_iter().map(|n| n.expect("every node resolved")).collect(),
        edges,
        order,
    ))
}
