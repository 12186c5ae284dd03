//! Reference interpreter for emitted scripts. It walks the SQL text itself,
//! using the manifest only for relation layouts and kernel definitions, so
//! it can check the emitter against the executor.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{Manifest, RelationSchema};
use crate::executor::{dense_eval, decompose_tensor, ExecError, OpCounter, TensorRelation};
use crate::ir::{parse_program_with, EinsumProgram, ParseOptions};
use crate::stats::{flatten, unflatten, SparseTensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScriptError {
    #[error("script syntax error near token {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("script error: {0}")]
    Semantic(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

fn semantic<T>(m: impl Into<String>) -> Result<T, ScriptError> {
    Err(ScriptError::Semantic(m.into()))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Punct(char),
}

fn lex(text: &str) -> Result<Vec<Tok>, ScriptError> {
    let mut out = Vec::new();
    let cs: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '-' && cs.get(i + 1) == Some(&'-') {
            while i < cs.len() && cs[i] != '\n' {
                i += 1;
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let s = i;
            while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(cs[s..i].iter().collect()));
        } else if c.is_ascii_digit() {
            let s = i;
            while i < cs.len() && cs[i].is_ascii_digit() {
                i += 1;
            }
            let t: String = cs[s..i].iter().collect();
            out.push(Tok::Int(t.parse().map_err(|_| ScriptError::Syntax {
                position: out.len(),
                message: format!("bad integer {t}"),
            })?));
        } else if "(),.;[]:=".contains(c) {
            out.push(Tok::Punct(c));
            i += 1;
        } else {
            return Err(ScriptError::Syntax {
                position: out.len(),
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Expr {
    Int(i64),
    Col(String, String),
    /// Sub-block extraction; `None` keeps an axis.
    Slice(Box<Expr>, Vec<Option<Expr>>),
    Call(String, Vec<Expr>),
}

#[derive(Debug, Clone)]
enum From {
    Table { name: String, alias: String, fill: bool },
    AllInts { lo: i64, hi: i64, alias: String },
}

#[derive(Debug, Clone)]
struct Select {
    items: Vec<Expr>,
    from: Vec<From>,
    preds: Vec<(Expr, Expr)>,
    group: Vec<Expr>,
}

#[derive(Debug, Clone)]
enum Stmt {
    Table(String),
    View(String, Vec<String>, Select),
    Insert(String, Vec<String>, Select),
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn err<T>(&self, m: impl Into<String>) -> Result<T, ScriptError> {
        Err(ScriptError::Syntax {
            position: self.pos,
            message: m.into(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn is_punct(&self, c: char) -> bool {
        self.peek() == Some(&Tok::Punct(c))
    }

    fn kw(&mut self, kw: &str) -> Result<(), ScriptError> {
        if self.is_kw(kw) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {kw}"))
        }
    }

    fn punct(&mut self, c: char) -> Result<(), ScriptError> {
        if self.is_punct(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn ident(&mut self) -> Result<String, ScriptError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn int(&mut self) -> Result<i64, ScriptError> {
        match self.peek() {
            Some(Tok::Int(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => self.err("expected integer"),
        }
    }

    fn statements(&mut self) -> Result<Vec<Stmt>, ScriptError> {
        let mut out = Vec::new();
        while self.peek().is_some() {
            out.push(self.statement()?);
            self.punct(';')?;
        }
        Ok(out)
    }

    fn column_list(&mut self) -> Result<Vec<String>, ScriptError> {
        self.punct('(')?;
        let mut cols = vec![self.ident()?];
        while self.is_punct(',') {
            self.pos += 1;
            cols.push(self.ident()?);
        }
        self.punct(')')?;
        Ok(cols)
    }

    fn statement(&mut self) -> Result<Stmt, ScriptError> {
        if self.is_kw("CREATE") {
            self.pos += 1;
            if self.is_kw("TABLE") {
                self.pos += 1;
                let name = self.ident()?;
                // Column types are implied by the manifest layout.
                let mut depth = 0;
                loop {
                    match self.peek() {
                        Some(Tok::Punct('(')) => depth += 1,
                        Some(Tok::Punct(')')) => {
                            depth -= 1;
                            if depth == 0 {
                                self.pos += 1;
                                break;
                            }
                        }
                        None => return self.err("unterminated column list"),
                        _ => {}
                    }
                    self.pos += 1;
                }
                return Ok(Stmt::Table(name));
            }
            self.kw("VIEW")?;
            let name = self.ident()?;
            let cols = self.column_list()?;
            self.kw("AS")?;
            let sel = self.select()?;
            return Ok(Stmt::View(name, cols, sel));
        }
        self.kw("INSERT")?;
        self.kw("INTO")?;
        let name = self.ident()?;
        let cols = self.column_list()?;
        let sel = self.select()?;
        Ok(Stmt::Insert(name, cols, sel))
    }

    fn select(&mut self) -> Result<Select, ScriptError> {
        self.kw("SELECT")?;
        let mut items = vec![self.item()?];
        while self.is_punct(',') {
            self.pos += 1;
            items.push(self.item()?);
        }
        self.kw("FROM")?;
        let mut from = vec![self.from_item()?];
        while self.is_punct(',') {
            self.pos += 1;
            from.push(self.from_item()?);
        }
        let mut preds = Vec::new();
        if self.is_kw("WHERE") {
            self.pos += 1;
            loop {
                let a = self.expr()?;
                self.punct('=')?;
                preds.push((a, self.expr()?));
                if !self.is_kw("AND") {
                    break;
                }
                self.pos += 1;
            }
        }
        let mut group = Vec::new();
        if self.is_kw("GROUP") {
            self.pos += 1;
            self.kw("BY")?;
            group.push(self.expr()?);
            while self.is_punct(',') {
                self.pos += 1;
                group.push(self.expr()?);
            }
        }
        Ok(Select {
            items,
            from,
            preds,
            group,
        })
    }

    fn item(&mut self) -> Result<Expr, ScriptError> {
        let e = self.expr()?;
        if self.is_kw("AS") {
            self.pos += 1;
            self.ident()?;
        }
        Ok(e)
    }

    fn from_item(&mut self) -> Result<From, ScriptError> {
        let head = self.ident()?;
        let item = if head == "ALLINTS" {
            self.punct('(')?;
            let lo = self.int()?;
            self.punct(',')?;
            let hi = self.int()?;
            self.punct(')')?;
            self.kw("AS")?;
            From::AllInts {
                lo,
                hi,
                alias: self.ident()?,
            }
        } else if head == "FILL" {
            self.punct('(')?;
            let name = self.ident()?;
            self.punct(')')?;
            let alias = if self.is_kw("AS") {
                self.pos += 1;
                self.ident()?
            } else {
                name.clone()
            };
            From::Table {
                name,
                alias,
                fill: true,
            }
        } else {
            let alias = if self.is_kw("AS") {
                self.pos += 1;
                self.ident()?
            } else {
                head.clone()
            };
            From::Table {
                name: head,
                alias,
                fill: false,
            }
        };
        Ok(item)
    }

    fn expr(&mut self) -> Result<Expr, ScriptError> {
        if let Some(Tok::Int(_)) = self.peek() {
            return Ok(Expr::Int(self.int()?));
        }
        let head = self.ident()?;
        let e = if self.is_punct('(') {
            self.pos += 1;
            let mut args = vec![self.expr()?];
            while self.is_punct(',') {
                self.pos += 1;
                args.push(self.expr()?);
            }
            self.punct(')')?;
            Expr::Call(head, args)
        } else {
            self.punct('.')?;
            Expr::Col(head, self.ident()?)
        };
        if !self.is_punct('[') {
            return Ok(e);
        }
        self.pos += 1;
        let mut idx = Vec::new();
        loop {
            if self.is_punct(':') {
                self.pos += 1;
                idx.push(None);
            } else {
                idx.push(Some(self.expr()?));
            }
            if self.is_punct(']') {
                self.pos += 1;
                break;
            }
            self.punct(',')?;
        }
        Ok(Expr::Slice(Box::new(e), idx))
    }
}

#[derive(Debug, Clone)]
enum Val {
    Int(i64),
    Block(Vec<f64>, Vec<usize>),
}

/// One bound row of a FROM item.
enum RowRef<'a> {
    Tuple(&'a RelationSchema, &'a [usize], &'a [f64]),
    Index(i64),
}

struct Interp<'a> {
    manifest: &'a Manifest,
    rels: BTreeMap<String, TensorRelation>,
    kernels: BTreeMap<String, EinsumProgram>,
}

const AGGREGATES: [&str; 3] = ["SUM", "MAX", "STACK"];

impl<'a> Interp<'a> {
    fn schema(&self, name: &str) -> Result<&'a RelationSchema, ScriptError> {
        self.manifest
            .relation(name)
            .ok_or_else(|| ScriptError::Semantic(format!("relation `{name}` not in manifest")))
    }

    fn eval(&mut self, e: &Expr, env: &[(String, RowRef<'_>)]) -> Result<Val, ScriptError> {
        match e {
            Expr::Int(n) => Ok(Val::Int(*n)),
            Expr::Col(alias, col) => {
                let Some((_, r)) = env.iter().find(|(a, _)| a == alias) else {
                    return semantic(format!("unknown alias `{alias}`"));
                };
                match r {
                    RowRef::Index(i) if col == "index" => Ok(Val::Int(*i)),
                    RowRef::Tuple(s, key, block) => {
                        if *col == s.value_column() {
                            return Ok(Val::Block(block.to_vec(), s.block_bound()));
                        }
                        let Some(pos) = s.key_columns().iter().position(|c| c == col) else {
                            return semantic(format!("no column `{col}` in `{}`", s.name));
                        };
                        Ok(Val::Int(key[pos] as i64))
                    }
                    RowRef::Index(_) => semantic(format!("no column `{col}` in `{alias}`")),
                }
            }
            Expr::Slice(inner, idx) => {
                let Val::Block(data, shape) = self.eval(inner, env)? else {
                    return semantic("indexing a key column");
                };
                if idx.len() != shape.len() {
                    return semantic("slice rank differs from block rank");
                }
                let mut fixed = Vec::new();
                for i in idx {
                    fixed.push(match i {
                        Some(x) => match self.eval(x, env)? {
                            Val::Int(n) => Some(n as usize),
                            Val::Block(..) => return semantic("block used as an index"),
                        },
                        None => None,
                    });
                }
                let kept: Vec<usize> = shape
                    .iter()
                    .zip(&fixed)
                    .filter(|(_, f)| f.is_none())
                    .map(|(b, _)| *b)
                    .collect();
                let n: usize = kept.iter().product();
                let mut out = Vec::with_capacity(n);
                for flat in 0..n {
                    let mut sub = unflatten(flat, &kept).into_iter();
                    let full: Vec<usize> = fixed
                        .iter()
                        .map(|f| f.unwrap_or_else(|| sub.next().expect("kept axis")))
                        .collect();
                    out.push(data[flatten(&full, &shape)]);
                }
                Ok(Val::Block(out, kept))
            }
            Expr::Call(name, args) => {
                let mut vals = Vec::new();
                for a in args {
                    vals.push(self.eval(a, env)?);
                }
                self.call_kernel(name, vals)
            }
        }
    }

    fn call_kernel(&mut self, name: &str, args: Vec<Val>) -> Result<Val, ScriptError> {
        let Some(spec) = self.manifest.kernel(name) else {
            return semantic(format!("kernel `{name}` not in manifest"));
        };
        if !self.kernels.contains_key(name) {
            let opts = ParseOptions {
                allow_repeated_labels: true,
            };
            let prog = parse_program_with(&spec.program, opts)
                .map_err(|e| ScriptError::Semantic(format!("kernel `{name}`: {e}")))?;
            self.kernels.insert(name.to_string(), prog);
        }
        let prog = &self.kernels[name];
        if args.len() != prog.sources().len() {
            return semantic(format!("kernel `{name}` takes {} arguments", prog.sources().len()));
        }
        let mut inputs = BTreeMap::new();
        for (decl, v) in prog.sources().iter().zip(args) {
            let Val::Block(data, _) = v else {
                return semantic("kernel argument is not a value column");
            };
            inputs.insert(decl.name.clone(), SparseTensor::from_dense(decl.clone(), &data));
        }
        let out = dense_eval(prog, &inputs, &mut OpCounter::default())?;
        let t = &out[&spec.node];
        Ok(Val::Block(t.values.clone(), t.decl.bound.as_slice().to_vec()))
    }

    fn run_select(
        &mut self,
        sel: &Select,
        target: &RelationSchema,
        cols: &[String],
        prunable: bool,
    ) -> Result<TensorRelation, ScriptError> {
        let mut want = target.key_columns();
        want.push(target.value_column());
        if cols != want.as_slice() {
            return semantic(format!("columns of `{}` differ from its layout", target.name));
        }
        let (keys, value) = sel.items.split_at(sel.items.len() - 1);
        let value = &value[0];
        let aggregate = match value {
            Expr::Call(f, args) if AGGREGATES.contains(&f.as_str()) => Some((f.clone(), args.clone())),
            _ => None,
        };

        // Materialize the FROM items, filling where asked.
        let mut sources: Vec<(String, Vec<(Vec<usize>, Vec<f64>)>, Option<&RelationSchema>)> =
            Vec::new();
        for f in &sel.from {
            match f {
                From::Table { name, alias, fill } => {
                    let schema = self.schema(name)?;
                    let Some(rel) = self.rels.get(name) else {
                        return semantic(format!("relation `{name}` used before it is defined"));
                    };
                    let mut rel = rel.clone();
                    if *fill {
                        rel.fill();
                    }
                    let rows = rel.rows().map(|(k, b)| (k.clone(), b.clone())).collect();
                    sources.push((alias.clone(), rows, Some(schema)));
                }
                From::AllInts { lo, hi, alias } => {
                    let rows = (*lo..*hi).map(|i| (vec![i as usize], Vec::new())).collect();
                    sources.push((alias.clone(), rows, None));
                }
            }
        }

        let mut out = TensorRelation::new(
            target.name.clone(),
            target.bound.clone(),
            target.promoted,
            prunable,
        );
        if !sel.group.is_empty() && aggregate.is_none() {
            return semantic(format!("GROUP BY without an aggregate in `{}`", target.name));
        }
        let mut groups: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        let counts: Vec<usize> = sources.iter().map(|s| s.1.len()).collect();
        let total: usize = counts.iter().product();
        for flat in 0..total {
            let pick = unflatten(flat, &counts);
            let env: Vec<(String, RowRef<'_>)> = sources
                .iter()
                .zip(&pick)
                .map(|((alias, rows, schema), &i)| {
                    let (k, b) = &rows[i];
                    let r = match schema {
                        Some(s) => RowRef::Tuple(s, k, b),
                        None => RowRef::Index(k[0] as i64),
                    };
                    (alias.clone(), r)
                })
                .collect();
            let mut keep = true;
            for (a, b) in &sel.preds {
                match (self.eval(a, &env)?, self.eval(b, &env)?) {
                    (Val::Int(x), Val::Int(y)) => keep &= x == y,
                    _ => return semantic("join predicate over value columns"),
                }
            }
            if !keep {
                continue;
            }
            let mut key = Vec::new();
            for k in keys {
                match self.eval(k, &env)? {
                    Val::Int(x) => key.push(x as usize),
                    Val::Block(..) => return semantic("value column in key position"),
                }
            }
            match &aggregate {
                None => {
                    let Val::Block(b, _) = self.eval(value, &env)? else {
                        return semantic("key column in value position");
                    };
                    if groups.insert(key, b).is_some() {
                        return semantic(format!("duplicate key in `{}` without GROUP BY", target.name));
                    }
                }
                Some((f, args)) => {
                    let Val::Block(b, shape) = self.eval(&args[0], &env)? else {
                        return semantic("aggregating a key column");
                    };
                    if f == "STACK" {
                        let pos = match self.eval(&args[1], &env)? {
                            Val::Int(x) => x as usize,
                            Val::Block(..) => return semantic("STACK position is a block"),
                        };
                        let (Expr::Int(dim), Expr::Int(max)) = (&args[2], &args[3]) else {
                            return semantic("STACK dimension and extent must be literals");
                        };
                        let (dim, max) = (*dim as usize, *max as usize);
                        let mut new_shape = shape.clone();
                        new_shape.insert(dim, max);
                        let n: usize = new_shape.iter().product();
                        let acc = groups.entry(key).or_insert_with(|| vec![0.0; n]);
                        for (off, &x) in b.iter().enumerate() {
                            let mut idx = unflatten(off, &shape);
                            idx.insert(dim, pos);
                            acc[flatten(&idx, &new_shape)] = x;
                        }
                    } else {
                        match groups.get_mut(&key) {
                            Some(acc) => {
                                for (x, y) in acc.iter_mut().zip(b) {
                                    *x = if f == "SUM" { *x + y } else { x.max(y) };
                                }
                            }
                            None => {
                                groups.insert(key, b);
                            }
                        }
                    }
                }
            }
        }
        for (k, b) in groups {
            out.insert(k, b)?;
        }
        Ok(out)
    }

    fn prunable_of(&self, sel: &Select) -> bool {
        sel.from.iter().all(|f| match f {
            From::Table { name, .. } => self.rels.get(name).is_none_or(|r| r.prunable),
            From::AllInts { .. } => true,
        })
    }
}

/// Runs a script. Source relations are loaded from `inputs` in the layouts
/// the manifest gives them. Returns every table and view by name.
pub fn run_script(
    script: &str,
    manifest: &Manifest,
    inputs: &BTreeMap<String, SparseTensor>,
) -> Result<BTreeMap<String, TensorRelation>, ScriptError> {
    let stmts = Parser {
        toks: lex(script)?,
        pos: 0,
    }
    .statements()?;
    let mut it = Interp {
        manifest,
        rels: BTreeMap::new(),
        kernels: BTreeMap::new(),
    };
    for st in stmts {
        match st {
            Stmt::Table(name) => {
                let schema = it.schema(&name)?;
                if manifest.sources.contains(&name) {
                    let t = inputs
                        .get(&schema.tensor)
                        .ok_or_else(|| ExecError::MissingInput(schema.tensor.clone()))?;
                    it.rels.insert(name, decompose_tensor(t, schema.promoted));
                }
            }
            Stmt::View(name, cols, sel) => {
                let schema = it.schema(&name)?;
                let prunable = it.prunable_of(&sel);
                let rel = it.run_select(&sel, schema, &cols, prunable)?;
                it.rels.insert(name, rel);
            }
            Stmt::Insert(name, cols, sel) => {
                let schema = it.schema(&name)?;
                let kernel = sel.items.last().and_then(|e| {
                    let mut e = e;
                    loop {
                        match e {
                            Expr::Call(f, args) if AGGREGATES.contains(&f.as_str()) => e = &args[0],
                            Expr::Call(f, _) => return manifest.kernel(f),
                            _ => return None,
                        }
                    }
                });
                let Some(kernel) = kernel else {
                    return semantic(format!("no kernel call in the query for `{name}`"));
                };
                let prunable = kernel.op.sparse_safe();
                let rel = it.run_select(&sel, schema, &cols, prunable)?;
                it.rels.insert(name, rel);
            }
        }
    }
    Ok(it.rels)
}
