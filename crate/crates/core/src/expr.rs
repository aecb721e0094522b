//! Typed column expressions.
//!
//! An [`Expr`] is written against column names. [`compile`] typechecks it
//! against a [`Schema`] and resolves names to positions, producing a
//! [`CompiledExpr`] that the engine evaluates row by row.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::Schema;
use crate::value::{hash_key, Key, Value, ValueType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    FloorDiv,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::FloorDiv => "//",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Expression tree over the columns of one table.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Column(String),
    Const(Value),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    IfElse {
        cond: Box<Expr>,
        then: Box<Expr>,
        otherwise: Box<Expr>,
    },
    /// Key of the row being evaluated.
    ThisId,
    /// Key obtained by hashing the argument values, i.e. the id that a
    /// groupby over the same values assigns to its group.
    Pointer(Vec<Expr>),
}

pub fn col(name: &str) -> Expr {
    Expr::Column(name.to_owned())
}

pub fn lit(v: impl Into<Value>) -> Expr {
    Expr::Const(v.into())
}

pub fn this_id() -> Expr {
    Expr::ThisId
}

pub fn pointer<I: IntoIterator<Item = Expr>>(args: I) -> Expr {
    Expr::Pointer(args.into_iter().collect())
}

pub fn if_else(cond: Expr, then: Expr, otherwise: Expr) -> Expr {
    Expr::IfElse {
        cond: Box::new(cond),
        then: Box::new(then),
        otherwise: Box::new(otherwise),
    }
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn floor_div(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::FloorDiv, self, rhs)
    }

    pub fn eq(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Eq, self, rhs)
    }

    pub fn ne(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Ne, self, rhs)
    }

    pub fn lt(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Lt, self, rhs)
    }

    pub fn le(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Le, self, rhs)
    }

    pub fn gt(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Gt, self, rhs)
    }

    pub fn ge(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Ge, self, rhs)
    }

    pub fn and(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::And, self, rhs)
    }

    pub fn or(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Or, self, rhs)
    }

    /// Replaces every column reference with the expression `lookup` returns for it.
    pub fn substitute(&self, lookup: &dyn Fn(&str) -> Option<Expr>) -> Expr {
        match self {
            Expr::Column(name) => lookup(name).unwrap_or_else(|| self.clone()),
            Expr::Const(_) | Expr::ThisId => self.clone(),
            Expr::Binary { op, lhs, rhs } => {
                Expr::binary(*op, lhs.substitute(lookup), rhs.substitute(lookup))
            }
            Expr::IfElse {
                cond,
                then,
                otherwise,
            } => if_else(
                cond.substitute(lookup),
                then.substitute(lookup),
                otherwise.substitute(lookup),
            ),
            Expr::Pointer(args) => Expr::Pointer(args.iter().map(|a| a.substitute(lookup)).collect()),
        }
    }
}

macro_rules! arith_op {
    ($trait:ident, $method:ident, $op:expr) => {
        impl std::ops::$trait for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::binary($op, self, rhs)
            }
        }
    };
}

arith_op!(Add, add, BinOp::Add);
arith_op!(Sub, sub, BinOp::Sub);
arith_op!(Mul, mul, BinOp::Mul);

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column(name) => f.write_str(name),
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Binary { op, lhs, rhs } => write!(f, "({lhs} {op} {rhs})"),
            Expr::IfElse {
                cond,
                then,
                otherwise,
            } => write!(f, "if_else({cond}, {then}, {otherwise})"),
            Expr::ThisId => f.write_str("id"),
            Expr::Pointer(args) => {
                f.write_str("pointer(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeErrorKind {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("{lhs} {op} {rhs}")]
    Operands {
        op: BinOp,
        lhs: ValueType,
        rhs: ValueType,
    },
    #[error("if_else branches disagree: {then} vs {otherwise}")]
    Branches {
        then: ValueType,
        otherwise: ValueType,
    },
    #[error("expected {expected}, found {found}")]
    Expected {
        expected: ValueType,
        found: ValueType,
    },
    #[error("pointer() needs at least one argument")]
    EmptyPointer,
}

/// Typecheck failure located by a path from the expression root, e.g. `$.rhs.lhs`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("type error at {path}: {kind}")]
pub struct TypeError {
    pub path: String,
    pub kind: TypeErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalErrorKind {
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow in `{0}`")]
    Overflow(BinOp),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at {path} (row {key})")]
pub struct EvalError {
    pub key: Key,
    pub path: String,
    pub kind: EvalErrorKind,
}

#[derive(Clone, Debug)]
enum Node {
    Column(usize),
    Const(Value),
    Binary(BinOp, Box<Node>, Box<Node>),
    IfElse(Box<Node>, Box<Node>, Box<Node>),
    ThisId,
    Pointer(Vec<Node>),
}

/// Expression resolved against a schema, ready for evaluation.
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    node: Node,
    ty: ValueType,
    source: Arc<Expr>,
}

impl CompiledExpr {
    pub fn ty(&self) -> ValueType {
        self.ty
    }

    pub fn expr(&self) -> &Expr {
        &self.source
    }

    /// Column positions the expression reads, if it is a plain column reference.
    pub fn as_column(&self) -> Option<usize> {
        match self.node {
            Node::Column(i) => Some(i),
            _ => None,
        }
    }

    pub fn eval(&self, key: Key, row: &[Value]) -> Result<Value, EvalError> {
        eval_node(&self.node, key, row).map_err(|(segments, kind)| EvalError {
            key,
            path: render_path(&segments),
            kind,
        })
    }
}

fn render_path(reversed: &[&'static str]) -> String {
    let mut path = String::from("$");
    for seg in reversed.iter().rev() {
        path.push('.');
        path.push_str(seg);
    }
    path
}

pub fn typecheck(expr: &Expr, schema: &Schema) -> Result<ValueType, TypeError> {
    compile(expr, schema).map(|c| c.ty)
}

pub fn compile(expr: &Expr, schema: &Schema) -> Result<CompiledExpr, TypeError> {
    let mut path = Vec::new();
    let (node, ty) = check(expr, schema, &mut path)?;
    Ok(CompiledExpr {
        node,
        ty,
        source: Arc::new(expr.clone()),
    })
}

/// Compiles and evaluates in one go. Engine code compiles once instead.
pub fn eval(expr: &Expr, key: Key, row: &[Value], schema: &Schema) -> Result<Value, ExprError> {
    Ok(compile(expr, schema)?.eval(key, row)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn fail(path: &[&'static str], kind: TypeErrorKind) -> TypeError {
    let mut p = String::from("$");
    for seg in path {
        p.push('.');
        p.push_str(seg);
    }
    TypeError { path: p, kind }
}

fn check(
    expr: &Expr,
    schema: &Schema,
    path: &mut Vec<&'static str>,
) -> Result<(Node, ValueType), TypeError> {
    match expr {
        Expr::Column(name) => match schema.column(name) {
            Some((idx, ty)) => Ok((Node::Column(idx), ty)),
            None => Err(fail(path, TypeErrorKind::UnknownColumn(name.clone()))),
        },
        Expr::Const(v) => Ok((Node::Const(v.clone()), v.value_type())),
        Expr::ThisId => Ok((Node::ThisId, ValueType::Key)),
        Expr::Pointer(args) => {
            if args.is_empty() {
                return Err(fail(path, TypeErrorKind::EmptyPointer));
            }
            let mut nodes = Vec::with_capacity(args.len());
            for a in args {
                path.push("arg");
                let (n, _) = check(a, schema, path)?;
                path.pop();
                nodes.push(n);
            }
            Ok((Node::Pointer(nodes), ValueType::Key))
        }
        Expr::IfElse {
            cond,
            then,
            otherwise,
        } => {
            path.push("cond");
            let (c, cty) = check(cond, schema, path)?;
            if cty != ValueType::Bool {
                return Err(fail(
                    path,
                    TypeErrorKind::Expected {
                        expected: ValueType::Bool,
                        found: cty,
                    },
                ));
            }
            path.pop();
            path.push("then");
            let (t, tty) = check(then, schema, path)?;
            path.pop();
            path.push("else");
            let (e, ety) = check(otherwise, schema, path)?;
            path.pop();
            if tty != ety {
                return Err(fail(
                    path,
                    TypeErrorKind::Branches {
                        then: tty,
                        otherwise: ety,
                    },
                ));
            }
            Ok((Node::IfElse(Box::new(c), Box::new(t), Box::new(e)), tty))
        }
        Expr::Binary { op, lhs, rhs } => {
            path.push("lhs");
            let (l, lty) = check(lhs, schema, path)?;
            path.pop();
            path.push("rhs");
            let (r, rty) = check(rhs, schema, path)?;
            path.pop();
            let ty = binary_type(*op, lty, rty).ok_or_else(|| {
                fail(
                    path,
                    TypeErrorKind::Operands {
                        op: *op,
                        lhs: lty,
                        rhs: rty,
                    },
                )
            })?;
            Ok((Node::Binary(*op, Box::new(l), Box::new(r)), ty))
        }
    }
}

fn binary_type(op: BinOp, lhs: ValueType, rhs: ValueType) -> Option<ValueType> {
    use ValueType::*;
    if lhs != rhs {
        return Option::None;
    }
    match op {
        BinOp::Add => matches!(lhs, Int | Float | Str).then_some(lhs),
        BinOp::Sub | BinOp::Mul | BinOp::FloorDiv => matches!(lhs, Int | Float).then_some(lhs),
        BinOp::Eq | BinOp::Ne => Some(Bool),
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => (lhs != None).then_some(Bool),
        BinOp::And | BinOp::Or => (lhs == Bool).then_some(Bool),
    }
}

type NodeResult = Result<Value, (Vec<&'static str>, EvalErrorKind)>;

fn at(seg: &'static str, r: NodeResult) -> NodeResult {
    r.map_err(|(mut p, k)| {
        p.push(seg);
        (p, k)
    })
}

/// Floor division on integers, rounding toward negative infinity.
pub fn floor_div_i64(a: i64, b: i64) -> Result<i64, EvalErrorKind> {
    if b == 0 {
        return Err(EvalErrorKind::DivisionByZero);
    }
    let q = a.checked_div(b).ok_or(EvalErrorKind::Overflow(BinOp::FloorDiv))?;
    if a % b != 0 && ((a < 0) != (b < 0)) {
        Ok(q - 1)
    } else {
        Ok(q)
    }
}

fn eval_node(node: &Node, key: Key, row: &[Value]) -> NodeResult {
    match node {
        Node::Column(i) => Ok(row[*i].clone()),
        Node::Const(v) => Ok(v.clone()),
        Node::ThisId => Ok(Value::Key(key)),
        Node::Pointer(args) => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(at("arg", eval_node(a, key, row))?);
            }
            Ok(Value::Key(hash_key(&vals)))
        }
        Node::IfElse(c, t, e) => {
            let cond = at("cond", eval_node(c, key, row))?;
            if cond.as_bool().unwrap_or(false) {
                at("then", eval_node(t, key, row))
            } else {
                at("else", eval_node(e, key, row))
            }
        }
        Node::Binary(op, l, r) => {
            let lv = at("lhs", eval_node(l, key, row))?;
            match op {
                BinOp::And if lv == Value::Bool(false) => return Ok(Value::Bool(false)),
                BinOp::Or if lv == Value::Bool(true) => return Ok(Value::Bool(true)),
                _ => {}
            }
            let rv = at("rhs", eval_node(r, key, row))?;
            apply(*op, lv, rv).map_err(|k| (Vec::new(), k))
        }
    }
}

fn apply(op: BinOp, l: Value, r: Value) -> Result<Value, EvalErrorKind> {
    use Value::*;
    let overflow = EvalErrorKind::Overflow(op);
    Ok(match (op, l, r) {
        (BinOp::Eq, a, b) => Bool(a == b),
        (BinOp::Ne, a, b) => Bool(a != b),
        (BinOp::Lt, a, b) => Bool(a < b),
        (BinOp::Le, a, b) => Bool(a <= b),
        (BinOp::Gt, a, b) => Bool(a > b),
        (BinOp::Ge, a, b) => Bool(a >= b),
        (BinOp::And, Bool(a), Bool(b)) => Bool(a && b),
        (BinOp::Or, Bool(a), Bool(b)) => Bool(a || b),
        (BinOp::Add, Int(a), Int(b)) => Int(a.checked_add(b).ok_or(overflow)?),
        (BinOp::Sub, Int(a), Int(b)) => Int(a.checked_sub(b).ok_or(overflow)?),
        (BinOp::Mul, Int(a), Int(b)) => Int(a.checked_mul(b).ok_or(overflow)?),
        (BinOp::FloorDiv, Int(a), Int(b)) => Int(floor_div_i64(a, b)?),
        (BinOp::Add, Float(a), Float(b)) => Float(a + b),
        (BinOp::Sub, Float(a), Float(b)) => Float(a - b),
        (BinOp::Mul, Float(a), Float(b)) => Float(a * b),
        (BinOp::FloorDiv, Float(a), Float(b)) => {
            if b == 0.0 {
                return Err(EvalErrorKind::DivisionByZero);
            }
            Float((a / b).floor())
        }
        (BinOp::Add, Str(a), Str(b)) => {
            let mut s = String::with_capacity(a.len() + b.len());
            s.push_str(&a);
            s.push_str(&b);
            Value::from(s)
        }
        (op, a, b) => unreachable!("typechecked expression applied {op} to {a} and {b}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ints(names: &[&str]) -> Schema {
        Schema::new(names.iter().map(|n| (*n, ValueType::Int))).unwrap()
    }

    fn key() -> Key {
        hash_key(&[Value::Int(0)])
    }

    #[test]
    fn pagerank_outflow_first_iteration() {
        let schema = ints(&["rank", "degree"]);
        let e = (col("rank") * lit(5i64)).floor_div(col("degree") * lit(6i64));
        let v = eval(&e, key(), &[Value::Int(6000), Value::Int(1)], &schema).unwrap();
        assert_eq!(v, Value::Int(5000));
    }

    #[test]
    fn if_else_selects_branch() {
        let schema = ints(&["degree"]);
        let e = if_else(col("degree").eq(lit(0i64)), lit(0i64), lit(1i64));
        assert_eq!(eval(&e, key(), &[Value::Int(0)], &schema).unwrap(), Value::Int(0));
        assert_eq!(eval(&e, key(), &[Value::Int(3)], &schema).unwrap(), Value::Int(1));
    }

    #[test]
    fn arithmetic() {
        let schema = ints(&["x", "y"]);
        let e = col("x") + col("y") * lit(2i64);
        assert_eq!(
            eval(&e, key(), &[Value::Int(1), Value::Int(3)], &schema).unwrap(),
            Value::Int(7)
        );
    }

    #[test]
    fn typecheck_column() {
        let schema = Schema::new([("word", ValueType::Str)]).unwrap();
        assert_eq!(typecheck(&col("word"), &schema), Ok(ValueType::Str));
    }

    #[test]
    fn typecheck_mismatch_message() {
        let err = typecheck(&(lit(1i64) + lit("a")), &Schema::default()).unwrap_err();
        assert_eq!(err.path, "$");
        assert_eq!(err.kind.to_string(), "int + string");
    }

    #[test]
    fn typecheck_pagerank_guarded_division() {
        let schema = ints(&["rank", "degree"]);
        let e = if_else(
            col("degree").eq(lit(0i64)),
            lit(0i64),
            col("rank").floor_div(col("degree")),
        );
        assert_eq!(typecheck(&e, &schema), Ok(ValueType::Int));
    }

    #[test]
    fn typecheck_errors_are_located() {
        let schema = ints(&["x"]);
        let err = typecheck(&(col("x") + (col("x") * col("nope"))), &schema).unwrap_err();
        assert_eq!(err.path, "$.rhs.rhs");
        assert_eq!(err.kind, TypeErrorKind::UnknownColumn("nope".into()));

        let err = typecheck(&if_else(col("x"), lit(1i64), lit(2i64)), &schema).unwrap_err();
        assert_eq!(err.path, "$.cond");

        let err = typecheck(&if_else(lit(true), lit(1i64), lit("a")), &schema).unwrap_err();
        assert!(matches!(err.kind, TypeErrorKind::Branches { .. }));
    }

    #[test]
    fn division_by_zero_reports_key_and_path() {
        let schema = ints(&["x", "y"]);
        let e = lit(1i64) + col("x").floor_div(col("y"));
        let err = compile(&e, &schema)
            .unwrap()
            .eval(key(), &[Value::Int(1), Value::Int(0)])
            .unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::DivisionByZero);
        assert_eq!(err.path, "$.rhs");
        assert_eq!(err.key, key());
    }

    #[test]
    fn overflow_is_an_error() {
        let schema = ints(&["x"]);
        let err = eval(&(col("x") * lit(2i64)), key(), &[Value::Int(i64::MAX)], &schema)
            .unwrap_err();
        assert!(matches!(
            err,
            ExprError::Eval(EvalError {
                kind: EvalErrorKind::Overflow(BinOp::Mul),
                ..
            })
        ));
        assert_eq!(floor_div_i64(i64::MIN, -1), Err(EvalErrorKind::Overflow(BinOp::FloorDiv)));
    }

    #[test]
    fn guarded_branch_is_not_evaluated() {
        let schema = ints(&["d"]);
        let e = if_else(col("d").eq(lit(0i64)), lit(0i64), lit(10i64).floor_div(col("d")));
        assert_eq!(eval(&e, key(), &[Value::Int(0)], &schema).unwrap(), Value::Int(0));
    }

    #[test]
    fn this_id_and_pointer() {
        let schema = Schema::new([("u", ValueType::Str)]).unwrap();
        let k = key();
        assert_eq!(eval(&this_id(), k, &["a".into()], &schema).unwrap(), Value::Key(k));
        assert_eq!(
            eval(&pointer([col("u")]), k, &["a".into()], &schema).unwrap(),
            Value::Key(hash_key(&["a".into()]))
        );
    }

    proptest! {
        #[test]
        fn floor_div_matches_float_floor(a in -10_000i64..10_000, b in -100i64..100) {
            prop_assume!(b != 0);
            let expected = (a as f64 / b as f64).floor() as i64;
            prop_assert_eq!(floor_div_i64(a, b).unwrap(), expected);
        }

        #[test]
        fn eval_is_repeatable(x in any::<i32>(), y in any::<i32>()) {
            let schema = ints(&["x", "y"]);
            let e = if_else(col("x").lt(col("y")), col("x") * col("y"), col("x") - col("y"));
            let c = compile(&e, &schema).unwrap();
            let row = [Value::Int(x.into()), Value::Int(y.into())];
            prop_assert_eq!(c.eval(key(), &row), c.eval(key(), &row));
        }
    }
}
