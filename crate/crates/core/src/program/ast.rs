//! Syntax tree of the program dialect.

#[derive(Debug, Clone, PartialEq)]
pub struct Module {
    pub func: FunctionDef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<Param>,
    pub returns: Option<Expr>,
    pub body: Vec<Stmt>,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub default: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Expr(Expr),
    /// `a = b = value`
    Assign {
        targets: Vec<Target>,
        value: Expr,
    },
    AugAssign {
        target: Target,
        op: BinOp,
        value: Expr,
    },
    Return(Option<Expr>),
    If {
        cond: Expr,
        body: Vec<Stmt>,
        orelse: Vec<Stmt>,
    },
    For {
        target: Target,
        iter: Expr,
        body: Vec<Stmt>,
    },
    While {
        cond: Expr,
        body: Vec<Stmt>,
    },
    Break,
    Continue,
    Pass,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Name(String),
    Subscript(Box<Expr>, Box<Expr>),
    Tuple(Vec<Target>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Const {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FPart {
    Lit(String),
    Expr { expr: Expr, conversion: Option<char>, spec: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::FloorDiv => "//",
            BinOp::Mod => "%",
            BinOp::Pow => "**",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Pos,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoolOp {
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    NotEq,
    Lt,
    LtE,
    Gt,
    GtE,
    In,
    NotIn,
    Is,
    IsNot,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::NotEq => "!=",
            CmpOp::Lt => "<",
            CmpOp::LtE => "<=",
            CmpOp::Gt => ">",
            CmpOp::GtE => ">=",
            CmpOp::In => "in",
            CmpOp::NotIn => "not in",
            CmpOp::Is => "is",
            CmpOp::IsNot => "is not",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comprehension {
    pub target: Target,
    pub iter: Expr,
    pub ifs: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Const(Const),
    Name(String),
    FString(Vec<FPart>),
    List(Vec<Expr>),
    Tuple(Vec<Expr>),
    Dict(Vec<(Expr, Expr)>),
    Unary(UnOp, Box<Expr>),
    Binary(Box<Expr>, BinOp, Box<Expr>),
    Bool(BoolOp, Vec<Expr>),
    Compare(Box<Expr>, Vec<(CmpOp, Expr)>),
    IfExp {
        cond: Box<Expr>,
        body: Box<Expr>,
        orelse: Box<Expr>,
    },
    Lambda {
        params: Vec<String>,
        body: Box<Expr>,
    },
    Call {
        func: Box<Expr>,
        args: Vec<Expr>,
        kwargs: Vec<(String, Expr)>,
    },
    Attribute(Box<Expr>, String),
    Subscript(Box<Expr>, Box<Expr>),
    Slice {
        lower: Option<Box<Expr>>,
        upper: Option<Box<Expr>>,
        step: Option<Box<Expr>>,
    },
    ListComp {
        elt: Box<Expr>,
        generators: Vec<Comprehension>,
    },
    DictComp {
        key: Box<Expr>,
        value: Box<Expr>,
        generators: Vec<Comprehension>,
    },
    /// Generator expressions are evaluated eagerly into a list.
    GeneratorExp {
        elt: Box<Expr>,
        generators: Vec<Comprehension>,
    },
}

/// Walks every expression in a statement list, depth first.
pub fn walk_exprs<'a>(stmts: &'a [Stmt], f: &mut dyn FnMut(&'a Expr)) {
    fn target<'a>(t: &'a Target, f: &mut dyn FnMut(&'a Expr)) {
        match t {
            Target::Name(_) => {}
            Target::Subscript(a, b) => {
                expr(a, f);
                expr(b, f);
            }
            Target::Tuple(ts) => ts.iter().for_each(|t| target(t, f)),
        }
    }
    fn comps<'a>(gens: &'a [Comprehension], f: &mut dyn FnMut(&'a Expr)) {
        for g in gens {
            target(&g.target, f);
            expr(&g.iter, f);
            g.ifs.iter().for_each(|e| expr(e, f));
        }
    }
    fn expr<'a>(e: &'a Expr, f: &mut dyn FnMut(&'a Expr)) {
        f(e);
        match &e.kind {
            ExprKind::Const(_) | ExprKind::Name(_) => {}
            ExprKind::FString(parts) => {
                for p in parts {
                    if let FPart::Expr { expr: inner, .. } = p {
                        expr(inner, f);
                    }
                }
            }
            ExprKind::List(xs) | ExprKind::Tuple(xs) => xs.iter().for_each(|x| expr(x, f)),
            ExprKind::Dict(kv) => kv.iter().for_each(|(k, v)| {
                expr(k, f);
                expr(v, f);
            }),
            ExprKind::Unary(_, a) | ExprKind::Attribute(a, _) | ExprKind::Lambda { body: a, .. } => expr(a, f),
            ExprKind::Binary(a, _, b) | ExprKind::Subscript(a, b) => {
                expr(a, f);
                expr(b, f);
            }
            ExprKind::Bool(_, xs) => xs.iter().for_each(|x| expr(x, f)),
            ExprKind::Compare(a, rest) => {
                expr(a, f);
                rest.iter().for_each(|(_, x)| expr(x, f));
            }
            ExprKind::IfExp { cond, body, orelse } => {
                expr(cond, f);
                expr(body, f);
                expr(orelse, f);
            }
            ExprKind::Call { func, args, kwargs } => {
                expr(func, f);
                args.iter().for_each(|x| expr(x, f));
                kwargs.iter().for_each(|(_, x)| expr(x, f));
            }
            ExprKind::Slice { lower, upper, step } => {
                for x in [lower, upper, step].into_iter().flatten() {
                    expr(x, f);
                }
            }
            ExprKind::ListComp { elt, generators } | ExprKind::GeneratorExp { elt, generators } => {
                comps(generators, f);
                expr(elt, f);
            }
            ExprKind::DictComp { key, value, generators } => {
                comps(generators, f);
                expr(key, f);
                expr(value, f);
            }
        }
    }
    for s in stmts {
        match &s.kind {
            StmtKind::Expr(e) | StmtKind::Return(Some(e)) => expr(e, f),
            StmtKind::Assign { targets, value } => {
                targets.iter().for_each(|t| target(t, f));
                expr(value, f);
            }
            StmtKind::AugAssign { target: t, value, .. } => {
                target(t, f);
                expr(value, f);
            }
            StmtKind::If { cond, body, orelse } => {
                expr(cond, f);
                walk_exprs(body, f);
                walk_exprs(orelse, f);
            }
            StmtKind::For { target: t, iter, body } => {
                target(t, f);
                expr(iter, f);
                walk_exprs(body, f);
            }
            StmtKind::While { cond, body } => {
                expr(cond, f);
                walk_exprs(body, f);
            }
            StmtKind::Return(None) | StmtKind::Break | StmtKind::Continue | StmtKind::Pass => {}
        }
    }
}
