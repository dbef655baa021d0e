//! Tiny integer language rendered to Python, Java and C++ so generated tasks
//! have known expected outputs in every language.

use std::collections::HashMap;

use rand::Rng;

use crate::model::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Expr {
    Int(i64),
    Var(String),
    Index(String, usize),
    Bin(Op, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cmp {
    Gt,
    Lt,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Stmt {
    Assign {
        var: String,
        value: Expr,
        declare: bool,
    },
    Array {
        var: String,
        items: Vec<Expr>,
    },
    If {
        lhs: Expr,
        cmp: Cmp,
        rhs: Expr,
        then: Vec<Stmt>,
        otherwise: Vec<Stmt>,
    },
    Loop {
        var: String,
        count: i64,
        body: Vec<Stmt>,
    },
    Return(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Function {
    pub name: String,
    pub params: [String; 2],
    pub body: Vec<Stmt>,
}

/// One rendered source line and whether it may be masked out as a task.
#[derive(Debug, Clone)]
pub(crate) struct Line {
    pub text: String,
    pub maskable: bool,
    pub is_return: bool,
}

impl Function {
    pub fn eval(&self, a: i64, b: i64) -> i64 {
        let mut env: HashMap<String, Value> = HashMap::new();
        env.insert(self.params[0].clone(), Value::Int(a));
        env.insert(self.params[1].clone(), Value::Int(b));
        exec_block(&self.body, &mut env).expect("generated functions always return")
    }
}

#[derive(Debug, Clone)]
enum Value {
    Int(i64),
    Array(Vec<i64>),
}

fn eval_expr(expr: &Expr, env: &HashMap<String, Value>) -> i64 {
    match expr {
        Expr::Int(v) => *v,
        Expr::Var(name) => match env.get(name) {
            Some(Value::Int(v)) => *v,
            _ => panic!("unbound scalar {name}"),
        },
        Expr::Index(name, idx) => match env.get(name) {
            Some(Value::Array(items)) => items[*idx],
            _ => panic!("unbound array {name}"),
        },
        Expr::Bin(op, l, r) => {
            let (l, r) = (eval_expr(l, env), eval_expr(r, env));
            match op {
                Op::Add => l.wrapping_add(r),
                Op::Sub => l.wrapping_sub(r),
                Op::Mul => l.wrapping_mul(r),
            }
        }
    }
}

fn exec_block(stmts: &[Stmt], env: &mut HashMap<String, Value>) -> Option<i64> {
    for stmt in stmts {
        match stmt {
            Stmt::Assign { var, value, .. } => {
                let v = eval_expr(value, env);
                env.insert(var.clone(), Value::Int(v));
            }
            Stmt::Array { var, items } => {
                let vals = items.iter().map(|e| eval_expr(e, env)).collect();
                env.insert(var.clone(), Value::Array(vals));
            }
            Stmt::If {
                lhs,
                cmp,
                rhs,
                then,
                otherwise,
            } => {
                let (l, r) = (eval_expr(lhs, env), eval_expr(rhs, env));
                let taken = match cmp {
                    Cmp::Gt => l > r,
                    Cmp::Lt => l < r,
                };
                let branch = if taken { then } else { otherwise };
                if let Some(v) = exec_block(branch, env) {
                    return Some(v);
                }
            }
            Stmt::Loop { var, count, body } => {
                for i in 0..*count {
                    env.insert(var.clone(), Value::Int(i));
                    if let Some(v) = exec_block(body, env) {
                        return Some(v);
                    }
                }
            }
            Stmt::Return(e) => return Some(eval_expr(e, env)),
        }
    }
    None
}

fn render_expr(expr: &Expr, top: bool) -> String {
    match expr {
        Expr::Int(v) => v.to_string(),
        Expr::Var(name) => name.clone(),
        Expr::Index(name, idx) => format!("{name}[{idx}]"),
        Expr::Bin(op, l, r) => {
            let sym = match op {
                Op::Add => "+",
                Op::Sub => "-",
                Op::Mul => "*",
            };
            let inner = format!("{} {sym} {}", render_expr(l, false), render_expr(r, false));
            if top {
                inner
            } else {
                format!("({inner})")
            }
        }
    }
}

fn cmp_sym(cmp: Cmp) -> &'static str {
    match cmp {
        Cmp::Gt => ">",
        Cmp::Lt => "<",
    }
}

fn int_type(lang: &Language) -> &'static str {
    match lang {
        Language::Java => "long",
        _ => "long long",
    }
}

fn render_block(stmts: &[Stmt], lang: &Language, depth: usize, out: &mut Vec<Line>) {
    let pad = "    ".repeat(depth);
    let python = *lang == Language::Python;
    let push = |out: &mut Vec<Line>, text: String, maskable: bool, is_return: bool| {
        out.push(Line {
            text,
            maskable,
            is_return,
        })
    };
    for stmt in stmts {
        match stmt {
            Stmt::Assign {
                var,
                value,
                declare,
            } => {
                let rhs = render_expr(value, true);
                let text = if python {
                    format!("{pad}{var} = {rhs}")
                } else if *declare {
                    format!("{pad}{} {var} = {rhs};", int_type(lang))
                } else {
                    format!("{pad}{var} = {rhs};")
                };
                push(out, text, true, false);
            }
            Stmt::Array { var, items } => {
                let items: Vec<String> = items.iter().map(|e| render_expr(e, true)).collect();
                let joined = items.join(", ");
                let text = match lang {
                    Language::Python => format!("{pad}{var} = [{joined}]"),
                    Language::Java => format!("{pad}long[] {var} = {{{joined}}};"),
                    _ => format!("{pad}long long {var}[] = {{{joined}}};"),
                };
                push(out, text, true, false);
            }
            Stmt::If {
                lhs,
                cmp,
                rhs,
                then,
                otherwise,
            } => {
                let cond = format!(
                    "{} {} {}",
                    render_expr(lhs, false),
                    cmp_sym(*cmp),
                    render_expr(rhs, false)
                );
                if python {
                    push(out, format!("{pad}if {cond}:"), true, false);
                    render_block(then, lang, depth + 1, out);
                    if !otherwise.is_empty() {
                        push(out, format!("{pad}else:"), false, false);
                        render_block(otherwise, lang, depth + 1, out);
                    }
                } else {
                    push(out, format!("{pad}if ({cond}) {{"), true, false);
                    render_block(then, lang, depth + 1, out);
                    if otherwise.is_empty() {
                        push(out, format!("{pad}}}"), true, false);
                    } else {
                        push(out, format!("{pad}}} else {{"), true, false);
                        render_block(otherwise, lang, depth + 1, out);
                        push(out, format!("{pad}}}"), true, false);
                    }
                }
            }
            Stmt::Loop { var, count, body } => {
                let header = match lang {
                    Language::Python => format!("{pad}for {var} in range({count}):"),
                    Language::Java => format!("{pad}for (long {var} = 0; {var} < {count}; {var}++) {{"),
                    _ => format!("{pad}for (long long {var} = 0; {var} < {count}; {var}++) {{"),
                };
                push(out, header, true, false);
                render_block(body, lang, depth + 1, out);
                if !python {
                    push(out, format!("{pad}}}"), true, false);
                }
            }
            Stmt::Return(e) => {
                let semi = if python { "" } else { ";" };
                push(out, format!("{pad}return {}{semi}", render_expr(e, true)), true, true);
            }
        }
    }
}

impl Function {
    /// Source lines of the function (and, for Java, its enclosing class).
    pub fn render(&self, lang: &Language, class_name: &str) -> Vec<Line> {
        let fixed = |text: String| Line {
            text,
            maskable: false,
            is_return: false,
        };
        let [a, b] = &self.params;
        let mut out = Vec::new();
        match lang {
            Language::Python => {
                out.push(fixed(format!("def {}({a}, {b}):", self.name)));
                render_block(&self.body, lang, 1, &mut out);
            }
            Language::Java => {
                out.push(fixed(format!("public class {class_name} {{")));
                out.push(fixed(format!("    static long {}(long {a}, long {b}) {{", self.name)));
                let mut body = Vec::new();
                render_block(&self.body, lang, 2, &mut body);
                out.extend(body);
                out.push(fixed("    }".into()));
                out.push(fixed("}".into()));
            }
            _ => {
                out.push(fixed(format!(
                    "long long {}(long long {a}, long long {b}) {{",
                    self.name
                )));
                render_block(&self.body, lang, 1, &mut out);
                out.push(fixed("}".into()));
            }
        }
        out
    }
}

struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    scalars: Vec<String>,
    arrays: Vec<(String, usize)>,
    next_var: usize,
    loop_vars: usize,
}

const NAMES: &[&str] = &[
    "total", "count", "acc", "delta", "value", "step", "span", "width", "score", "offset", "level",
    "shift",
];

impl<R: Rng> Gen<'_, R> {
    fn fresh(&mut self) -> String {
        let base = NAMES[self.next_var % NAMES.len()];
        let name = if self.next_var < NAMES.len() {
            base.to_owned()
        } else {
            format!("{base}{}", self.next_var / NAMES.len())
        };
        self.next_var += 1;
        name
    }

    fn leaf(&mut self) -> Expr {
        let roll = self.rng.random_range(0..10);
        if roll < 3 {
            Expr::Int(self.rng.random_range(1..10))
        } else if roll < 5 && !self.arrays.is_empty() {
            let (name, len) = self.arrays[self.rng.random_range(0..self.arrays.len())].clone();
            Expr::Index(name, self.rng.random_range(0..len))
        } else {
            Expr::Var(self.scalars[self.rng.random_range(0..self.scalars.len())].clone())
        }
    }

    /// `leaf op leaf`, optionally `+ k`; multiplication only by small literals
    /// keeps magnitudes bounded.
    fn expr(&mut self) -> Expr {
        let base = match self.rng.random_range(0..4) {
            0 => Expr::Bin(Op::Mul, Box::new(self.leaf()), Box::new(Expr::Int(self.rng.random_range(2..4)))),
            1 => Expr::Bin(Op::Sub, Box::new(self.leaf()), Box::new(self.leaf())),
            _ => Expr::Bin(Op::Add, Box::new(self.leaf()), Box::new(self.leaf())),
        };
        if self.rng.random_bool(0.5) {
            Expr::Bin(Op::Add, Box::new(base), Box::new(Expr::Int(self.rng.random_range(1..10))))
        } else {
            base
        }
    }

    fn simple(&mut self, out: &mut Vec<Stmt>, allow_new: bool) {
        if allow_new && (self.scalars.len() < 4 || self.rng.random_bool(0.3)) {
            let var = self.fresh();
            let value = self.expr();
            self.scalars.push(var.clone());
            out.push(Stmt::Assign {
                var,
                value,
                declare: true,
            });
        } else {
            // Params are reassigned too; they are never loop-bound.
            let target = self.scalars[self.rng.random_range(0..self.scalars.len())].clone();
            let value = Expr::Bin(Op::Add, Box::new(Expr::Var(target.clone())), Box::new(self.expr()));
            out.push(Stmt::Assign {
                var: target,
                value,
                declare: false,
            });
        }
    }

    fn block(&mut self, n: usize) -> Vec<Stmt> {
        let mut out = Vec::new();
        for _ in 0..n {
            self.simple(&mut out, false);
        }
        out
    }

    fn body(&mut self) -> Vec<Stmt> {
        let mut body = Vec::new();
        for _ in 0..self.rng.random_range(1..3) {
            self.simple(&mut body, true);
        }
        for _ in 0..self.rng.random_range(2..5) {
            match self.rng.random_range(0..4) {
                0 => {
                    let var = format!("vals{}", self.arrays.len());
                    let n = self.rng.random_range(2..5);
                    let items = (0..n).map(|_| self.expr()).collect();
                    self.arrays.push((var.clone(), n));
                    body.push(Stmt::Array { var, items });
                }
                1 => {
                    let lhs = self.leaf();
                    let rhs = self.leaf();
                    let cmp = if self.rng.random_bool(0.5) { Cmp::Gt } else { Cmp::Lt };
                    let n_then = self.rng.random_range(1..3);
                    let then = self.block(n_then);
                    let otherwise = if self.rng.random_bool(0.5) {
                        let n_else = self.rng.random_range(1..3);
                        self.block(n_else)
                    } else {
                        Vec::new()
                    };
                    body.push(Stmt::If {
                        lhs,
                        cmp,
                        rhs,
                        then,
                        otherwise,
                    });
                }
                2 => {
                    let var = ["i", "j", "k"][self.loop_vars % 3].to_owned();
                    let var = if self.loop_vars >= 3 {
                        format!("{var}{}", self.loop_vars)
                    } else {
                        var
                    };
                    self.loop_vars += 1;
                    let count = self.rng.random_range(2..5);
                    self.scalars.push(var.clone());
                    let n_body = self.rng.random_range(1..3);
                    let mut inner = Vec::new();
                    for _ in 0..n_body {
                        // Loop bodies never assign the loop variable itself.
                        let candidates: Vec<String> = self.scalars[..self.scalars.len() - 1].to_vec();
                        let target = candidates[self.rng.random_range(0..candidates.len())].clone();
                        let value = Expr::Bin(Op::Add, Box::new(Expr::Var(target.clone())), Box::new(self.expr()));
                        inner.push(Stmt::Assign {
                            var: target,
                            value,
                            declare: false,
                        });
                    }
                    self.scalars.pop();
                    body.push(Stmt::Loop {
                        var,
                        count,
                        body: inner,
                    });
                }
                _ => self.simple(&mut body, true),
            }
        }
        // Final body-level assignment keeps the return line's indentation
        // derivable from the line above it.
        let result = "result".to_owned();
        let value = self.expr();
        body.push(Stmt::Assign {
            var: result.clone(),
            value,
            declare: true,
        });
        let k = self.rng.random_range(1..10);
        let leaf = self.leaf();
        body.push(Stmt::Return(Expr::Bin(
            Op::Add,
            Box::new(Expr::Bin(Op::Add, Box::new(Expr::Var(result)), Box::new(leaf))),
            Box::new(Expr::Int(k)),
        )));
        body
    }
}

pub(crate) fn random_function<R: Rng>(rng: &mut R, name: String) -> Function {
    let params = ["a".to_owned(), "b".to_owned()];
    let mut gen = Gen {
        rng,
        scalars: params.to_vec(),
        arrays: Vec::new(),
        next_var: 0,
        loop_vars: 0,
    };
    let body = gen.body();
    Function { name, params, body }
}
