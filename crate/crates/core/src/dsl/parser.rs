use super::{BinOp, CmpOp, DslError, DslErrorKind, Expr};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Let,
    In,
    And,
    Or,
    Not,
    Plus,
    Minus,
    Star,
    Lt,
    Le,
    EqEq,
    Assign,
    Gt,
    Ge,
    LParen,
    RParen,
    Comma,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

const CONTROL_KEYWORDS: &[&str] = &[
    "for", "while", "loop", "if", "else", "def", "fn", "function", "return", "global", "lambda",
];

fn lex(source: &str) -> Result<Vec<Token>, DslError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut column) = (0usize, 1usize, 1usize);
    let err = |line, column, kind| DslError { line, column, kind };
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, column);
        let mut push = |tok: Tok, len: usize, i: &mut usize, column: &mut usize| {
            out.push(Token {
                tok,
                line: start_line,
                column: start_col,
            });
            *i += len;
            *column += len;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                column = 1;
            }
            c if c.is_whitespace() => {
                i += 1;
                column += 1;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '+' => push(Tok::Plus, 1, &mut i, &mut column),
            '-' => push(Tok::Minus, 1, &mut i, &mut column),
            '*' => push(Tok::Star, 1, &mut i, &mut column),
            '(' => push(Tok::LParen, 1, &mut i, &mut column),
            ')' => push(Tok::RParen, 1, &mut i, &mut column),
            ',' => push(Tok::Comma, 1, &mut i, &mut column),
            '<' | '>' | '=' => {
                let eq = chars.get(i + 1) == Some(&'=');
                let (tok, len) = match (c, eq) {
                    ('<', true) => (Tok::Le, 2),
                    ('<', false) => (Tok::Lt, 1),
                    ('>', true) => (Tok::Ge, 2),
                    ('>', false) => (Tok::Gt, 1),
                    ('=', true) => (Tok::EqEq, 2),
                    _ => (Tok::Assign, 1),
                };
                push(tok, len, &mut i, &mut column);
            }
            '/' | '%' | '^' => {
                let what = match c {
                    '/' => "division",
                    '%' => "the remainder operator",
                    _ => "exponentiation",
                };
                return Err(err(line, column, DslErrorKind::Unsupported(what.into())));
            }
            c if c.is_ascii_digit() || c == '.' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                    j += 1;
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        while k < chars.len() && chars[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                let value: f64 = text.parse().map_err(|_| {
                    err(
                        line,
                        column,
                        DslErrorKind::Syntax(format!("malformed number `{text}`")),
                    )
                })?;
                if !value.is_finite() {
                    return Err(err(
                        line,
                        column,
                        DslErrorKind::Syntax(format!("number `{text}` is out of range")),
                    ));
                }
                push(Tok::Num(value), j - i, &mut i, &mut column);
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                let tok = match word.as_str() {
                    "let" => Tok::Let,
                    "in" => Tok::In,
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    w if CONTROL_KEYWORDS.contains(&w) => {
                        return Err(err(
                            line,
                            column,
                            DslErrorKind::Unsupported(format!("`{w}`")),
                        ))
                    }
                    _ => Tok::Ident(word),
                };
                push(tok, j - i, &mut i, &mut column);
            }
            other => {
                return Err(err(
                    line,
                    column,
                    DslErrorKind::Syntax(format!("unexpected character `{other}`")),
                ))
            }
        }
    }
    out.push(Token {
        tok: Tok::End,
        line,
        column,
    });
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    declared: &'a [String],
    scope: Vec<String>,
}

/// Parses `source`, checking that every variable is either in `declared` or
/// bound by an enclosing `let`.
pub fn parse(source: &str, declared: &[String]) -> Result<Expr, DslError> {
    let mut p = Parser {
        tokens: lex(source)?,
        pos: 0,
        declared,
        scope: Vec::new(),
    };
    let expr = p.expr()?;
    match p.peek() {
        Tok::End => Ok(expr),
        Tok::Assign => Err(p.error_here(DslErrorKind::Syntax(
            "`=` only appears in `let` bindings; use `==` to compare".into(),
        ))),
        other => Err(p.error_here(DslErrorKind::Syntax(format!(
            "unexpected {} after the end of the expression",
            describe_tok(other)
        )))),
    }
}

fn describe_tok(tok: &Tok) -> String {
    match tok {
        Tok::Num(x) => format!("number {x}"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::End => "end of input".into(),
        Tok::Let => "`let`".into(),
        Tok::In => "`in`".into(),
        Tok::And => "`and`".into(),
        Tok::Or => "`or`".into(),
        Tok::Not => "`not`".into(),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Lt => "`<`".into(),
        Tok::Le => "`<=`".into(),
        Tok::EqEq => "`==`".into(),
        Tok::Assign => "`=`".into(),
        Tok::Gt => "`>`".into(),
        Tok::Ge => "`>=`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
    }
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, kind: DslErrorKind) -> DslError {
        let t = &self.tokens[self.pos];
        DslError {
            line: t.line,
            column: t.column,
            kind,
        }
    }

    fn expect(&mut self, want: Tok) -> Result<(), DslError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(self.error_here(DslErrorKind::Syntax(format!(
                "expected {}, found {}",
                describe_tok(&want),
                describe_tok(self.peek())
            ))))
        }
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        if *self.peek() != Tok::Let {
            return self.or();
        }
        self.bump();
        let name = match self.peek().clone() {
            Tok::Ident(name) if name == "min" || name == "max" => {
                return Err(self.error_here(DslErrorKind::Syntax(format!(
                    "`{name}` is reserved and cannot be bound"
                ))))
            }
            Tok::Ident(name) => {
                self.bump();
                name
            }
            other => {
                return Err(self.error_here(DslErrorKind::Syntax(format!(
                    "expected a name after `let`, found {}",
                    describe_tok(&other)
                ))))
            }
        };
        self.expect(Tok::Assign)?;
        let value = self.expr()?;
        self.expect(Tok::In)?;
        self.scope.push(name.clone());
        let body = self.expr();
        self.scope.pop();
        Ok(Expr::Let {
            name,
            value: Box::new(value),
            body: Box::new(body?),
        })
    }

    fn or(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            lhs = Expr::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.not()?;
        while *self.peek() == Tok::And {
            self.bump();
            lhs = Expr::And(Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, DslError> {
        if *self.peek() == Tok::Not {
            self.bump();
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr, DslError> {
        let lhs = self.sum()?;
        let op = match self.peek() {
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::EqEq => CmpOp::Eq,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.sum()?;
        if matches!(
            self.peek(),
            Tok::Lt | Tok::Le | Tok::EqEq | Tok::Gt | Tok::Ge
        ) {
            return Err(self.error_here(DslErrorKind::Syntax(
                "comparisons do not chain; combine them with `and`".into(),
            )));
        }
        Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)))
    }

    fn sum(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.unary()?;
        while *self.peek() == Tok::Star {
            self.bump();
            lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, DslError> {
        match self.peek().clone() {
            Tok::Num(x) => {
                self.bump();
                Ok(Expr::Num(x))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name)
                if (name == "min" || name == "max") && *self.peek_at(1) == Tok::LParen =>
            {
                self.bump();
                self.bump();
                let a = self.expr()?;
                self.expect(Tok::Comma)?;
                let b = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(if name == "min" {
                    Expr::Min(Box::new(a), Box::new(b))
                } else {
                    Expr::Max(Box::new(a), Box::new(b))
                })
            }
            Tok::Ident(name) => {
                match self.peek_at(1) {
                    Tok::Assign => {
                        return Err(self.error_here(DslErrorKind::NonLocalAssignment(name.clone())))
                    }
                    Tok::LParen => {
                        return Err(
                            self.error_here(DslErrorKind::Unsupported(format!("calling `{name}`")))
                        )
                    }
                    _ => {}
                }
                if !self.scope.contains(&name) && !self.declared.contains(&name) {
                    return Err(self.error_here(DslErrorKind::Undeclared(name)));
                }
                self.bump();
                Ok(Expr::Var(name))
            }
            other => Err(self.error_here(DslErrorKind::Syntax(format!(
                "expected a value, found {}",
                describe_tok(&other)
            )))),
        }
    }
}
