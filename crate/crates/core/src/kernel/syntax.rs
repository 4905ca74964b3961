//! Recursive-descent parser for the `.kbl` rule language.
//!
//! ```text
//! program  := decl*
//! decl     := "fact" atom "." | "rule" atom [":-" literal ("," literal)*] "."
//! literal  := ["not"] atom
//! atom     := PRED ["(" [term ("," term)*] ")"]
//! term     := CONST | VAR
//! ```

use super::{check_arities, Atom, Fact, KernelError, KnowledgeBase, Rule, Term};

/// Bumped whenever the accepted grammar changes.
pub const RULE_LANGUAGE_VERSION: &str = "kbl/1";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Lower(String),
    Upper(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Implies,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Lower(s) | Tok::Upper(s) => format!("`{s}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Implies => "`:-`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn lex(src: &str) -> Result<Vec<Spanned>, KernelError> {
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    let (mut line, mut col) = (1usize, 1usize);

    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, col);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars<'_>>| {
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        };
        match c {
            c if c.is_whitespace() => {
                bump(&mut chars);
            }
            '%' | '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    bump(&mut chars);
                }
            }
            '(' | ')' | ',' | '.' => {
                bump(&mut chars);
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    _ => Tok::Dot,
                };
                out.push(Spanned {
                    tok,
                    line: tl,
                    col: tc,
                });
            }
            ':' => {
                bump(&mut chars);
                if chars.peek() != Some(&'-') {
                    return Err(KernelError::Syntax {
                        line: tl,
                        col: tc,
                        expected: "`:-`".into(),
                    });
                }
                bump(&mut chars);
                out.push(Spanned {
                    tok: Tok::Implies,
                    line: tl,
                    col: tc,
                });
            }
            '?' => {
                bump(&mut chars);
                let mut name = String::from("?");
                while let Some(&c) = chars.peek().filter(|c| is_ident_char(**c)) {
                    name.push(c);
                    bump(&mut chars);
                }
                if name.len() == 1 {
                    return Err(KernelError::Syntax {
                        line: tl,
                        col: tc,
                        expected: "variable name after `?`".into(),
                    });
                }
                out.push(Spanned {
                    tok: Tok::Upper(name),
                    line: tl,
                    col: tc,
                });
            }
            c if is_ident_char(c) => {
                let mut name = String::new();
                while let Some(&c) = chars.peek().filter(|c| is_ident_char(**c)) {
                    name.push(c);
                    bump(&mut chars);
                }
                let tok = if c.is_ascii_uppercase() || c == '_' {
                    Tok::Upper(name)
                } else {
                    Tok::Lower(name)
                };
                out.push(Spanned {
                    tok,
                    line: tl,
                    col: tc,
                });
            }
            other => {
                return Err(KernelError::Syntax {
                    line: tl,
                    col: tc,
                    expected: format!("a declaration, atom or punctuation, found `{other}`"),
                });
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Self, KernelError> {
        Ok(Parser {
            toks: lex(src)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> KernelError {
        let t = self.peek();
        KernelError::Syntax {
            line: t.line,
            col: t.col,
            expected: format!("{expected}, found {}", t.tok.describe()),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), KernelError> {
        if self.peek().tok == tok {
            self.next();
            Ok(())
        } else {
            Err(self.error(what))
        }
    }

    fn at_eof(&self) -> bool {
        self.peek().tok == Tok::Eof
    }

    fn term(&mut self) -> Result<Term, KernelError> {
        match self.peek().tok.clone() {
            Tok::Lower(s) => {
                self.next();
                Ok(Term::Const(s))
            }
            Tok::Upper(s) => {
                self.next();
                Ok(Term::Var(s))
            }
            _ => Err(self.error("a constant or variable")),
        }
    }

    fn atom(&mut self) -> Result<Atom, KernelError> {
        let predicate = match self.peek().tok.clone() {
            Tok::Lower(s) if s != "not" && !s.starts_with(|c: char| c.is_ascii_digit()) => {
                self.next();
                s
            }
            _ => return Err(self.error("a predicate name")),
        };
        let mut args = Vec::new();
        if self.peek().tok == Tok::LParen {
            self.next();
            if self.peek().tok != Tok::RParen {
                args.push(self.term()?);
                while self.peek().tok == Tok::Comma {
                    self.next();
                    args.push(self.term()?);
                }
            }
            self.expect(Tok::RParen, "`,` or `)`")?;
        }
        Ok(Atom { predicate, args })
    }

    fn rule_body(&mut self, head: Atom) -> Result<Rule, KernelError> {
        let mut body_pos = Vec::new();
        let mut body_neg = Vec::new();
        if self.peek().tok == Tok::Implies {
            self.next();
            loop {
                let negated = matches!(&self.peek().tok, Tok::Lower(s) if s == "not");
                if negated {
                    self.next();
                    body_neg.push(self.atom()?);
                } else {
                    body_pos.push(self.atom()?);
                }
                if self.peek().tok != Tok::Comma {
                    break;
                }
                self.next();
            }
        }
        Ok(Rule {
            head,
            body_pos,
            body_neg,
        })
    }

    fn program(&mut self) -> Result<(Vec<Fact>, Vec<Rule>), KernelError> {
        let mut facts = Vec::new();
        let mut rules = Vec::new();
        while !self.at_eof() {
            match self.peek().tok.clone() {
                Tok::Lower(kw) if kw == "fact" => {
                    self.next();
                    let start = self.peek().clone();
                    let atom = self.atom()?;
                    if !atom.is_ground() {
                        return Err(KernelError::Syntax {
                            line: start.line,
                            col: start.col,
                            expected: format!("a ground fact, `{atom}` has variables"),
                        });
                    }
                    facts.push(Fact::new(atom)?);
                }
                Tok::Lower(kw) if kw == "rule" => {
                    self.next();
                    let head = self.atom()?;
                    let rule = self.rule_body(head)?;
                    rule.check_safety()?;
                    rules.push(rule);
                }
                _ => return Err(self.error("`fact` or `rule`")),
            }
            self.expect(Tok::Dot, "`.` ending the declaration")?;
        }
        Ok((facts, rules))
    }
}

/// Parses a `.kbl` program into a validated knowledge base.
pub fn parse_program(src: &str) -> Result<KnowledgeBase, KernelError> {
    let (facts, rules) = Parser::new(src)?.program()?;
    KnowledgeBase::new(facts, rules)
}

/// A bare atom such as `p(a, X)`; an optional trailing `.` is accepted.
pub(crate) fn parse_atom(src: &str) -> Result<Atom, KernelError> {
    let mut p = Parser::new(src)?;
    let atom = p.atom()?;
    if p.peek().tok == Tok::Dot {
        p.next();
    }
    if !p.at_eof() {
        return Err(p.error("end of atom"));
    }
    Ok(atom)
}

/// A bare rule such as `q(X) :- p(X)`, checked for safety and arity.
pub(crate) fn parse_rule(src: &str) -> Result<Rule, KernelError> {
    let mut p = Parser::new(src)?;
    let head = p.atom()?;
    let rule = p.rule_body(head)?;
    if p.peek().tok == Tok::Dot {
        p.next();
    }
    if !p.at_eof() {
        return Err(p.error("end of rule"));
    }
    rule.check_safety()?;
    check_arities(rule.atoms())?;
    Ok(rule)
}
