//! Recursive-descent parser for the ASCII formula grammar.
//!
//! ```text
//! implies := or ( "->" implies )?
//! or      := and ( "|" and )*
//! and     := until ( "&" until )*
//! until   := unary ( "U[lo,hi]" unary )?
//! unary   := "!" unary | "G[lo,hi]" unary | "F[lo,hi]" unary | primary
//! primary := "(" implies ")" | "true" | linear CMP number
//! linear  := term ( ("+" | "-") term )*
//! term    := ( ("+" | "-")? number "*" )? ident
//! ```
//!
//! A single bare identifier on the left of a comparison yields an `Atom`; any
//! explicit coefficient or more than one term yields a `LinAtom`.

use thiserror::Error;

use super::formula::{Cmp, Formula, Window};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown operator `{name}` at byte {offset}")]
    UnknownOperator { offset: usize, name: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    And,
    Or,
    Bang,
    Arrow,
    Cmp(Cmp),
    Plus,
    Minus,
    Star,
    End,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Num(v) => format!("number {v}"),
        Tok::End => "end of input".into(),
        other => format!("{other:?}"),
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'[' => Tok::LBracket,
            b']' => Tok::RBracket,
            b',' => Tok::Comma,
            b'&' => Tok::And,
            b'|' => Tok::Or,
            b'!' => Tok::Bang,
            b'+' => Tok::Plus,
            b'*' => Tok::Star,
            b'-' if bytes.get(i + 1) == Some(&b'>') => {
                i += 1;
                Tok::Arrow
            }
            b'-' => Tok::Minus,
            b'>' | b'<' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                if eq {
                    i += 1;
                }
                Tok::Cmp(match (c, eq) {
                    (b'>', true) => Cmp::Ge,
                    (b'>', false) => Cmp::Gt,
                    (b'<', true) => Cmp::Le,
                    _ => Cmp::Lt,
                })
            }
            b'0'..=b'9' | b'.' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text = &src[i..j];
                let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                i = j;
                out.push((start, Tok::Num(v)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push((start, Tok::Ident(src[i..j].to_string())));
                i = j;
                continue;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        i += 1;
        out.push((start, tok));
    }
    out.push((src.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected {what}, found {}", describe(self.peek())))
        }
    }

    fn implies(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.or()?;
        if *self.peek() == Tok::Arrow {
            self.bump();
            let rhs = self.implies()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            lhs = Formula::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.until()?;
        while *self.peek() == Tok::And {
            self.bump();
            lhs = Formula::and(lhs, self.until()?);
        }
        Ok(lhs)
    }

    fn is_temporal_op(&self) -> bool {
        matches!(self.peek(), Tok::Ident(_)) && *self.peek_at(1) == Tok::LBracket
    }

    fn until(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.unary()?;
        if let Tok::Ident(name) = self.peek() {
            if name == "U" && *self.peek_at(1) == Tok::LBracket {
                self.bump();
                let w = self.window()?;
                let rhs = self.unary()?;
                return Ok(Formula::Until(w, Box::new(lhs), Box::new(rhs)));
            }
        }
        Ok(lhs)
    }

    fn window(&mut self) -> Result<Window, ParseError> {
        self.expect(Tok::LBracket, "`[`")?;
        let lo = self.step_index()?;
        self.expect(Tok::Comma, "`,`")?;
        let at = self.offset();
        let hi = self.step_index()?;
        self.expect(Tok::RBracket, "`]`")?;
        Window::new(lo, hi).map_err(|e| ParseError::Syntax {
            offset: at,
            message: e.to_string(),
        })
    }

    fn step_index(&mut self) -> Result<usize, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) if v >= 0.0 && v.fract() == 0.0 && v < 1e15 => {
                self.bump();
                Ok(v as usize)
            }
            other => self.error(format!(
                "expected a non-negative integer step, found {}",
                describe(&other)
            )),
        }
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        match self.peek().clone() {
            Tok::Bang => {
                self.bump();
                Ok(Formula::not(self.unary()?))
            }
            Tok::Ident(name) if self.is_temporal_op() => {
                let at = self.offset();
                match name.as_str() {
                    "G" | "F" => {
                        self.bump();
                        let w = self.window()?;
                        let body = Box::new(self.unary()?);
                        Ok(if name == "G" {
                            Formula::Always(w, body)
                        } else {
                            Formula::Eventually(w, body)
                        })
                    }
                    "U" => self.error("`U` needs a left operand"),
                    _ => Err(ParseError::UnknownOperator { offset: at, name }),
                }
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Formula, ParseError> {
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let f = self.implies()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(f)
            }
            Tok::Ident(name) if name == "true" => {
                self.bump();
                Ok(Formula::True)
            }
            Tok::Ident(_) | Tok::Num(_) | Tok::Minus | Tok::Plus => self.predicate(),
            other => self.error(format!("expected a formula, found {}", describe(&other))),
        }
    }

    fn signed_number(&mut self) -> Result<f64, ParseError> {
        let neg = match self.peek() {
            Tok::Minus => {
                self.bump();
                true
            }
            Tok::Plus => {
                self.bump();
                false
            }
            _ => false,
        };
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            other => self.error(format!("expected a number, found {}", describe(&other))),
        }
    }

    /// One `[coef *] ident` term; `sign` applies to the coefficient.
    fn term(&mut self, sign: f64) -> Result<(String, f64, bool), ParseError> {
        let explicit = !matches!(self.peek(), Tok::Ident(_));
        let coef = if explicit {
            let c = self.signed_number()?;
            self.expect(Tok::Star, "`*`")?;
            c
        } else {
            1.0
        };
        match self.peek().clone() {
            Tok::Ident(name) if name != "true" => {
                self.bump();
                Ok((name, sign * coef, explicit))
            }
            other => self.error(format!("expected a variable, found {}", describe(&other))),
        }
    }

    fn predicate(&mut self) -> Result<Formula, ParseError> {
        let mut terms = vec![self.term(1.0)?];
        loop {
            let sign = match self.peek() {
                Tok::Plus => 1.0,
                Tok::Minus => -1.0,
                _ => break,
            };
            self.bump();
            terms.push(self.term(sign)?);
        }
        let cmp = match self.peek() {
            Tok::Cmp(c) => *c,
            other => {
                return self.error(format!(
                    "expected a comparison operator, found {}",
                    describe(other)
                ))
            }
        };
        self.bump();
        let threshold = self.signed_number()?;
        if terms.len() == 1 && !terms[0].2 {
            let (var, _, _) = terms.pop().unwrap();
            return Ok(Formula::atom(var, cmp, threshold));
        }
        Ok(Formula::lin(
            terms.into_iter().map(|(v, c, _)| (v, c)),
            cmp,
            threshold,
        ))
    }
}

/// Parses a formula from its ASCII form.
pub fn parse(text: &str) -> Result<Formula, ParseError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
    };
    let f = p.implies()?;
    if *p.peek() != Tok::End {
        return p.error(format!("unexpected trailing {}", describe(p.peek())));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_implication_under_always() {
        let f = parse("G[0,5](x1 >= 0.75 -> x2 >= 10)").unwrap();
        assert_eq!(
            f,
            Formula::always(
                0,
                5,
                Formula::implies(
                    Formula::atom("x1", Cmp::Ge, 0.75),
                    Formula::atom("x2", Cmp::Ge, 10.0)
                )
            )
        );
    }

    #[test]
    fn parses_simple_forms() {
        assert_eq!(parse("true").unwrap(), Formula::True);
        assert_eq!(
            parse("F[1,3](x <= 2.5)").unwrap(),
            Formula::eventually(1, 3, Formula::atom("x", Cmp::Le, 2.5))
        );
        assert_eq!(
            parse("  (x>=0)U[0,2](x>= 2) ").unwrap(),
            Formula::until(
                0,
                2,
                Formula::atom("x", Cmp::Ge, 0.0),
                Formula::atom("x", Cmp::Ge, 2.0)
            )
        );
        assert_eq!(
            parse("x1 - x2 > 3").unwrap(),
            Formula::lin([("x1", 1.0), ("x2", -1.0)], Cmp::Gt, 3.0)
        );
        assert_eq!(
            parse("-2*a + 0.5*b <= -1e-3").unwrap(),
            Formula::lin([("a", -2.0), ("b", 0.5)], Cmp::Le, -1e-3)
        );
        assert_eq!(
            parse("!a < 1 & b > 2 | c >= 3").unwrap(),
            Formula::or(
                Formula::and(
                    Formula::not(Formula::atom("a", Cmp::Lt, 1.0)),
                    Formula::atom("b", Cmp::Gt, 2.0)
                ),
                Formula::atom("c", Cmp::Ge, 3.0)
            )
        );
        // implication is right associative
        assert_eq!(
            parse("a >= 1 -> b >= 1 -> c >= 1").unwrap(),
            Formula::implies(
                Formula::atom("a", Cmp::Ge, 1.0),
                Formula::implies(
                    Formula::atom("b", Cmp::Ge, 1.0),
                    Formula::atom("c", Cmp::Ge, 1.0)
                )
            )
        );
    }

    #[test]
    fn reports_offsets() {
        match parse("G[0,2](x >= )") {
            Err(ParseError::Syntax { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            parse("x >= 1 & H[0,1](x >= 2)"),
            Err(ParseError::UnknownOperator {
                offset: 9,
                name: "H".into()
            })
        );
        assert!(matches!(
            parse("G[3,1](x >= 0)"),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse("x >= 1 )"),
            Err(ParseError::Syntax { offset: 7, .. })
        ));
        assert!(matches!(
            parse("x @ 1"),
            Err(ParseError::Syntax { offset: 2, .. })
        ));
    }

    #[test]
    fn render_parse_roundtrip_fixed() {
        for s in [
            "G[0,5](x1 >= 0.75 -> x2 >= 10)",
            "(a >= 1 -> b >= 2) -> c <= -3.5",
            "a >= 1 & (b >= 2 & c >= 3)",
            "!(a >= 1 | b < 2)",
            "((a >= 1) U[0,3] (b > 2)) U[1,1] (true)",
            "1*x >= 2",
            "G[0,1](F[2,3](x > 0))",
        ] {
            let f = parse(s).unwrap();
            assert_eq!(parse(&f.to_string()).unwrap(), f, "{s} -> {f}");
        }
    }
}
