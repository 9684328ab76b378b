use super::{Attribute, FormalQuery, Literal, Op, Predicate, QueryError, Scope, Target};

const LOCAL_MARKER: &str = "/*LOCAL*/";

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Number(String),
    Quoted(String),
    Equals,
    LocalMarker,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn syntax(&self, position: usize, message: impl Into<String>) -> QueryError {
        QueryError::SyntaxError {
            position,
            message: message.into(),
        }
    }

    /// Returns the token and the byte offset it starts at.
    fn next(&mut self) -> Result<(Tok, usize), QueryError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(start) else {
            return Ok((Tok::End, start));
        };
        let tok = match c {
            b'=' => {
                self.pos += 1;
                Tok::Equals
            }
            b'\'' => {
                let rest = &self.src[start + 1..];
                let close = rest
                    .find('\'')
                    .ok_or_else(|| self.syntax(start, "unterminated literal"))?;
                self.pos = start + 1 + close + 1;
                Tok::Quoted(rest[..close].to_owned())
            }
            b'/' => {
                let rest = &self.src[start..];
                let close = rest
                    .find("*/")
                    .filter(|_| rest.starts_with("/*"))
                    .ok_or_else(|| self.syntax(start, "expected comment"))?;
                let body = rest[2..close].trim();
                if !body.eq_ignore_ascii_case("LOCAL") {
                    return Err(self.syntax(start, "only the /*LOCAL*/ marker is allowed"));
                }
                self.pos = start + close + 2;
                Tok::LocalMarker
            }
            b'0'..=b'9' => {
                let len = bytes[start..].iter().take_while(|b| b.is_ascii_digit()).count();
                self.pos += len;
                Tok::Number(self.src[start..self.pos].to_owned())
            }
            c if c.is_ascii_alphabetic() => {
                let len = bytes[start..]
                    .iter()
                    .take_while(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_'))
                    .count();
                self.pos += len;
                Tok::Word(self.src[start..self.pos].to_owned())
            }
            _ => return Err(self.syntax(start, format!("unexpected character {:?}", c as char))),
        };
        Ok((tok, start))
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    at: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, QueryError> {
        let mut lexer = Lexer { src, pos: 0 };
        let (tok, at) = lexer.next()?;
        Ok(Self { lexer, tok, at })
    }

    fn bump(&mut self) -> Result<(Tok, usize), QueryError> {
        let (next, at) = self.lexer.next()?;
        let prev = std::mem::replace(&mut self.tok, next);
        let prev_at = std::mem::replace(&mut self.at, at);
        Ok((prev, prev_at))
    }

    fn error(&self, message: impl Into<String>) -> QueryError {
        self.lexer.syntax(self.at, message)
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.is_keyword(kw) {
            self.bump()?;
            Ok(())
        } else {
            Err(self.error(format!("expected {kw}")))
        }
    }

    fn query(&mut self) -> Result<FormalQuery, QueryError> {
        self.keyword("SELECT")?;
        let target = if self.is_keyword("PATIENTS") {
            Target::Patients
        } else if self.is_keyword("IMAGES") {
            Target::Images
        } else {
            return Err(self.error("expected PATIENTS or IMAGES"));
        };
        self.bump()?;
        self.keyword("WHERE")?;
        let mut conjuncts = vec![self.term()?];
        while self.is_keyword("AND") {
            self.bump()?;
            conjuncts.push(self.term()?);
        }
        let scope = if self.tok == Tok::LocalMarker {
            self.bump()?;
            Scope::LocalOnly
        } else {
            Scope::Federated
        };
        if self.tok != Tok::End {
            return Err(self.error("expected AND or end of query"));
        }
        let mut seen = Vec::new();
        for p in &conjuncts {
            if seen.contains(&p.attr) {
                return Err(QueryError::DuplicateAttribute(p.attr.name().into()));
            }
            seen.push(p.attr);
        }
        FormalQuery::new(target, conjuncts, scope)
    }

    fn term(&mut self) -> Result<Predicate, QueryError> {
        let (tok, at) = self.bump()?;
        let Tok::Word(name) = tok else {
            return Err(self.lexer.syntax(at, "expected attribute"));
        };
        let attr = Attribute::from_name(&name).ok_or(QueryError::UnknownAttribute(name))?;
        let domain = |raw: &str| {
            Literal::for_attribute(attr, raw).ok_or_else(|| QueryError::DomainError {
                attr: attr.name().into(),
                literal: raw.to_owned(),
            })
        };
        if self.tok == Tok::Equals {
            self.bump()?;
            let (tok, at) = self.bump()?;
            let Tok::Quoted(raw) = tok else {
                return Err(self.lexer.syntax(at, "expected quoted literal"));
            };
            return Ok(Predicate::eq(attr, domain(&raw)?));
        }
        if self.is_keyword("BETWEEN") {
            if !attr.allows_between() {
                return Err(self.error(format!("BETWEEN is not allowed on {attr}")));
            }
            self.bump()?;
            let lo = self.number()?;
            self.keyword("AND")?;
            let hi = self.number()?;
            let (lo, hi) = (domain(&lo)?, domain(&hi)?);
            return Ok(Predicate::between(attr, lo, hi));
        }
        Err(self.error("expected = or BETWEEN"))
    }

    fn number(&mut self) -> Result<String, QueryError> {
        match self.bump()? {
            (Tok::Number(n), _) => Ok(n),
            (_, at) => Err(self.lexer.syntax(at, "expected number")),
        }
    }
}

/// Parses `SELECT <target> WHERE <term> {AND <term>} [/*LOCAL*/]`.
///
/// Keywords are case-insensitive; attribute names and literals are not.
pub fn parse_query(text: &str) -> Result<FormalQuery, QueryError> {
    Parser::new(text)?.query()
}

/// Canonical text: uppercase keywords, conjuncts in attribute-name order,
/// single spaces, ` /*LOCAL*/` suffix for local-only queries.
pub fn serialize_query(q: &FormalQuery) -> String {
    let terms: Vec<String> = q
        .conjuncts()
        .iter()
        .map(|p| match &p.op {
            Op::Eq(lit) => format!("{} = '{lit}'", p.attr),
            Op::Between(lo, hi) => format!("{} BETWEEN {lo} AND {hi}", p.attr),
        })
        .collect();
    let mut out = format!("SELECT {} WHERE {}", q.target().keyword(), terms.join(" AND "));
    if q.scope() == Scope::LocalOnly {
        out.push(' ');
        out.push_str(LOCAL_MARKER);
    }
    out
}
