//! Mini-SQL for metric queries.
//!
//! ```text
//! query     = "SELECT" agg "(" "value" ")" "FROM" metric "WHERE" cond {"AND" cond}
//!             ["GROUP" "BY" groupings]
//! agg       = "avg" | "min" | "max" | "sum" | "count" | "last"
//! cond      = tag "=" string | "ts" (">=" | "<") int
//! groupings = "time(" int unit ")" {"," tag}
//! unit      = "s" | "m" | "h"
//! ```
//!
//! Metric names are double-quoted, strings single-quoted. Keywords are
//! case-insensitive. Both `ts >=` and `ts <` must appear exactly once.
//! Error columns are 1-based character positions.

use std::fmt;

use crate::query::{Aggregate, Query};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "syntax error at column {}: {}", self.column, self.message)
    }
}

fn err<T>(column: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        column,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Int(i64),
    /// Integer immediately followed by letters, e.g. `10s`.
    Duration(i64, String),
    Metric(String),
    Str(String),
    LParen,
    RParen,
    Comma,
    Eq,
    Ge,
    Lt,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("'{w}'"),
            Tok::Int(i) => format!("'{i}'"),
            Tok::Duration(i, u) => format!("'{i}{u}'"),
            Tok::Metric(m) => format!("\"{m}\""),
            Tok::Str(s) => format!("'{s}'"),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::Eq => "'='".into(),
            Tok::Ge => "'>='".into(),
            Tok::Lt => "'<'".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn is_word_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let simple = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '=' => Some(Tok::Eq),
            '<' => Some(Tok::Lt),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Token { tok, col });
            i += 1;
            continue;
        }
        if c == '>' {
            if chars.get(i + 1) == Some(&'=') {
                out.push(Token { tok: Tok::Ge, col });
                i += 2;
                continue;
            }
            return err(col, "expected '>='");
        }
        if c == '"' || c == '\'' {
            let close = chars[i + 1..].iter().position(|&x| x == c);
            let Some(n) = close else {
                return err(col, "unterminated quoted string");
            };
            let s: String = chars[i + 1..i + 1 + n].iter().collect();
            let tok = if c == '"' { Tok::Metric(s) } else { Tok::Str(s) };
            out.push(Token { tok, col });
            i += n + 2;
            continue;
        }
        if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let digits: String = chars[start..i].iter().collect();
            let Ok(v) = digits.parse::<i64>() else {
                return err(col, "integer out of range");
            };
            if i < chars.len() && chars[i].is_ascii_alphabetic() {
                let ustart = i;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                let unit: String = chars[ustart..i].iter().collect();
                out.push(Token {
                    tok: Tok::Duration(v, unit),
                    col,
                });
            } else {
                out.push(Token { tok: Tok::Int(v), col });
            }
            continue;
        }
        if is_word_start(c) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Word(chars[start..i].iter().collect()),
                col,
            });
            continue;
        }
        return err(col, format!("unexpected character '{c}'"));
    }
    out.push(Token {
        tok: Tok::Eof,
        col: chars.len() + 1,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected<T>(&self, expected: &str) -> Result<T, ParseError> {
        let t = self.peek();
        err(t.col, format!("expected {expected}, found {}", t.tok.describe()))
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<usize, ParseError> {
        if self.peek_keyword(kw) {
            Ok(self.next().col)
        } else {
            self.unexpected(kw)
        }
    }

    fn symbol(&mut self, tok: Tok, what: &str) -> Result<usize, ParseError> {
        if self.peek().tok == tok {
            Ok(self.next().col)
        } else {
            self.unexpected(what)
        }
    }

    fn tag_name(&mut self) -> Result<(String, usize), ParseError> {
        match &self.peek().tok {
            Tok::Word(w) if w != "ts" && !is_reserved(w) => {
                let w = w.clone();
                Ok((w, self.next().col))
            }
            _ => self.unexpected("tag name"),
        }
    }
}

const RESERVED: [&str; 6] = ["select", "from", "where", "and", "group", "by"];

fn is_reserved(w: &str) -> bool {
    RESERVED.iter().any(|r| w.eq_ignore_ascii_case(r))
}

pub fn parse(text: &str) -> Result<Query, ParseError> {
    if text.trim().is_empty() {
        return err(1, "empty query");
    }
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    p.keyword("SELECT")?;
    let agg_tok = p.next();
    let aggregate = match &agg_tok.tok {
        Tok::Word(w) => w
            .parse::<Aggregate>()
            .or_else(|_| err(agg_tok.col, format!("unknown aggregate '{w}'")))?,
        other => return err(agg_tok.col, format!("expected aggregate, found {}", other.describe())),
    };
    p.symbol(Tok::LParen, "'('")?;
    p.keyword("value")?;
    p.symbol(Tok::RParen, "')'")?;
    p.keyword("FROM")?;
    let metric = match &p.peek().tok {
        Tok::Metric(m) if !m.is_empty() => {
            let m = m.clone();
            p.next();
            m
        }
        Tok::Metric(_) => return err(p.peek().col, "empty metric name"),
        _ => return p.unexpected("double-quoted metric name"),
    };
    let where_col = p.keyword("WHERE")?;

    let mut filters = Vec::new();
    let mut from: Option<(i64, usize)> = None;
    let mut to: Option<(i64, usize)> = None;
    loop {
        let cond_col = p.peek().col;
        if matches!(&p.peek().tok, Tok::Word(w) if w == "ts") {
            p.next();
            let op = p.next();
            let slot = match op.tok {
                Tok::Ge => &mut from,
                Tok::Lt => &mut to,
                other => {
                    return err(op.col, format!("expected '>=' or '<', found {}", other.describe()))
                }
            };
            let v = match p.next() {
                Token { tok: Tok::Int(v), .. } => v,
                t => return err(t.col, format!("expected integer, found {}", t.tok.describe())),
            };
            if slot.is_some() {
                return err(cond_col, "duplicate ts bound");
            }
            *slot = Some((v, cond_col));
        } else {
            let (tag, _) = p.tag_name()?;
            p.symbol(Tok::Eq, "'='")?;
            match p.next() {
                Token { tok: Tok::Str(s), .. } => filters.push((tag, s)),
                t => {
                    return err(t.col, format!("expected quoted string, found {}", t.tok.describe()))
                }
            }
        }
        if p.peek_keyword("AND") {
            p.next();
        } else {
            break;
        }
    }
    let end_of_where = p.peek().col;
    let Some((from, from_col)) = from else {
        return err(end_of_where, format!("missing 'ts >=' bound in WHERE at column {where_col}"));
    };
    let Some((to, to_col)) = to else {
        return err(end_of_where, format!("missing 'ts <' bound in WHERE at column {where_col}"));
    };
    if from >= to {
        return err(from_col.max(to_col), format!("empty time range [{from}, {to})"));
    }

    let mut bucket_seconds = None;
    let mut group_by: Vec<String> = Vec::new();
    if p.peek_keyword("GROUP") {
        p.next();
        p.keyword("BY")?;
        p.keyword("time")?;
        p.symbol(Tok::LParen, "'('")?;
        let d = p.next();
        let secs = match &d.tok {
            Tok::Duration(n, unit) => {
                let mult = match unit.as_str() {
                    "s" => 1,
                    "m" => 60,
                    "h" => 3600,
                    _ => return err(d.col, format!("unknown time unit '{unit}'")),
                };
                if *n <= 0 {
                    return err(d.col, "bucket width must be positive");
                }
                (*n as u64)
                    .checked_mul(mult)
                    .filter(|s| *s <= i64::MAX as u64 / 1000)
                    .ok_or(ParseError {
                        column: d.col,
                        message: "bucket width out of range".into(),
                    })?
            }
            other => return err(d.col, format!("expected duration like 10s, found {}", other.describe())),
        };
        bucket_seconds = Some(secs);
        p.symbol(Tok::RParen, "')'")?;
        while p.peek().tok == Tok::Comma {
            p.next();
            let (tag, col) = p.tag_name()?;
            if group_by.contains(&tag) {
                return err(col, format!("duplicate group-by tag '{tag}'"));
            }
            group_by.push(tag);
        }
    }
    if p.peek().tok != Tok::Eof {
        return p.unexpected("end of query");
    }
    filters.sort();
    filters.dedup();
    Ok(Query {
        metric,
        filters,
        from,
        to,
        aggregate,
        bucket_seconds,
        group_by,
    })
}

fn print_duration(secs: u64) -> String {
    if secs % 3600 == 0 {
        format!("{}h", secs / 3600)
    } else if secs % 60 == 0 {
        format!("{}m", secs / 60)
    } else {
        format!("{secs}s")
    }
}

/// Canonical text for a query; `parse(print(q)) == q` for every parsed `q`.
pub fn print(q: &Query) -> String {
    let mut s = format!("SELECT {}(value) FROM \"{}\" WHERE ", q.aggregate, q.metric);
    for (k, v) in &q.filters {
        s.push_str(&format!("{k}='{v}' AND "));
    }
    s.push_str(&format!("ts >= {} AND ts < {}", q.from, q.to));
    if let Some(b) = q.bucket_seconds {
        s.push_str(&format!(" GROUP BY time({})", print_duration(b)));
        for g in &q.group_by {
            s.push_str(", ");
            s.push_str(g);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_mapping() {
        let q = parse(
            "SELECT avg(value) FROM \"cpu.load\" WHERE server='s1' AND ts >= 0 AND ts < 60000 GROUP BY time(10s)",
        )
        .unwrap();
        assert_eq!(
            q,
            Query {
                metric: "cpu.load".into(),
                filters: vec![("server".into(), "s1".into())],
                from: 0,
                to: 60000,
                aggregate: Aggregate::Avg,
                bucket_seconds: Some(10),
                group_by: vec![],
            }
        );
    }

    #[test]
    fn group_by_time_and_tag() {
        let q = parse(
            "SELECT sum(value) FROM \"m\" WHERE ts >= 0 AND ts < 10 GROUP BY time(10s), client",
        )
        .unwrap();
        assert_eq!(q.bucket_seconds, Some(10));
        assert_eq!(q.group_by, vec!["client".to_string()]);
    }

    #[test]
    fn missing_from_points_after_select_clause() {
        let text = "SELECT avg(value) WHERE ts >= 0 AND ts < 10";
        let e = parse(text).unwrap_err();
        assert_eq!(e.column, 19, "{e}");
    }

    #[test]
    fn unknown_aggregate() {
        let e = parse("SELECT median(value) FROM \"m\" WHERE ts >= 0 AND ts < 1").unwrap_err();
        assert_eq!(e.column, 8);
        assert!(e.message.contains("median"));
    }

    #[test]
    fn units_and_printing() {
        let q = parse("select LAST(value) from \"m\" where ts >= -5 and ts < 7 group by time(2h)").unwrap();
        assert_eq!(q.bucket_seconds, Some(7200));
        assert_eq!(q.from, -5);
        let text = print(&q);
        assert_eq!(text, "SELECT last(value) FROM \"m\" WHERE ts >= -5 AND ts < 7 GROUP BY time(2h)");
        assert_eq!(parse(&text).unwrap(), q);
    }

    #[test]
    fn range_errors() {
        let e = parse("SELECT avg(value) FROM \"m\" WHERE ts >= 10 AND ts < 10").unwrap_err();
        assert_eq!(e.column, 47);
        let e = parse("SELECT avg(value) FROM \"m\" WHERE ts >= 10").unwrap_err();
        assert_eq!(e.column, 42);
    }
}
