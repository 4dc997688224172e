//! Conjunctive attribute selectors, used both to target servers with
//! collection tasks and to match incident tickets in triage rules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Eq,
    Neq,
    In,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredicateValue {
    One(String),
    Many(Vec<String>),
}

impl PredicateValue {
    fn values(&self) -> &[String] {
        match self {
            PredicateValue::One(v) => std::slice::from_ref(v),
            PredicateValue::Many(vs) => vs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub field: String,
    pub op: Op,
    pub value: PredicateValue,
}

impl Predicate {
    pub fn eq(field: impl Into<String>, value: impl Into<String>) -> Self {
        Predicate {
            field: field.into(),
            op: Op::Eq,
            value: PredicateValue::One(value.into()),
        }
    }

    pub fn neq(field: impl Into<String>, value: impl Into<String>) -> Self {
        Predicate {
            field: field.into(),
            op: Op::Neq,
            value: PredicateValue::One(value.into()),
        }
    }

    pub fn is_in<I, S>(field: impl Into<String>, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Predicate {
            field: field.into(),
            op: Op::In,
            value: PredicateValue::Many(values.into_iter().map(Into::into).collect()),
        }
    }

    /// `actual` is the attribute value, `None` when the object lacks it.
    pub fn test(&self, actual: Option<&str>) -> bool {
        let values = self.value.values();
        match self.op {
            Op::Eq | Op::In => actual.is_some_and(|a| values.iter().any(|v| v == a)),
            Op::Neq => actual.map_or(true, |a| values.iter().all(|v| v != a)),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let joined = self.value.values().join("|");
        match self.op {
            Op::Eq => write!(f, "{}={}", self.field, joined),
            Op::Neq => write!(f, "{}!={}", self.field, joined),
            Op::In => write!(f, "{} in {}", self.field, joined),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectorError {
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("cannot parse predicate '{0}'")]
    Syntax(String),
}

/// A conjunction of predicates. The empty selector matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Selector {
    pub predicates: Vec<Predicate>,
}

/// Outcome of looking an attribute up on a candidate object.
pub enum Lookup<'a> {
    Value(&'a str),
    Absent,
    UnknownField,
}

impl Selector {
    pub fn all() -> Self {
        Selector::default()
    }

    pub fn new(predicates: Vec<Predicate>) -> Self {
        Selector { predicates }
    }

    pub fn and(mut self, p: Predicate) -> Self {
        self.predicates.push(p);
        self
    }

    pub fn matches<'a, F>(&self, mut lookup: F) -> Result<bool, SelectorError>
    where
        F: FnMut(&str) -> Lookup<'a>,
    {
        let mut all = true;
        // Every field is resolved even after a miss so unknown names always surface.
        for p in &self.predicates {
            let actual = match lookup(&p.field) {
                Lookup::Value(v) => Some(v),
                Lookup::Absent => None,
                Lookup::UnknownField => return Err(SelectorError::UnknownField(p.field.clone())),
            };
            all &= p.test(actual);
        }
        Ok(all)
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.predicates.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Text form used on the command line: `role=dbms,client in A|B,role!=web`.
impl FromStr for Selector {
    type Err = SelectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut predicates = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let split_values =
                |v: &str| -> Vec<String> { v.split('|').map(|x| x.trim().to_string()).collect() };
            let (field, op, value) = if let Some((f, v)) = part.split_once("!=") {
                (f, Op::Neq, v)
            } else if let Some((f, v)) = part.split_once('=') {
                (f, Op::Eq, v)
            } else if let Some((f, v)) = part.split_once(" in ") {
                (f, Op::In, v)
            } else {
                return Err(SelectorError::Syntax(part.to_string()));
            };
            let field = field.trim();
            if field.is_empty() || value.trim().is_empty() {
                return Err(SelectorError::Syntax(part.to_string()));
            }
            let values = split_values(value);
            let value = if op == Op::In || values.len() > 1 {
                PredicateValue::Many(values)
            } else {
                PredicateValue::One(values.into_iter().next().unwrap_or_default())
            };
            predicates.push(Predicate {
                field: field.to_string(),
                op,
                value,
            });
        }
        Ok(Selector { predicates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn lookup<'a>(m: &'a HashMap<&str, &str>) -> impl FnMut(&str) -> Lookup<'a> + 'a {
        move |f| match f {
            "role" | "client" | "site" => m.get(f).map_or(Lookup::Absent, |v| Lookup::Value(v)),
            _ => Lookup::UnknownField,
        }
    }

    #[test]
    fn empty_matches_everything() {
        let m = HashMap::from([("role", "web")]);
        assert!(Selector::all().matches(lookup(&m)).unwrap());
    }

    #[test]
    fn ops() {
        let m = HashMap::from([("role", "dbms"), ("client", "A")]);
        let s = Selector::all()
            .and(Predicate::eq("role", "dbms"))
            .and(Predicate::is_in("client", ["A", "B"]));
        assert!(s.matches(lookup(&m)).unwrap());
        let s = Selector::all().and(Predicate::neq("role", "dbms"));
        assert!(!s.matches(lookup(&m)).unwrap());
        // Absent attribute: eq fails, neq holds.
        assert!(!Selector::all()
            .and(Predicate::eq("site", "x"))
            .matches(lookup(&m))
            .unwrap());
        assert!(Selector::all()
            .and(Predicate::neq("site", "x"))
            .matches(lookup(&m))
            .unwrap());
    }

    #[test]
    fn unknown_field_is_error() {
        let m = HashMap::new();
        let s = Selector::all().and(Predicate::eq("colour", "red"));
        assert_eq!(
            s.matches(lookup(&m)),
            Err(SelectorError::UnknownField("colour".into()))
        );
    }

    #[test]
    fn text_form_round_trip() {
        let s: Selector = "role=dbms, client in A|B ,role!=web".parse().unwrap();
        assert_eq!(s.predicates.len(), 3);
        assert_eq!(s.predicates[1].op, Op::In);
        let again: Selector = s.to_string().parse().unwrap();
        assert_eq!(again, s);
        assert!("".parse::<Selector>().unwrap().predicates.is_empty());
        assert!("role".parse::<Selector>().is_err());
    }

    #[test]
    fn json_shape() {
        let s = Selector::all()
            .and(Predicate::eq("role", "dbms"))
            .and(Predicate::is_in("client", ["A", "B"]));
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(
            v,
            serde_json::json!([
                {"field": "role", "op": "eq", "value": "dbms"},
                {"field": "client", "op": "in", "value": ["A", "B"]}
            ])
        );
    }
}
