//! Allowed-answer sets and deterministic membership checks.
//!
//! A buyer fixes the set of admissible answers when the question is created.
//! Submitted answers are canonicalized under that set; anything that cannot
//! be canonicalized, or falls outside the set, is [`Membership::OutsideSet`].

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest decimal scale accepted; keeps `10^scale` inside an `i64`.
pub const MAX_SCALE: u32 = 18;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum AnswerSpec {
    Enumerated { options: Vec<String> },
    IntegerRange { lo: i64, hi: i64 },
    /// Fixed-point range. `lo` and `hi` are in units of `10^-scale`, so
    /// `{lo: 0, hi: 100, scale: 2}` is the interval 0.00 ..= 1.00.
    DecimalRange { lo: i64, hi: i64, scale: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("enumerated spec has no options")]
    EmptyOptionSet,
    #[error("option {0:?} appears more than once")]
    DuplicateOption(String),
    #[error("range lower bound exceeds upper bound")]
    EmptyRange,
    #[error("spec admits exactly one answer")]
    VacuousSpec,
    #[error("decimal scale {0} exceeds {MAX_SCALE}")]
    ScaleTooLarge(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("answer {raw:?} cannot be read under this spec")]
pub struct Unparseable {
    pub raw: String,
}

/// Normalized form of an answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Canonical {
    Option(String),
    Integer(i64),
    Decimal { units: i64, scale: u32 },
}

impl fmt::Display for Canonical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Canonical::Option(s) => f.write_str(s),
            Canonical::Integer(n) => write!(f, "{n}"),
            Canonical::Decimal { units, scale } => {
                if *scale == 0 {
                    return write!(f, "{units}");
                }
                let pow = 10u64.pow(*scale);
                let abs = units.unsigned_abs();
                let sign = if *units < 0 { "-" } else { "" };
                write!(f, "{sign}{}.{:0width$}", abs / pow, abs % pow, width = *scale as usize)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerValue {
    pub raw: String,
    pub canonical: Canonical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    InSet,
    OutsideSet,
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

impl AnswerSpec {
    pub fn enumerated<I, S>(options: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AnswerSpec::Enumerated { options: options.into_iter().map(Into::into).collect() }
    }

    /// Checks the spec invariants, reporting the first one violated.
    pub fn validate(&self) -> Result<(), SpecError> {
        match self {
            AnswerSpec::Enumerated { options } => {
                if options.is_empty() {
                    return Err(SpecError::EmptyOptionSet);
                }
                let mut seen = HashSet::new();
                for o in options {
                    if !seen.insert(fold(o)) {
                        return Err(SpecError::DuplicateOption(o.clone()));
                    }
                }
                if options.len() == 1 {
                    return Err(SpecError::VacuousSpec);
                }
            }
            AnswerSpec::IntegerRange { lo, hi } => check_range(*lo, *hi)?,
            AnswerSpec::DecimalRange { lo, hi, scale } => {
                if *scale > MAX_SCALE {
                    return Err(SpecError::ScaleTooLarge(*scale));
                }
                check_range(*lo, *hi)?;
            }
        }
        Ok(())
    }

    pub fn canonicalize(&self, raw: &str) -> Result<AnswerValue, Unparseable> {
        let canonical = match self {
            AnswerSpec::Enumerated { options } => {
                let key = fold(raw);
                options
                    .iter()
                    .find(|o| fold(o) == key)
                    .map(|o| Canonical::Option(o.clone()))
            }
            AnswerSpec::IntegerRange { .. } => raw.trim().parse::<i64>().ok().map(Canonical::Integer),
            AnswerSpec::DecimalRange { scale, .. } => {
                parse_fixed(raw.trim(), *scale).map(|units| Canonical::Decimal { units, scale: *scale })
            }
        };
        canonical
            .map(|canonical| AnswerValue { raw: raw.to_owned(), canonical })
            .ok_or_else(|| Unparseable { raw: raw.to_owned() })
    }

    /// Total: any value not produced under this spec is outside it.
    pub fn check_membership(&self, value: &AnswerValue) -> Membership {
        let inside = match (self, &value.canonical) {
            (AnswerSpec::Enumerated { options }, Canonical::Option(o)) => options.contains(o),
            (AnswerSpec::IntegerRange { lo, hi }, Canonical::Integer(n)) => lo <= n && n <= hi,
            (AnswerSpec::DecimalRange { lo, hi, scale }, Canonical::Decimal { units, scale: s }) => {
                scale == s && lo <= units && units <= hi
            }
            _ => false,
        };
        if inside {
            Membership::InSet
        } else {
            Membership::OutsideSet
        }
    }

    /// Canonicalize and check in one step. Unparseable input is outside the set.
    pub fn classify(&self, raw: &str) -> (Option<AnswerValue>, Membership) {
        match self.canonicalize(raw) {
            Ok(v) => {
                let m = self.check_membership(&v);
                (Some(v), m)
            }
            Err(_) => (None, Membership::OutsideSet),
        }
    }
}

fn check_range(lo: i64, hi: i64) -> Result<(), SpecError> {
    match lo.cmp(&hi) {
        std::cmp::Ordering::Greater => Err(SpecError::EmptyRange),
        std::cmp::Ordering::Equal => Err(SpecError::VacuousSpec),
        std::cmp::Ordering::Less => Ok(()),
    }
}

/// Parses `[+-]digits[.digits]` into units of `10^-scale`. More fractional
/// digits than `scale` is an error; fewer are zero-padded.
fn parse_fixed(s: &str, scale: u32) -> Option<i64> {
    let (negative, body) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => {
            if f.is_empty() {
                return None;
            }
            (i, f)
        }
        None => (body, ""),
    };
    let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if int_part.is_empty() || !all_digits(int_part) || !all_digits(frac_part) {
        return None;
    }
    if frac_part.len() > scale as usize {
        return None;
    }
    let pow = 10i64.checked_pow(scale)?;
    let whole: i64 = int_part.parse().ok()?;
    let frac: i64 = if frac_part.is_empty() {
        0
    } else {
        frac_part.parse::<i64>().ok()? * 10i64.pow(scale - frac_part.len() as u32)
    };
    let magnitude = whole.checked_mul(pow)?.checked_add(frac)?;
    Some(if negative { -magnitude } else { magnitude })
}
