//! US-dollar amounts stored as integer cents.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_cents(cents: i64) -> Self {
        Money(cents)
    }

    pub fn cents(self) -> i64 {
        self.0
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Nearest-cent conversion from a dollar amount.
    pub fn from_dollars(dollars: f64) -> Self {
        Money((dollars * 100.0).round() as i64)
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    /// Lenient parse: accepts a leading `$`, thousands separators, surrounding
    /// whitespace and an optional sign. Fractions beyond cents round half up.
    pub fn parse(raw: &str) -> Option<Self> {
        let s: String = raw
            .trim()
            .chars()
            .filter(|c| *c != ',' && *c != '$' && !c.is_whitespace())
            .collect();
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(&s)),
        };
        if body.is_empty() {
            return None;
        }
        let (whole, frac) = match body.split_once('.') {
            Some((w, f)) => (w, f),
            None => (body, ""),
        };
        if whole.is_empty() && frac.is_empty() {
            return None;
        }
        if !whole.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let whole_val: i64 = if whole.is_empty() { 0 } else { whole.parse().ok()? };
        let digits: Vec<u32> = frac.chars().map(|c| c.to_digit(10).unwrap()).collect();
        let mut cents = digits.first().copied().unwrap_or(0) as i64 * 10
            + digits.get(1).copied().unwrap_or(0) as i64;
        if digits.get(2).copied().unwrap_or(0) >= 5 {
            cents += 1;
        }
        let total = whole_val.checked_mul(100)?.checked_add(cents)?;
        Some(Money(if negative { -total } else { total }))
    }
}

impl Add for Money {
    type Output = Money;

    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl fmt::Display for Money {
    /// Plain `1234.56` form, which [`Money::parse`] reads back exactly.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{}{}.{:02}", sign, abs / 100, abs % 100)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_decorated_amounts() {
        assert_eq!(Money::parse("$20,456"), Some(Money(2_045_600)));
        assert_eq!(Money::parse("$5,951.04"), Some(Money(595_104)));
        assert_eq!(Money::parse(" $348.16 "), Some(Money(34_816)));
        assert_eq!(Money::parse("$0"), Some(Money(0)));
        assert_eq!(Money::parse(".5"), Some(Money(50)));
        assert_eq!(Money::parse("-$3.10"), Some(Money(-310)));
        assert_eq!(Money::parse("1.005"), Some(Money(101)));
    }

    #[test]
    fn rejects_garbage() {
        assert_eq!(Money::parse(""), None);
        assert_eq!(Money::parse("$"), None);
        assert_eq!(Money::parse("12a"), None);
        assert_eq!(Money::parse("1.2.3"), None);
    }

    #[test]
    fn job_cost_sum_is_exact() {
        let total = Money::parse("$348.16").unwrap() + Money::parse("$0").unwrap() + Money::parse("$57.55").unwrap();
        assert_eq!(total, Money(40_571));
        assert_eq!(total.to_string(), "405.71");
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(cents in -10_000_000_000i64..10_000_000_000i64) {
            let m = Money(cents);
            prop_assert_eq!(Money::parse(&m.to_string()), Some(m));
        }
    }
}
