use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A flat value: number, string or boolean.
///
/// Numbers are kept in canonical form (12 significant digits) wherever they
/// enter persisted state, so digests and comparisons are stable.
#[derive(Clone, Debug, PartialEq)]
pub enum Scalar {
    Number(f64),
    Text(String),
    Bool(bool),
}

/// Rounds to 12 significant decimal digits and folds `-0` into `0`.
pub fn canonical_number(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    if rounded == 0.0 {
        0.0
    } else {
        rounded
    }
}

impl Scalar {
    pub fn number(x: f64) -> Self {
        Scalar::Number(canonical_number(x))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Scalar::Number(n) if n.fract() == 0.0 && n.abs() < 9.0e15 => Some(*n as i64),
            _ => None,
        }
    }

    /// The same value with any number canonicalized.
    pub fn canonical(self) -> Self {
        match self {
            Scalar::Number(n) => Scalar::number(n),
            other => other,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("scalars always serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Option<Scalar> {
        match value {
            serde_json::Value::Bool(b) => Some(Scalar::Bool(*b)),
            serde_json::Value::String(s) => Some(Scalar::Text(s.clone())),
            serde_json::Value::Number(n) => n.as_f64().map(Scalar::Number),
            _ => None,
        }
    }

    /// Parses a command-line style string into the most specific scalar.
    pub fn parse_loose(raw: &str) -> Scalar {
        match raw {
            "true" => Scalar::Bool(true),
            "false" => Scalar::Bool(false),
            _ => match raw.parse::<f64>() {
                Ok(n) if n.is_finite() && !raw.trim().is_empty() => Scalar::number(n),
                _ => Scalar::Text(raw.to_string()),
            },
        }
    }

    /// Equality with numbers compared on canonical form.
    pub fn canonical_eq(&self, other: &Scalar) -> bool {
        match (self, other) {
            (Scalar::Number(a), Scalar::Number(b)) => canonical_number(*a) == canonical_number(*b),
            (a, b) => a == b,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Number(n) => {
                if n.fract() == 0.0 && n.abs() < 9.0e15 {
                    write!(f, "{}", *n as i64)
                } else {
                    write!(f, "{n}")
                }
            }
            Scalar::Text(s) => write!(f, "{s:?}"),
            Scalar::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl From<f64> for Scalar {
    fn from(x: f64) -> Self {
        Scalar::number(x)
    }
}

impl From<i64> for Scalar {
    fn from(x: i64) -> Self {
        Scalar::Number(x as f64)
    }
}

impl From<i32> for Scalar {
    fn from(x: i32) -> Self {
        Scalar::Number(f64::from(x))
    }
}

impl From<u32> for Scalar {
    fn from(x: u32) -> Self {
        Scalar::Number(f64::from(x))
    }
}

impl From<usize> for Scalar {
    fn from(x: usize) -> Self {
        Scalar::Number(x as f64)
    }
}

impl From<bool> for Scalar {
    fn from(b: bool) -> Self {
        Scalar::Bool(b)
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Text(s.to_string())
    }
}

impl From<String> for Scalar {
    fn from(s: String) -> Self {
        Scalar::Text(s)
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Scalar::Number(n) if n.fract() == 0.0 && n.abs() < 9.0e15 => {
                serializer.serialize_i64(*n as i64)
            }
            Scalar::Number(n) => serializer.serialize_f64(*n),
            Scalar::Text(s) => serializer.serialize_str(s),
            Scalar::Bool(b) => serializer.serialize_bool(*b),
        }
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ScalarVisitor;

        impl Visitor<'_> for ScalarVisitor {
            type Value = Scalar;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number, string or boolean")
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<Scalar, E> {
                Ok(Scalar::Bool(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Scalar, E> {
                Ok(Scalar::Number(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Scalar, E> {
                Ok(Scalar::Number(v as f64))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Scalar, E> {
                Ok(Scalar::Number(v))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Scalar, E> {
                Ok(Scalar::Text(v.to_string()))
            }

            fn visit_string<E: de::Error>(self, v: String) -> Result<Scalar, E> {
                Ok(Scalar::Text(v))
            }
        }

        deserializer.deserialize_any(ScalarVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_keeps_twelve_digits() {
        assert_eq!(canonical_number(0.1 + 0.2), 0.3);
        assert_eq!(canonical_number(-0.0).to_bits(), 0.0f64.to_bits());
        assert_eq!(canonical_number(123456789012345.0), 123456789012000.0);
    }

    #[test]
    fn integers_serialize_without_fraction() {
        assert_eq!(serde_json::to_string(&Scalar::from(5)).unwrap(), "5");
        assert_eq!(serde_json::to_string(&Scalar::from(0.08)).unwrap(), "0.08");
        let back: Scalar = serde_json::from_str("3").unwrap();
        assert_eq!(back, Scalar::Number(3.0));
    }

    #[test]
    fn loose_parsing_prefers_specific_types() {
        assert_eq!(Scalar::parse_loose("5"), Scalar::Number(5.0));
        assert_eq!(Scalar::parse_loose("true"), Scalar::Bool(true));
        assert_eq!(
            Scalar::parse_loose("img_001.png"),
            Scalar::from("img_001.png")
        );
        assert_eq!(Scalar::parse_loose("NaN"), Scalar::from("NaN"));
    }
}
