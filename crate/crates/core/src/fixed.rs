//! Four-decimal fixed-point fractions.
//!
//! Trust weights, path scores and thresholds are integers counting
//! ten-thousandths so that encodings and hashes are bit-exact across
//! replicas. Products round half-up back to four decimals at every step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Ten-thousandths in one whole unit.
pub const SCALE: u32 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixedError {
    #[error("malformed fraction `{0}`")]
    Malformed(String),
    #[error("fraction `{0}` has more than four decimal digits")]
    TooPrecise(String),
    #[error("fraction {0} is outside [0, 1]")]
    OutOfRange(String),
    #[error("trust weight must be in (0, 1], got {0}")]
    InvalidWeight(String),
}

/// A fraction in ten-thousandths. Values above [`SCALE`] are representable
/// so that invalid thresholds can be reported rather than silently clamped.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed4(u32);

impl Fixed4 {
    pub const ZERO: Fixed4 = Fixed4(0);
    pub const ONE: Fixed4 = Fixed4(SCALE);

    pub const fn from_raw(ten_thousandths: u32) -> Self {
        Fixed4(ten_thousandths)
    }

    pub const fn raw(self) -> u32 {
        self.0
    }

    pub fn is_unit_interval(self) -> bool {
        self.0 <= SCALE
    }

    /// `self * other`, rounded half-up to four decimals.
    pub fn mul_round(self, other: Fixed4) -> Fixed4 {
        let wide = u64::from(self.0) * u64::from(other.0);
        let rounded = (wide + u64::from(SCALE / 2)) / u64::from(SCALE);
        Fixed4(u32::try_from(rounded).expect("product of unit fractions fits in u32"))
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.0) / f64::from(SCALE)
    }
}

impl fmt::Display for Fixed4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:04}", self.0 / SCALE, self.0 % SCALE)
    }
}

impl fmt::Debug for Fixed4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for Fixed4 {
    type Err = FixedError;

    /// Accepts `1`, `0.9`, `0.9000`; at most four fractional digits.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || FixedError::Malformed(s.to_string());
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed());
        }
        if !frac_part.bytes().all(|b| b.is_ascii_digit()) || (s.contains('.') && frac_part.is_empty()) {
            return Err(malformed());
        }
        if frac_part.len() > 4 {
            return Err(FixedError::TooPrecise(s.to_string()));
        }
        let whole: u32 = int_part.parse().map_err(|_| malformed())?;
        if whole > 1 {
            return Err(FixedError::OutOfRange(s.to_string()));
        }
        let mut frac: u32 = 0;
        for (i, b) in frac_part.bytes().enumerate() {
            frac += u32::from(b - b'0') * 10u32.pow(3 - i as u32);
        }
        let value = whole * SCALE + frac;
        if value > SCALE {
            return Err(FixedError::OutOfRange(s.to_string()));
        }
        Ok(Fixed4(value))
    }
}

impl Serialize for Fixed4 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fixed4 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An edge weight in (0, 1]. Zero is rejected: an absent edge already
/// expresses "no trust".
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrustWeight(Fixed4);

impl TrustWeight {
    pub const FULL: TrustWeight = TrustWeight(Fixed4::ONE);

    pub fn new(value: Fixed4) -> Result<Self, FixedError> {
        if value.raw() == 0 || value.raw() > SCALE {
            return Err(FixedError::InvalidWeight(value.to_string()));
        }
        Ok(TrustWeight(value))
    }

    pub fn from_raw(ten_thousandths: u32) -> Result<Self, FixedError> {
        Self::new(Fixed4::from_raw(ten_thousandths))
    }

    pub fn value(self) -> Fixed4 {
        self.0
    }

    pub fn raw(self) -> u32 {
        self.0.raw()
    }
}

impl fmt::Display for TrustWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Debug for TrustWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for TrustWeight {
    type Err = FixedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TrustWeight::new(s.parse()?)
    }
}

impl Serialize for TrustWeight {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TrustWeight {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Fixed4::deserialize(deserializer)?;
        TrustWeight::new(v).map_err(serde::de::Error::custom)
    }
}
