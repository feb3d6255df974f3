//! Configuration and identity types shared by every protocol.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{One, ToPrimitive, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::SimError;

/// Exact rational used for β, thresholds and async time.
pub type Ratio = Rational64;

/// Peer identifier in `1..=k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PeerId(u32);

impl PeerId {
    pub fn new(id: u32) -> Self {
        assert!(id >= 1, "peer ids start at 1");
        PeerId(id)
    }

    /// Peer for a 0-based slot index.
    pub fn from_index(index: usize) -> Self {
        PeerId(index as u32 + 1)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// 0-based slot index.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn all(k: usize) -> impl Iterator<Item = PeerId> {
        (0..k).map(PeerId::from_index)
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.0)
    }
}

/// The source's n-bit array, indexed `1..=n`. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputVector {
    bits: BitString,
}

impl InputVector {
    pub fn new(bits: BitString) -> Result<Self, SimError> {
        if bits.is_empty() {
            return Err(SimError::config("input must have at least one bit"));
        }
        Ok(InputVector { bits })
    }

    pub fn from_bools(bits: &[bool]) -> Result<Self, SimError> {
        InputVector::new(BitString::from_bools(bits))
    }

    pub fn random(n: usize, rng: &mut dyn RngCore) -> Self {
        let mut bits = BitString::zeros(n);
        let mut word = 0u64;
        for i in 0..n {
            if i % 64 == 0 {
                word = rng.next_u64();
            }
            bits.set(i, (word >> (i % 64)) & 1 == 1);
        }
        InputVector { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Bit at 1-based `index`.
    pub fn bit(&self, index: usize) -> Option<bool> {
        (1..=self.len()).contains(&index).then(|| self.bits.get(index - 1))
    }

    pub fn as_bits(&self) -> &BitString {
        &self.bits
    }

    /// The interval `[start, start + len)` in 0-based positions.
    pub fn interval(&self, start: usize, len: usize) -> BitString {
        self.bits.slice(start, len)
    }

    /// Copy of the vector with the 1-based bit `index` flipped.
    pub fn flipped(&self, index: usize) -> InputVector {
        let mut bits = self.bits.clone();
        bits.set(index - 1, !bits.get(index - 1));
        InputVector { bits }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommMode {
    PointToPoint,
    Broadcast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Timing {
    Synchronous,
    Asynchronous,
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl FromStr for $name {
            type Err = SimError;
            fn from_str(s: &str) -> Result<Self, SimError> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(SimError::config(format!(
                        "unknown {} id `{other}`", stringify!($name)
                    ))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                text.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_enum! {
    /// Protocol selector.
    ProtocolId {
        QueryAll => "query-all",
        Alg1 => "alg1",
        TwoRound => "alg3-2round",
        LogN => "alg4-logn",
        Boosted => "alg5-broadcast",
        StaticCrash => "static-crash",
        RapidCrash => "rapid-crash",
        AsyncOneCrash => "async-1crash",
        AsyncFCrash => "async-fcrash",
    }
}

string_enum! {
    /// Adversary selector.
    AdversaryId {
        None => "none",
        Contrarian => "contrarian",
        IntervalFlood => "interval-flood",
        DynamicFlood => "dynamic-flood",
        SilentCrash => "silent-crash",
        RandomCrash => "random-crash",
        SlowDelivery => "slow-delivery",
    }
}

impl ProtocolId {
    pub fn timing(self) -> Timing {
        match self {
            ProtocolId::AsyncOneCrash | ProtocolId::AsyncFCrash => Timing::Asynchronous,
            _ => Timing::Synchronous,
        }
    }

    pub fn default_mode(self) -> CommMode {
        match self {
            ProtocolId::Boosted => CommMode::Broadcast,
            _ => CommMode::PointToPoint,
        }
    }

    /// Whether the protocol only tolerates crash faults.
    pub fn crash_only(self) -> bool {
        matches!(
            self,
            ProtocolId::StaticCrash
                | ProtocolId::RapidCrash
                | ProtocolId::AsyncOneCrash
                | ProtocolId::AsyncFCrash
        )
    }
}

/// Everything that determines one run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub k: usize,
    pub beta: Ratio,
    pub mode: CommMode,
    pub timing: Timing,
    pub protocol: ProtocolId,
    pub adversary: AdversaryId,
    pub seed: u64,
    pub constants: BTreeMap<String, Ratio>,
    pub round_cap: Option<u64>,
    pub event_cap: Option<u64>,
    pub record_events: bool,
}

impl SimConfig {
    /// Config with the protocol's natural mode and timing and no faults.
    pub fn new(protocol: ProtocolId, n: usize, k: usize, beta: Ratio, seed: u64) -> Self {
        SimConfig {
            n,
            k,
            beta,
            mode: protocol.default_mode(),
            timing: protocol.timing(),
            protocol,
            adversary: AdversaryId::None,
            seed,
            constants: BTreeMap::new(),
            round_cap: None,
            event_cap: None,
            record_events: false,
        }
    }

    pub fn with_adversary(mut self, adversary: AdversaryId) -> Self {
        self.adversary = adversary;
        self
    }

    pub fn with_constant(mut self, name: &str, value: Ratio) -> Self {
        self.constants.insert(name.to_string(), value);
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.k == 0 {
            return Err(SimError::config("k must be at least 1"));
        }
        // k may exceed n: the two-round protocol's root branch needs it.
        if self.n == 0 {
            return Err(SimError::config("n must be at least 1"));
        }
        if self.beta < Ratio::zero() || self.beta >= Ratio::one() {
            return Err(SimError::config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if self.k > u32::MAX as usize {
            return Err(SimError::config("k too large"));
        }
        Ok(())
    }

    pub fn gamma(&self) -> Ratio {
        Ratio::one() - self.beta
    }

    /// Fault budget ⌊βk⌋.
    pub fn budget(&self) -> usize {
        (self.beta * Ratio::from_integer(self.k as i64)).floor().to_integer() as usize
    }

    /// Guaranteed number of honest peers, k − ⌊βk⌋.
    pub fn honest_floor(&self) -> usize {
        self.k - self.budget()
    }

    pub fn constant(&self, name: &str, default: Ratio) -> Ratio {
        self.constants.get(name).copied().unwrap_or(default)
    }

    pub fn round_cap(&self) -> u64 {
        self.round_cap.unwrap_or_else(|| {
            let lg_k = ceil_log2(self.k as u64) as u64;
            8 * (self.n as u64 + self.k as u64) * (lg_k + 2)
        })
    }

    pub fn event_cap(&self) -> u64 {
        self.event_cap
            .unwrap_or(64 * self.n as u64 * self.k as u64)
    }
}

/// ⌈log2 x⌉ for x ≥ 1.
pub fn ceil_log2(x: u64) -> u32 {
    assert!(x >= 1);
    64 - (x - 1).leading_zeros()
}

/// ⌊log2 x⌋ for x ≥ 1.
pub fn floor_log2(x: u64) -> u32 {
    assert!(x >= 1);
    63 - x.leading_zeros()
}

pub fn ratio_to_f64(r: Ratio) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Parses `"3/8"`, `"0.25"` or `"2"` into an exact rational.
pub fn parse_ratio(text: &str) -> Result<Ratio, SimError> {
    let text = text.trim();
    let bad = || SimError::config(format!("not a rational number: `{text}`"));
    if let Some((num, den)) = text.split_once('/') {
        let num: i64 = num.trim().parse().map_err(|_| bad())?;
        let den: i64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(num, den));
    }
    if let Some((whole, frac)) = text.split_once('.') {
        if frac.is_empty() || frac.len() > 15 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let negative = whole.starts_with('-');
        let whole: i64 = if whole.is_empty() || whole == "-" {
            0
        } else {
            whole.parse().map_err(|_| bad())?
        };
        let den = 10i64.pow(frac.len() as u32);
        let frac: i64 = frac.parse().map_err(|_| bad())?;
        let magnitude = Ratio::from_integer(whole.abs()) + Ratio::new(frac, den);
        return Ok(if negative { -magnitude } else { magnitude });
    }
    text.parse::<i64>().map(Ratio::from_integer).map_err(|_| bad())
}

/// Serde helpers that store a rational as `"p/q"` (or `"p"`).
pub mod ratio_text {
    use super::{parse_ratio, Ratio};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Ratio, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio, D::Error> {
        let text = String::deserialize(d)?;
        parse_ratio(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_is_floor_of_beta_k() {
        let cfg = SimConfig::new(ProtocolId::Alg1, 64, 10, Ratio::new(1, 3), 0);
        assert_eq!(cfg.budget(), 3);
        assert_eq!(cfg.honest_floor(), 7);
    }

    #[test]
    fn validate_rejects_beta_one() {
        let cfg = SimConfig::new(ProtocolId::Alg1, 64, 16, Ratio::one(), 0);
        assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
    }

    #[test]
    fn ratio_parsing_is_exact() {
        assert_eq!(parse_ratio("0.25").unwrap(), Ratio::new(1, 4));
        assert_eq!(parse_ratio("7/16").unwrap(), Ratio::new(7, 16));
        assert_eq!(parse_ratio("-1").unwrap(), Ratio::from_integer(-1));
        assert_eq!(parse_ratio("-0.5").unwrap(), Ratio::new(-1, 2));
        assert!(parse_ratio("1/0").is_err());
        assert!(parse_ratio("x").is_err());
    }

    #[test]
    fn ids_round_trip_through_text() {
        for p in ProtocolId::ALL {
            assert_eq!(p.as_str().parse::<ProtocolId>().unwrap(), *p);
        }
        assert!("alg9".parse::<ProtocolId>().is_err());
    }

    #[test]
    fn log_helpers() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(9), 4);
        assert_eq!(floor_log2(9), 3);
    }
}
