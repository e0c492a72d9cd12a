//! Simulated time. Every timestamp in the platform is an offset in
//! milliseconds from the scenario epoch `t0`.

use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

pub const SECOND: u64 = 1_000;
pub const MINUTE: u64 = 60 * SECOND;
pub const HOUR: u64 = 60 * MINUTE;

/// A t0-relative instant or a duration, in milliseconds.
///
/// Deserializes from a bare integer (milliseconds) or from a string such as
/// `"30s"`, `"7m"`, `"1h"`, `"t0"`, `"t0+52m"` or `"t0+4m30s"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub fn ms(self) -> u64 {
        self.0
    }

    pub fn parse(text: &str) -> Result<SimTime, String> {
        let text = text.trim();
        let rest = match text.strip_prefix("t0") {
            Some("") => return Ok(SimTime(0)),
            Some(r) => r
                .trim_start()
                .strip_prefix('+')
                .ok_or_else(|| format!("expected `+` after t0 in {text:?}"))?
                .trim_start(),
            None => text,
        };
        if rest.is_empty() {
            return Err("empty duration".into());
        }
        if let Ok(ms) = rest.parse::<u64>() {
            return Ok(SimTime(ms));
        }
        let mut total = 0u64;
        let mut digits = String::new();
        let mut chars = rest.chars().peekable();
        while let Some(c) = chars.next() {
            if c.is_ascii_digit() {
                digits.push(c);
                continue;
            }
            let unit = match c {
                'h' => HOUR,
                's' => SECOND,
                'm' if chars.peek() == Some(&'s') => {
                    chars.next();
                    1
                }
                'm' => MINUTE,
                _ => return Err(format!("unexpected {c:?} in duration {text:?}")),
            };
            let n: u64 = digits
                .parse()
                .map_err(|_| format!("missing number before unit in {text:?}"))?;
            total += n * unit;
            digits.clear();
        }
        if !digits.is_empty() {
            return Err(format!("trailing number without unit in {text:?}"));
        }
        Ok(SimTime(total))
    }
}

/// Formats as `t0+M:SS` (or `t0+M:SS.mmm` when not on a whole second).
impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let minutes = self.0 / MINUTE;
        let secs = (self.0 % MINUTE) / SECOND;
        let millis = self.0 % SECOND;
        if millis == 0 {
            write!(f, "t0+{minutes}:{secs:02}")
        } else {
            write!(f, "t0+{minutes}:{secs:02}.{millis:03}")
        }
    }
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.0)
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl de::Visitor<'_> for Visitor {
            type Value = SimTime;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("milliseconds or a duration string like \"t0+7m\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<SimTime, E> {
                Ok(SimTime(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<SimTime, E> {
                u64::try_from(v)
                    .map(SimTime)
                    .map_err(|_| E::custom("time must be non-negative"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<SimTime, E> {
                SimTime::parse(v).map_err(E::custom)
            }
        }
        deserializer.deserialize_any(Visitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_offsets() {
        assert_eq!(SimTime::parse("t0").unwrap().ms(), 0);
        assert_eq!(SimTime::parse("t0+7m").unwrap().ms(), 420_000);
        assert_eq!(SimTime::parse("t0 + 4m30s").unwrap().ms(), 270_000);
        assert_eq!(SimTime::parse("30s").unwrap().ms(), 30_000);
        assert_eq!(SimTime::parse("1h45m").unwrap().ms(), 6_300_000);
        assert_eq!(SimTime::parse("250ms").unwrap().ms(), 250);
        assert_eq!(SimTime::parse("1500").unwrap().ms(), 1500);
        assert!(SimTime::parse("7x").is_err());
        assert!(SimTime::parse("t0-5m").is_err());
        assert!(SimTime::parse("5").is_ok());
        assert!(SimTime::parse("5m3").is_err());
    }

    #[test]
    fn displays_t0_relative() {
        assert_eq!(SimTime(3_120_000).to_string(), "t0+52:00");
        assert_eq!(SimTime(270_500).to_string(), "t0+4:30.500");
    }
}
