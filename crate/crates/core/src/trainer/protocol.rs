use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Alternating schedule: `r` denoiser updates on real data, `s` on synthetic
/// data, then `p` quality-estimator updates, each on a minibatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub r: usize,
    pub s: usize,
    pub p: usize,
    pub minibatch_size: usize,
}

pub const DEFAULT_MINIBATCH: usize = 3;

impl ProtocolSpec {
    pub fn new(r: usize, s: usize, p: usize, minibatch_size: usize) -> Result<Self> {
        let spec = ProtocolSpec { r, s, p, minibatch_size };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r + self.s == 0 {
            return Err(Error::Config("protocol needs r + s >= 1".into()));
        }
        if self.p == 0 {
            return Err(Error::Config("protocol needs p >= 1".into()));
        }
        if self.minibatch_size == 0 {
            return Err(Error::Config("minibatch size must be positive".into()));
        }
        Ok(())
    }

    /// Plain-ASCII form `r-s-p`.
    pub fn ascii(&self) -> String {
        format!("{}-{}-{}", self.r, self.s, self.p)
    }
}

impl fmt::Display for ProtocolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\u{27e8}{}\u{2212}{}\u{2212}{}\u{27e9}", self.r, self.s, self.p)
    }
}

impl FromStr for ProtocolSpec {
    type Err = Error;

    /// Accepts `⟨1−1−50⟩`, `<1-1-50>` and `1-1-50`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let t = t
            .strip_prefix('\u{27e8}')
            .and_then(|t| t.strip_suffix('\u{27e9}'))
            .or_else(|| t.strip_prefix('<').and_then(|t| t.strip_suffix('>')))
            .unwrap_or(t);
        let parts: Vec<&str> = t.split(['-', '\u{2212}']).collect();
        let bad = || Error::Config(format!("invalid protocol {s:?}, expected r-s-p"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        ProtocolSpec::new(n[0], n[1], n[2], DEFAULT_MINIBATCH)
    }
}
