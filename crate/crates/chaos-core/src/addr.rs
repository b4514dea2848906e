//! Simulated address space.

use serde::{Deserialize, Serialize};
use std::fmt;

/// An address in the simulated network. Addresses are opaque strings so
/// scenarios can use dotted-quad style ("10.0.2.7") or plain labels; only
/// equality and a stable ordering matter to the simulation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub String);

impl Address {
    pub fn new(s: impl Into<String>) -> Self {
        Address(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Address {
    fn from(s: &str) -> Self {
        Address(s.to_string())
    }
}

impl From<String> for Address {
    fn from(s: String) -> Self {
        Address(s)
    }
}

/// Builds the reserved virtual block used by address mutation: a dedicated
/// range that must stay disjoint from every real address in the scenario.
pub fn virtual_pool(size: usize) -> Vec<Address> {
    (0..size)
        .map(|i| Address(format!("198.18.{}.{}", i / 250, i % 250 + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_pool_is_distinct() {
        let pool = virtual_pool(600);
        let set: std::collections::BTreeSet<_> = pool.iter().collect();
        assert_eq!(set.len(), 600);
    }
}
