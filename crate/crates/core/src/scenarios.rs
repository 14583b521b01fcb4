//! Scenario files shipped with the crate.

use crate::error::Result;
use crate::simulator::Scenario;

const BUNDLED: &[(&str, &str)] = &[
    ("showcase8", include_str!("../scenarios/showcase8.toml")),
    ("balanced28", include_str!("../scenarios/balanced28.toml")),
    ("reinforce14", include_str!("../scenarios/reinforce14.toml")),
    ("delay28", include_str!("../scenarios/delay28.toml")),
    ("dynamicAMR28", include_str!("../scenarios/dynamicAMR28.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Raw TOML of a bundled scenario.
pub fn source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses and validates a bundled scenario; `None` for unknown names.
pub fn bundled(name: &str) -> Option<Result<Scenario>> {
    source(name).map(Scenario::parse_valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_scenarios_are_valid() {
        for name in names() {
            let s = bundled(name).unwrap().unwrap();
            assert_eq!(s.name, name);
        }
        assert!(bundled("nope").is_none());
    }
}
