use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which scalar process the event looks at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Target {
    /// One coordinate of the forward state.
    X {
        #[serde(default)]
        coordinate: usize,
    },
    /// The backward value `Y`.
    Y,
}

/// Closed threshold events on a scalar path `p` with reference `ℓ` (the
/// noiseless limit of the same process).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Functional {
    /// `p(T) ≥ level`.
    TerminalAtLeast { level: f64 },
    /// `max_s (p(s) − ℓ(s)) ≥ delta`, one-sided.
    SupDeviationAtLeast { delta: f64 },
    /// `lo ≤ p(T) ≤ hi`.
    TerminalInInterval { lo: f64, hi: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub target: Target,
    pub functional: Functional,
}

/// How far a path is from the event, where to push, and which way.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Violation {
    pub distance: f64,
    pub node: usize,
    /// `∂distance/∂p_node` when the distance is positive.
    pub sign: f64,
}

impl EventSpec {
    pub fn new(target: Target, functional: Functional) -> Result<Self> {
        let e = Self { target, functional };
        e.check()?;
        Ok(e)
    }

    pub fn check(&self) -> Result<()> {
        let ok = match self.functional {
            Functional::TerminalAtLeast { level } => level.is_finite(),
            Functional::SupDeviationAtLeast { delta } => delta.is_finite(),
            Functional::TerminalInInterval { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("malformed event {:?}", self.functional)))
        }
    }

    pub fn on_x(coordinate: usize, functional: Functional) -> Self {
        Self {
            target: Target::X { coordinate },
            functional,
        }
    }

    pub fn on_y(functional: Functional) -> Self {
        Self {
            target: Target::Y,
            functional,
        }
    }

    pub fn needs_reference(&self) -> bool {
        matches!(self.functional, Functional::SupDeviationAtLeast { .. })
    }

    /// Event membership of a sampled path; `reference` may be empty unless
    /// [`needs_reference`](Self::needs_reference).
    pub fn holds(&self, path: &[f64], reference: &[f64]) -> bool {
        let last = path[path.len() - 1];
        match self.functional {
            Functional::TerminalAtLeast { level } => last >= level,
            Functional::SupDeviationAtLeast { delta } => path
                .iter()
                .zip(reference)
                .any(|(p, l)| p - l >= delta),
            Functional::TerminalInInterval { lo, hi } => (lo..=hi).contains(&last),
        }
    }

    pub(crate) fn violation(&self, path: &[f64], reference: &[f64]) -> Violation {
        let n = path.len() - 1;
        let last = path[n];
        match self.functional {
            Functional::TerminalAtLeast { level } => Violation {
                distance: (level - last).max(0.0),
                node: n,
                sign: -1.0,
            },
            Functional::TerminalInInterval { lo, hi } => {
                if last < lo {
                    Violation {
                        distance: lo - last,
                        node: n,
                        sign: -1.0,
                    }
                } else {
                    Violation {
                        distance: (last - hi).max(0.0),
                        node: n,
                        sign: 1.0,
                    }
                }
            }
            Functional::SupDeviationAtLeast { delta } => {
                let dev = |k: usize| path[k] - reference[k];
                let top = (0..=n).map(dev).fold(f64::NEG_INFINITY, f64::max);
                // the start node is pinned, so push the best later node; ties
                // go to the latest
                let mut node = n.max(1);
                for k in 1..=n {
                    if dev(k) >= dev(node) {
                        node = k;
                    }
                }
                Violation {
                    distance: (delta - top).max(0.0),
                    node,
                    sign: -1.0,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn membership_is_closed() {
        let e = EventSpec::on_x(0, Functional::TerminalAtLeast { level: 1.0 });
        assert!(e.holds(&[0.0, 1.0], &[]));
        assert!(!e.holds(&[0.0, 0.999], &[]));
        let s = EventSpec::on_x(0, Functional::SupDeviationAtLeast { delta: 0.5 });
        assert!(s.holds(&[0.0, 0.5, 0.1], &[0.0, 0.0, 0.0]));
        let v = s.violation(&[0.0, 0.3, 0.3], &[0.0; 3]);
        assert_eq!(v.node, 2);
        assert!((v.distance - 0.2).abs() < 1e-15);
        let i = EventSpec::on_y(Functional::TerminalInInterval { lo: 0.0, hi: 1.0 });
        assert_eq!(i.violation(&[0.0, 1.5], &[]).sign, 1.0);
        assert!(i.holds(&[3.0, 1.0], &[]));
    }

    #[test]
    fn config_round_trip() {
        let e = EventSpec::on_x(1, Functional::SupDeviationAtLeast { delta: 0.5 });
        let s = serde_json::to_string(&e).unwrap();
        assert!(s.contains("sup-deviation-at-least"));
        let back: EventSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
        let y: EventSpec = toml::from_str(
            "target = { process = \"y\" }\nfunctional = { kind = \"terminal-at-least\", level = 0.5 }",
        )
        .unwrap();
        assert_eq!(y.target, Target::Y);
    }

    #[test]
    fn malformed_interval_rejected() {
        assert!(EventSpec::new(Target::Y, Functional::TerminalInInterval { lo: 1.0, hi: 0.0 }).is_err());
    }
}
