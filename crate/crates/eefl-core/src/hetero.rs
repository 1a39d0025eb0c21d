//! Client population modeling: per-round client sampling and sub-net size
//! assignment from a heterogeneity profile.

use crate::error::{Error, Result};
use crate::model::SubNetSpec;
use crate::rng::StreamKey;

/// Probability vector over sub-net sizes 1..=M.
#[derive(Clone, Debug, PartialEq)]
pub struct HeterogeneityProfile {
    pub name: String,
    pub pi: Vec<f64>,
}

impl HeterogeneityProfile {
    pub fn new(name: impl Into<String>, pi: Vec<f64>) -> Result<Self> {
        let profile = HeterogeneityProfile {
            name: name.into(),
            pi,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pi.is_empty() {
            return Err(Error::Config("heterogeneity profile is empty".into()));
        }
        if self.pi.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Config(
                "profile probabilities must be finite and >= 0".into(),
            ));
        }
        let sum: f64 = self.pi.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "profile probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn num_exits(&self) -> usize {
        self.pi.len()
    }

    /// Built-in profiles. `uniform` works for any M; `regular` and
    /// `extreme` are defined for M = 6 only.
    pub fn builtin(name: &str, num_exits: usize) -> Result<Self> {
        match name {
            "uniform" => {
                if num_exits == 0 {
                    return Err(Error::Config("uniform profile needs M >= 1".into()));
                }
                Self::new("uniform", vec![1.0 / num_exits as f64; num_exits])
            }
            "regular" => {
                if num_exits != 6 {
                    return Err(Error::Config(format!(
                        "profile `regular` is defined for M=6, got M={num_exits}"
                    )));
                }
                Self::new("regular", vec![0.4, 0.2, 0.2, 0.1, 0.05, 0.05])
            }
            "extreme" => {
                if num_exits != 6 {
                    return Err(Error::Config(format!(
                        "profile `extreme` is defined for M=6, got M={num_exits}"
                    )));
                }
                Self::new("extreme", vec![0.8, 0.1, 0.025, 0.025, 0.025, 0.025])
            }
            other => Err(Error::Config(format!("unknown builtin profile `{other}`"))),
        }
    }
}

/// Whether a client's sub-net size is redrawn every round (volatile
/// resources) or fixed per device.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    PerRound,
    PerClient,
}

/// The client fleet: ids are 0..total_clients, one data shard per client.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientPopulation {
    pub total_clients: usize,
    /// Fraction of clients instantiated per round, in (0, 1].
    pub sample_fraction: f64,
    pub seed: u64,
}

impl ClientPopulation {
    pub fn validate(&self) -> Result<()> {
        if self.total_clients == 0 {
            return Err(Error::Config(
                "population must have at least one client".into(),
            ));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "sample_fraction {} outside (0, 1]",
                self.sample_fraction
            )));
        }
        Ok(())
    }

    /// ceil(fraction * total), with a guard against binary-fraction noise
    /// (0.1 * 580 must give 58, not 59).
    pub fn clients_per_round(&self) -> usize {
        let raw = self.sample_fraction * self.total_clients as f64;
        let nearest = raw.round();
        let k = if (raw - nearest).abs() < 1e-9 {
            nearest
        } else {
            raw.ceil()
        };
        (k as usize).clamp(1, self.total_clients)
    }
}

/// Draw the round's participants (distinct, sorted by client id) and assign
/// each a sub-net size from the profile. Deterministic in (seed, round).
pub fn sample_round(
    population: &ClientPopulation,
    profile: &HeterogeneityProfile,
    assignment: Assignment,
    round: u64,
) -> Result<Vec<(u64, SubNetSpec)>> {
    population.validate()?;
    profile.validate()?;
    let key = StreamKey::root(population.seed);
    let k = population.clients_per_round();

    // Partial Fisher-Yates: the first k entries are a uniform draw without
    // replacement.
    let mut ids: Vec<u64> = (0..population.total_clients as u64).collect();
    let mut select_rng = key.child_str("select").child(round).stream();
    for i in 0..k {
        let j = i + select_rng.index(ids.len() - i);
        ids.swap(i, j);
    }
    let mut chosen: Vec<u64> = ids[..k].to_vec();
    chosen.sort_unstable();

    let assigned = chosen
        .into_iter()
        .map(|client_id| {
            let mut rng = match assignment {
                Assignment::PerRound => key
                    .child_str("assign")
                    .child(round)
                    .child(client_id)
                    .stream(),
                Assignment::PerClient => key.child_str("assign-fixed").child(client_id).stream(),
            };
            let exits = rng.categorical(&profile.pi) + 1;
            (client_id, SubNetSpec::new(exits))
        })
        .collect();
    Ok(assigned)
}
