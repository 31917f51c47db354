//! Point membership scorers: map a record's signals to a membership score,
//! higher meaning more member-like.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RecordId;
use crate::signals::SignalMatrix;

pub trait MembershipScorer: Send + Sync {
    fn name(&self) -> &'static str;
    fn score(&self, id: RecordId, signals: &SignalMatrix) -> Result<f64>;
}

/// LOSS attack: `exp(-loss)` with `loss = -ln P(x|θ)`, i.e. the target signal.
pub fn loss_score(id: RecordId, signals: &SignalMatrix) -> Result<f64> {
    let loss = -signals.target(id)?.ln();
    Ok((-loss).exp())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossScorer;

impl MembershipScorer for LossScorer {
    fn name(&self) -> &'static str {
        "loss"
    }

    fn score(&self, id: RecordId, signals: &SignalMatrix) -> Result<f64> {
        loss_score(id, signals)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmiaConfig {
    /// Interpolation coefficient of the offline `P_in ≈ a·P_out + (1 - a)` approximation.
    pub a: f64,
    /// Dominance threshold on the likelihood-ratio quotient.
    pub gamma: f64,
    /// Population records `Z` compared against.
    pub population_ids: Vec<RecordId>,
}

impl RmiaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.a) {
            return Err(Error::Config(format!("RMIA a={} outside [0, 1]", self.a)));
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(Error::Config(format!("RMIA gamma={} must be > 0", self.gamma)));
        }
        if self.population_ids.is_empty() {
            return Err(Error::Config("RMIA population is empty".into()));
        }
        Ok(())
    }
}

/// Normalizing constant `P(x)` of offline RMIA, built from reference models
/// trained without `x`.
pub fn rmia_marginal(id: RecordId, signals: &SignalMatrix, a: f64) -> Result<f64> {
    if signals.n_refs() == 0 {
        return Err(Error::Config("RMIA needs at least one reference model".into()));
    }
    let refs = signals.refs(id)?;
    let mean_out = refs.iter().sum::<f64>() / refs.len() as f64;
    let p_in = a * mean_out + (1.0 - a);
    Ok(0.5 * p_in + 0.5 * mean_out)
}

fn likelihood_ratio(id: RecordId, signals: &SignalMatrix, a: f64) -> Result<f64> {
    Ok(signals.target(id)? / rmia_marginal(id, signals, a)?)
}

/// Offline RMIA score: the fraction of population records `z` with
/// `ratio(x) / ratio(z) >= gamma`.
pub fn rmia_score(id: RecordId, signals: &SignalMatrix, cfg: &RmiaConfig) -> Result<f64> {
    cfg.validate()?;
    let ratio = likelihood_ratio(id, signals, cfg.a)?;
    let population = cfg
        .population_ids
        .iter()
        .map(|&z| likelihood_ratio(z, signals, cfg.a))
        .collect::<Result<Vec<_>>>()?;
    Ok(dominated_fraction(ratio, &population, cfg.gamma))
}

fn dominated_fraction(ratio: f64, population: &[f64], gamma: f64) -> f64 {
    let dominated = population.iter().filter(|&&rz| ratio / rz >= gamma).count();
    dominated as f64 / population.len() as f64
}

/// RMIA with the population ratios computed once.
#[derive(Clone, Debug)]
pub struct RmiaScorer {
    a: f64,
    gamma: f64,
    population_ratios: Vec<f64>,
}

impl RmiaScorer {
    /// Fails if a population record is a training member of the target.
    pub fn new(cfg: &RmiaConfig, signals: &SignalMatrix, members: &BTreeSet<RecordId>) -> Result<Self> {
        cfg.validate()?;
        if let Some(id) = cfg.population_ids.iter().find(|id| members.contains(id)) {
            return Err(Error::Config(format!(
                "population record {id} is a training member"
            )));
        }
        let population_ratios = cfg
            .population_ids
            .iter()
            .map(|&z| likelihood_ratio(z, signals, cfg.a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            a: cfg.a,
            gamma: cfg.gamma,
            population_ratios,
        })
    }
}

impl MembershipScorer for RmiaScorer {
    fn name(&self) -> &'static str {
        "rmia"
    }

    fn score(&self, id: RecordId, signals: &SignalMatrix) -> Result<f64> {
        let ratio = likelihood_ratio(id, signals, self.a)?;
        Ok(dominated_fraction(ratio, &self.population_ratios, self.gamma))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn matrix(rows: &[(RecordId, f64, &[f64])]) -> SignalMatrix {
        let n_refs = rows.first().map_or(0, |r| r.2.len());
        let mut m = SignalMatrix::new(n_refs);
        for &(id, t, refs) in rows {
            m.push(id, t, refs).unwrap();
        }
        m
    }

    #[test]
    fn loss_examples() {
        let m = matrix(&[(0, 1.0, &[]), (1, 0.5, &[]), (2, 1e-15, &[])]);
        assert_eq!(loss_score(0, &m).unwrap(), 1.0);
        assert!((loss_score(1, &m).unwrap() - 0.5).abs() < 1e-15);
        assert!((loss_score(2, &m).unwrap() - 1e-12).abs() < 1e-24);
        assert!(matches!(loss_score(9, &m), Err(Error::MissingRecord(9))));
    }

    #[test]
    fn marginal_examples() {
        let m = matrix(&[(0, 0.8, &[0.3, 0.5])]);
        assert!((rmia_marginal(0, &m, 0.5).unwrap() - 0.55).abs() < 1e-12);
        assert!((rmia_marginal(0, &m, 1.0).unwrap() - 0.4).abs() < 1e-15);
        assert!((rmia_marginal(0, &m, 0.0).unwrap() - 0.7).abs() < 1e-15);
        let bare = matrix(&[(0, 0.8, &[])]);
        assert!(matches!(rmia_marginal(0, &bare, 0.5), Err(Error::Config(_))));
    }

    #[test]
    fn rmia_hand_example() {
        // record: mean_out 0.4, a=0.5 -> P(x)=0.55, ratio 0.8/0.55
        // z1: mean_out 0.4, target 0.55 -> ratio 1.0 ; z2: mean_out 0.2, target 0.8 -> ratio 2.0
        let m = matrix(&[(0, 0.8, &[0.4]), (1, 0.55, &[0.4]), (2, 0.8, &[0.2])]);
        let cfg = RmiaConfig { a: 0.5, gamma: 1.0, population_ids: vec![1, 2] };
        assert_eq!(rmia_score(0, &m, &cfg).unwrap(), 0.5);
        let inf = RmiaConfig { gamma: f64::INFINITY, ..cfg.clone() };
        assert_eq!(rmia_score(0, &m, &inf).unwrap(), 0.0);
    }

    #[test]
    fn identical_record_dominates_itself() {
        let m = matrix(&[(0, 0.6, &[0.3]), (1, 0.6, &[0.3]), (2, 0.6, &[0.3])]);
        let cfg = RmiaConfig { a: 0.33, gamma: 1.0, population_ids: vec![1, 2] };
        assert_eq!(rmia_score(0, &m, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn config_errors() {
        let m = matrix(&[(0, 0.6, &[0.3])]);
        let empty = RmiaConfig { a: 0.5, gamma: 1.0, population_ids: vec![] };
        assert!(matches!(rmia_score(0, &m, &empty), Err(Error::Config(_))));
        let missing = RmiaConfig { population_ids: vec![5], ..empty.clone() };
        assert!(matches!(rmia_score(0, &m, &missing), Err(Error::MissingRecord(5))));
        let member = RmiaConfig { population_ids: vec![0], ..empty };
        assert!(RmiaScorer::new(&member, &m, &BTreeSet::from([0])).is_err());
    }

    #[test]
    fn scorer_matches_free_function() {
        let m = matrix(&[(0, 0.8, &[0.4]), (1, 0.55, &[0.4]), (2, 0.8, &[0.2])]);
        let cfg = RmiaConfig { a: 0.5, gamma: 1.0, population_ids: vec![1, 2] };
        let s = RmiaScorer::new(&cfg, &m, &BTreeSet::new()).unwrap();
        for id in 0..3 {
            assert_eq!(s.score(id, &m).unwrap(), rmia_score(id, &m, &cfg).unwrap());
        }
    }

    fn population() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 1..20)
    }

    proptest! {
        #[test]
        fn rmia_monotone_in_target_and_antitone_in_gamma(
            pop in population(),
            t1 in 0.01f64..1.0,
            t2 in 0.01f64..1.0,
            r in 0.01f64..1.0,
            a in 0.0f64..=1.0,
            g1 in 0.1f64..10.0,
            g2 in 0.1f64..10.0,
        ) {
            let mut m = SignalMatrix::new(1);
            m.push(0, t1.min(t2), &[r]).unwrap();
            m.push(1, t1.max(t2), &[r]).unwrap();
            for (i, &(t, rr)) in pop.iter().enumerate() {
                m.push(10 + i as u64, t, &[rr]).unwrap();
            }
            let ids: Vec<u64> = (0..pop.len() as u64).map(|i| 10 + i).collect();
            let n = ids.len() as f64;
            let low = RmiaConfig { a, gamma: g1.min(g2), population_ids: ids.clone() };
            let high = RmiaConfig { gamma: g1.max(g2), ..low.clone() };
            let s_lo = rmia_score(0, &m, &low).unwrap();
            let s_hi = rmia_score(1, &m, &low).unwrap();
            prop_assert!(s_lo <= s_hi);
            prop_assert!(rmia_score(1, &m, &high).unwrap() <= s_hi);
            prop_assert!((0.0..=1.0).contains(&s_hi));
            let k = s_hi * n;
            prop_assert!((k - k.round()).abs() < 1e-9);
        }

        #[test]
        fn loss_strictly_monotone(t1 in 1e-12f64..1.0, t2 in 1e-12f64..1.0) {
            prop_assume!(t1 < t2 * (1.0 - 1e-9));
            let mut m = SignalMatrix::new(0);
            m.push(0, t1, &[]).unwrap();
            m.push(1, t2, &[]).unwrap();
            prop_assert!(loss_score(0, &m).unwrap() < loss_score(1, &m).unwrap());
        }
    }
}
