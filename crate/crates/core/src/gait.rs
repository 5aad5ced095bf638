//! Gait schedules: which limbs carry load at each critical instant.
//!
//! A round is a sequence of phases. Each phase lifts a set of limbs and then
//! places them on this round's footholds, giving two critical instants: one
//! with the phase's limbs in the air, one after they are placed and the body
//! has been pushed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstantKind {
    Lift,
    Push,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalInstant {
    pub phase: usize,
    pub kind: InstantKind,
    /// Load-bearing limbs.
    pub contact: Vec<bool>,
    /// Limbs already standing on this round's foothold.
    pub stepped: Vec<bool>,
}

impl CriticalInstant {
    pub fn n_contacts(&self) -> usize {
        self.contact.iter().filter(|c| **c).count()
    }

    pub fn contact_limbs(&self) -> impl Iterator<Item = usize> + '_ {
        self.contact
            .iter()
            .enumerate()
            .filter(|(_, c)| **c)
            .map(|(i, _)| i)
    }

    pub fn swing_limbs(&self) -> impl Iterator<Item = usize> + '_ {
        self.contact
            .iter()
            .enumerate()
            .filter(|(_, c)| !**c)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaitSchedule {
    pub name: String,
    pub n_limbs: usize,
    pub rounds: usize,
    pub phases: Vec<Vec<usize>>,
    /// Critical instants of one round, in order.
    pub instants: Vec<CriticalInstant>,
}

/// Minimum number of load-bearing limbs at any instant.
pub const MIN_CONTACTS: usize = 3;

impl GaitSchedule {
    /// Builds the instants for the given phases and checks that every limb is
    /// moved exactly once per round and at least three limbs always carry load.
    pub fn custom(
        name: &str,
        n_limbs: usize,
        rounds: usize,
        phases: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::InvalidInput("gait needs at least one round".into()));
        }
        let mut seen = vec![0usize; n_limbs];
        for p in &phases {
            if p.is_empty() {
                return Err(Error::InvalidInput("gait phase lifts no limb".into()));
            }
            for &l in p {
                if l >= n_limbs {
                    return Err(Error::InvalidInput(format!(
                        "gait phase refers to limb {l}, robot has {n_limbs}"
                    )));
                }
                seen[l] += 1;
            }
        }
        if let Some(l) = seen.iter().position(|c| *c != 1) {
            return Err(Error::InvalidInput(format!(
                "every limb must be moved exactly once per round; limb {l} is moved {} times",
                seen[l]
            )));
        }
        let mut instants = Vec::with_capacity(2 * phases.len());
        let mut stepped = vec![false; n_limbs];
        for (k, p) in phases.iter().enumerate() {
            let mut contact = vec![true; n_limbs];
            for &l in p {
                contact[l] = false;
            }
            instants.push(CriticalInstant {
                phase: k,
                kind: InstantKind::Lift,
                contact,
                stepped: stepped.clone(),
            });
            for &l in p {
                stepped[l] = true;
            }
            instants.push(CriticalInstant {
                phase: k,
                kind: InstantKind::Push,
                contact: vec![true; n_limbs],
                stepped: stepped.clone(),
            });
        }
        let g = Self {
            name: name.to_string(),
            n_limbs,
            rounds,
            phases,
            instants,
        };
        g.validate()?;
        Ok(g)
    }

    /// One limb at a time, in the given order.
    pub fn one_leg(n_limbs: usize, rounds: usize, order: &[usize]) -> Result<Self> {
        let phases = order.iter().map(|&l| vec![l]).collect();
        Self::custom("one-leg", n_limbs, rounds, phases)
    }

    /// Alternating tripods of a six-limbed robot ordered LF, LM, LR, RF, RM, RR.
    pub fn tripod(rounds: usize) -> Result<Self> {
        Self::custom("tripod", 6, rounds, vec![vec![0, 4, 2], vec![3, 1, 5]])
    }

    pub fn validate(&self) -> Result<()> {
        for (t, inst) in self.instants.iter().enumerate() {
            if inst.contact.len() != self.n_limbs || inst.stepped.len() != self.n_limbs {
                return Err(Error::InvalidInput(format!(
                    "instant {t}: flag vectors must have one entry per limb"
                )));
            }
            if inst.n_contacts() < MIN_CONTACTS {
                return Err(Error::InvalidInput(format!(
                    "instant {t} has {} load-bearing limbs; quasi-static support needs at least {MIN_CONTACTS}",
                    inst.n_contacts()
                )));
            }
        }
        Ok(())
    }

    pub fn instants_per_round(&self) -> usize {
        self.instants.len()
    }

    pub fn contacts_per_instant(&self) -> Vec<usize> {
        self.instants.iter().map(|i| i.n_contacts()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_leg_has_twelve_instants() {
        let g = GaitSchedule::one_leg(6, 1, &[3, 4, 5, 0, 1, 2]).unwrap();
        assert_eq!(g.instants_per_round(), 12);
        assert_eq!(
            g.contacts_per_instant(),
            vec![5, 6, 5, 6, 5, 6, 5, 6, 5, 6, 5, 6]
        );
        assert!(g.instants[1].stepped[3] && !g.instants[1].stepped[4]);
        assert!(g.instants[11].stepped.iter().all(|s| *s));
    }

    #[test]
    fn tripod_lifts_three() {
        let g = GaitSchedule::tripod(3).unwrap();
        assert_eq!(g.instants_per_round(), 4);
        for i in &g.instants {
            match i.kind {
                InstantKind::Lift => assert_eq!(i.swing_limbs().count(), 3),
                InstantKind::Push => assert_eq!(i.swing_limbs().count(), 0),
            }
        }
    }

    #[test]
    fn rejects_unsupported_instants() {
        assert!(GaitSchedule::custom("bad", 6, 1, vec![vec![0, 1, 2, 3], vec![4, 5]]).is_err());
        assert!(GaitSchedule::custom("dup", 6, 1, vec![vec![0, 1], vec![1, 2, 3, 4, 5]]).is_err());
        assert!(GaitSchedule::custom("missing", 6, 1, vec![vec![0], vec![1]]).is_err());
    }
}
