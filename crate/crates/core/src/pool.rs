//! The labeled / unlabeled / test partition mutated by the query loop, with
//! an access guard that records who reads which ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid3;
use crate::patch::Patch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Labeled,
    Unlabeled,
    Test,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    /// Image read for training (labeled or unlabeled members).
    TrainingImage,
    /// Mask / branch labels read for a supervised loss.
    TrainingTarget,
    /// Image read while scoring unlabeled candidates.
    QueryImage,
    /// Image or ground truth read for held-out evaluation.
    Evaluation,
}

#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("fraction {name} = {value} must be positive and finite")]
    BadFraction { name: &'static str, value: f64 },
    #[error("split fractions sum to {0}, which exceeds 1")]
    FractionsExceedOne(f64),
    #[error("index {index} is not in the unlabeled set (it is {found:?})")]
    NotUnlabeled { index: usize, found: Membership },
    #[error("index {0} appears more than once in one transfer")]
    Duplicate(usize),
    #[error("access guard: {access:?} read of index {index} which is {found:?}")]
    Guard {
        index: usize,
        access: Access,
        found: Membership,
    },
    #[error("pool state does not partition {expected} patches")]
    BadState { expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub initial_labeled: f64,
    pub unlabeled: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub round: u32,
    pub indices: Vec<usize>,
}

/// Serializable partition; patches themselves are rebuilt from the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    pub n: usize,
    pub initial_labeled: Vec<usize>,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
    pub revealed: BTreeSet<usize>,
    pub history: Vec<Transfer>,
}

impl PoolState {
    pub fn membership(&self, index: usize) -> Membership {
        if self.labeled.contains(&index) {
            Membership::Labeled
        } else if self.unlabeled.contains(&index) {
            Membership::Unlabeled
        } else if self.test.contains(&index) {
            Membership::Test
        } else {
            Membership::Unknown
        }
    }

    /// L, U and test are pairwise disjoint and cover `0..n`.
    pub fn is_partition(&self) -> bool {
        let mut seen = vec![false; self.n];
        for &i in self.labeled.iter().chain(&self.unlabeled).chain(&self.test) {
            if i >= self.n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }

    /// Re-applies the transfer history to the initial split and returns the
    /// resulting (L, U).
    pub fn replay(&self) -> (Vec<usize>, Vec<usize>) {
        let mut labeled = self.initial_labeled.clone();
        let mut unlabeled: Vec<usize> = self
            .unlabeled
            .iter()
            .copied()
            .chain(self.history.iter().flat_map(|t| t.indices.iter().copied()))
            .collect();
        unlabeled.sort_unstable();
        for t in &self.history {
            unlabeled.retain(|i| !t.indices.contains(i));
            labeled.extend(&t.indices);
        }
        (labeled, unlabeled)
    }

    pub fn labeled_fraction(&self) -> f64 {
        self.labeled.len() as f64 / self.n.max(1) as f64
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct AccessLog {
    pub reads: BTreeMap<Access, BTreeSet<usize>>,
}

#[derive(Debug)]
pub struct Pool {
    patches: Vec<Patch>,
    state: PoolState,
    log: Mutex<AccessLog>,
}

impl Clone for Pool {
    fn clone(&self) -> Self {
        Self {
            patches: self.patches.clone(),
            state: self.state.clone(),
            log: Mutex::new(self.access_log()),
        }
    }
}

/// Seeded partition of `patches` into L₀, U and test. Counts are
/// `round(frac * N)` for L₀ and U; the remainder goes to test. With
/// `case_level`, whole cases are assigned so no case straddles two sets.
pub fn init_splits(
    patches: Vec<Patch>,
    fractions: SplitFractions,
    seed: u64,
    case_level: bool,
) -> Result<Pool, PoolError> {
    for (name, value) in [
        ("initial_labeled", fractions.initial_labeled),
        ("unlabeled", fractions.unlabeled),
        ("test", fractions.test),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(PoolError::BadFraction { name, value });
        }
    }
    let sum = fractions.initial_labeled + fractions.unlabeled + fractions.test;
    if sum > 1.0 + 1e-9 {
        return Err(PoolError::FractionsExceedOne(sum));
    }
    let n = patches.len();
    let n_l = ((fractions.initial_labeled * n as f64).round() as usize).min(n);
    let n_u = ((fractions.unlabeled * n as f64).round() as usize).min(n - n_l);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let order: Vec<usize> = if case_level {
        let mut cases: Vec<&str> = patches.iter().map(|p| p.case_id.as_str()).collect();
        cases.sort_unstable();
        cases.dedup();
        cases.shuffle(&mut rng);
        cases
            .iter()
            .flat_map(|c| (0..n).filter(|&i| patches[i].case_id == *c))
            .collect()
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    };

    let (mut labeled, mut unlabeled, mut test) = (Vec::new(), Vec::new(), Vec::new());
    if case_level {
        // Fill each set case by case until its target count is reached.
        let mut k = 0;
        while k < n {
            let case = &patches[order[k]].case_id;
            let group: Vec<usize> = order[k..]
                .iter()
                .copied()
                .take_while(|&i| &patches[i].case_id == case)
                .collect();
            k += group.len();
            if labeled.len() < n_l {
                labeled.extend(group);
            } else if unlabeled.len() < n_u {
                unlabeled.extend(group);
            } else {
                test.extend(group);
            }
        }
    } else {
        labeled.extend_from_slice(&order[..n_l]);
        unlabeled.extend_from_slice(&order[n_l..n_l + n_u]);
        test.extend_from_slice(&order[n_l + n_u..]);
    }
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    test.sort_unstable();
    let state = PoolState {
        n,
        initial_labeled: labeled.clone(),
        labeled,
        unlabeled,
        test,
        revealed: BTreeSet::new(),
        history: Vec::new(),
    };
    Ok(Pool {
        patches,
        state,
        log: Mutex::default(),
    })
}

impl Pool {
    /// Rebuilds a pool from a persisted partition.
    pub fn from_state(patches: Vec<Patch>, state: PoolState) -> Result<Self, PoolError> {
        if state.n != patches.len() || !state.is_partition() {
            return Err(PoolError::BadState {
                expected: patches.len(),
            });
        }
        Ok(Self {
            patches,
            state,
            log: Mutex::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn state(&self) -> &PoolState {
        &self.state
    }

    pub fn labeled(&self) -> &[usize] {
        &self.state.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.state.unlabeled
    }

    pub fn test(&self) -> &[usize] {
        &self.state.test
    }

    pub fn labeled_fraction(&self) -> f64 {
        self.state.labeled_fraction()
    }

    /// Moves `indices` from U to L in the given order and records the
    /// transfer. Validates every index before mutating anything.
    pub fn transfer_to_labeled(&mut self, indices: &[usize], round: u32) -> Result<(), PoolError> {
        let mut seen = BTreeSet::new();
        for &index in indices {
            if !seen.insert(index) {
                return Err(PoolError::Duplicate(index));
            }
            let found = self.state.membership(index);
            if found != Membership::Unlabeled {
                return Err(PoolError::NotUnlabeled { index, found });
            }
        }
        self.state.unlabeled.retain(|i| !seen.contains(i));
        self.state.labeled.extend_from_slice(indices);
        self.state.history.push(Transfer {
            round,
            indices: indices.to_vec(),
        });
        Ok(())
    }

    /// Simulated annotation: reveals the ground truth already attached to
    /// each patch and moves the indices into L.
    pub fn oracle_label(&mut self, indices: &[usize], round: u32) -> Result<(), PoolError> {
        self.transfer_to_labeled(indices, round)?;
        self.state.revealed.extend(indices.iter().copied());
        Ok(())
    }

    pub fn revealed(&self) -> &BTreeSet<usize> {
        &self.state.revealed
    }

    fn guard(&self, index: usize, access: Access, allowed: &[Membership]) -> Result<(), PoolError> {
        let found = self.state.membership(index);
        let mut log = self.log.lock().expect("access log poisoned");
        if !allowed.contains(&found) {
            return Err(PoolError::Guard {
                index,
                access,
                found,
            });
        }
        log.reads.entry(access).or_default().insert(index);
        Ok(())
    }

    /// Image of a training-pool member (L or U). Test patches are refused.
    pub fn training_image(&self, index: usize) -> Result<&Grid3<f32>, PoolError> {
        self.guard(
            index,
            Access::TrainingImage,
            &[Membership::Labeled, Membership::Unlabeled],
        )?;
        Ok(&self.patches[index].image)
    }

    /// Supervision for a labeled patch; anything outside L is a violation.
    pub fn training_target(&self, index: usize) -> Result<&Patch, PoolError> {
        self.guard(index, Access::TrainingTarget, &[Membership::Labeled])?;
        Ok(&self.patches[index])
    }

    pub fn query_image(&self, index: usize) -> Result<&Grid3<f32>, PoolError> {
        self.guard(index, Access::QueryImage, &[Membership::Unlabeled])?;
        Ok(&self.patches[index].image)
    }

    pub fn evaluation_patch(&self, index: usize) -> Result<&Patch, PoolError> {
        self.guard(index, Access::Evaluation, &[Membership::Test])?;
        Ok(&self.patches[index])
    }

    pub fn access_log(&self) -> AccessLog {
        self.log.lock().expect("access log poisoned").clone()
    }

    /// Direct patch access that bypasses the guard; for inspection tools.
    pub fn patch_unguarded(&self, index: usize) -> &Patch {
        &self.patches[index]
    }
}
