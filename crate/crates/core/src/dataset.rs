//! Offline datasets of recorded trajectories.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{EnvState, StateVec};
use crate::error::{Error, Result};

/// Quality tier of the data-collecting controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Medium,
    Expert,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Medium => "medium",
            Tier::Expert => "expert",
        })
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "medium" => Ok(Tier::Medium),
            "expert" => Ok(Tier::Expert),
            other => Err(Error::Config(format!("unknown tier {other:?}"))),
        }
    }
}

/// One recorded environment step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Trajectory id.
    pub k: usize,
    /// Step index within the trajectory.
    pub j: usize,
    pub s: StateVec,
    pub a: [f64; 2],
    pub sp: StateVec,
    pub r: f64,
    pub done: bool,
}

impl Transition {
    pub fn state(&self) -> EnvState {
        EnvState::from_vec(&self.s, self.j)
    }

    pub fn next_state(&self) -> EnvState {
        EnvState::from_vec(&self.sp, self.j + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub tier: Tier,
    /// Number of trajectories.
    #[serde(rename = "K")]
    pub k: usize,
    pub maze: String,
    pub seed: u64,
    /// Mean return recorded in the dataset itself.
    pub mean_return: f64,
    /// Mean return of a uniform-random policy.
    pub random_mean_return: f64,
    /// Mean return of the expert-tier reference controller.
    pub expert_mean_return: f64,
}

/// Transitions grouped into trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    transitions: Vec<Transition>,
    episodes: Vec<Range<usize>>,
}

impl Dataset {
    /// Groups transitions by trajectory and checks that every trajectory is
    /// numbered `0..` and chains exactly (`sp` of step `j` equals `s` of `j + 1`).
    pub fn new(meta: DatasetMeta, transitions: Vec<Transition>) -> Result<Self> {
        let mut episodes: Vec<Range<usize>> = Vec::new();
        for (i, t) in transitions.iter().enumerate() {
            match episodes.last_mut() {
                Some(ep) if transitions[ep.start].k == t.k => {
                    let prev = &transitions[i - 1];
                    if t.j != prev.j + 1 || t.s != prev.sp || prev.done {
                        return Err(Error::Config(format!(
                            "trajectory {} breaks the chain at step {}",
                            t.k, t.j
                        )));
                    }
                    ep.end = i + 1;
                }
                _ => {
                    if t.j != 0 || t.k != episodes.len() {
                        return Err(Error::Config(format!(
                            "trajectory {} must start at step 0 and follow trajectory {}",
                            t.k,
                            episodes.len().wrapping_sub(1)
                        )));
                    }
                    episodes.push(i..i + 1);
                }
            }
        }
        if episodes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if meta.k != episodes.len() {
            return Err(Error::Config(format!(
                "meta declares {} trajectories, found {}",
                meta.k,
                episodes.len()
            )));
        }
        Ok(Self {
            meta,
            transitions,
            episodes,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn num_trajectories(&self) -> usize {
        self.episodes.len()
    }

    pub fn trajectory(&self, k: usize) -> &[Transition] {
        &self.transitions[self.episodes[k].clone()]
    }

    /// Index range of trajectory `k` within [`Dataset::transitions`].
    pub fn trajectory_range(&self, k: usize) -> Range<usize> {
        self.episodes[k].clone()
    }

    /// State `s_t` of trajectory `k` for `0 <= t <= len`.
    pub fn state(&self, k: usize, t: usize) -> StateVec {
        let traj = self.trajectory(k);
        if t < traj.len() {
            traj[t].s
        } else {
            assert_eq!(t, traj.len(), "state index past trajectory end");
            traj[t - 1].sp
        }
    }

    /// Undiscounted return of every trajectory.
    pub fn returns(&self) -> Vec<f64> {
        (0..self.num_trajectories())
            .map(|k| self.trajectory(k).iter().map(|t| t.r).sum())
            .collect()
    }

    /// All `(s_t, s_{t+n})` pairs lying inside one trajectory.
    pub fn state_pairs(&self, n: usize) -> Vec<(StateVec, StateVec)> {
        let mut out = Vec::new();
        for k in 0..self.num_trajectories() {
            let len = self.trajectory(k).len();
            for t in 0..len + 1 {
                if t + n > len {
                    break;
                }
                out.push((self.state(k, t), self.state(k, t + n)));
            }
        }
        out
    }
}
