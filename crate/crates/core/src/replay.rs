//! Replay buffer that stores decomposed rewards and relabels them with the
//! current effort weight whenever a batch is drawn.
//!
//! Transitions deliberately carry no scalar reward: the only way to obtain
//! one is [`ReplayBuffer::sample`], which goes through
//! [`total_reward`](crate::reward::total_reward).

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{total_reward, RewardBreakdown};

pub const DEFAULT_CAPACITY: usize = 1_000_000;

const CHECKPOINT_MAGIC: &[u8; 4] = b"NWRB";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f32>,
    /// Clipped excitations.
    pub action: Vec<f32>,
    pub next_obs: Vec<f32>,
    pub breakdown: RewardBreakdown,
    /// True when the episode ended by falling (not by the time limit).
    pub done: bool,
    pub episode: u64,
}

impl Transition {
    pub fn validate(&self, clip: f32) -> Result<()> {
        if !self.breakdown.is_finite() {
            return Err(Error::NonFinite("transition reward breakdown".into()));
        }
        if self.action.iter().any(|&u| !(0.0..=clip).contains(&u)) {
            return Err(Error::InvalidArgument(format!(
                "transition action outside [0, {clip}]"
            )));
        }
        if self.obs.len() != self.next_obs.len() {
            return Err(Error::DimensionMismatch {
                what: "next observation",
                expected: self.obs.len(),
                got: self.next_obs.len(),
            });
        }
        if self.obs.iter().chain(&self.next_obs).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("transition observation".into()));
        }
        Ok(())
    }
}

/// FIFO ring buffer of transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// Uniform sampling with replacement; each reward is recomposed at `alpha`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Vec<(&Transition, f64)>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = self.items.len();
        Ok((0..batch)
            .map(|_| {
                let t = &self.items[rng.gen_range(0..n)];
                (t, total_reward(&t.breakdown, alpha))
            })
            .collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("replay checkpoint", e);
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        bincode::serialize_into(&mut w, self)
            .map_err(|e| Error::CorruptSnapshot(format!("replay encode: {e}")))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head)
            .map_err(|e| Error::CorruptSnapshot(format!("replay header: {e}")))?;
        if &head[..4] != CHECKPOINT_MAGIC {
            return Err(Error::CorruptSnapshot("replay checkpoint: bad magic".into()));
        }
        let version = u32::from_le_bytes(head[4..].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::CorruptSnapshot(format!("replay checkpoint version {version}")));
        }
        let buf: ReplayBuffer = bincode::deserialize_from(r)
            .map_err(|e| Error::CorruptSnapshot(format!("replay decode: {e}")))?;
        if buf.capacity == 0 || buf.items.len() > buf.capacity {
            return Err(Error::CorruptSnapshot("replay checkpoint size exceeds capacity".into()));
        }
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(id: u64, activity: f64) -> Transition {
        Transition {
            obs: vec![id as f32, 0.5],
            action: vec![0.1, 0.5],
            next_obs: vec![id as f32 + 1.0, 0.5],
            breakdown: RewardBreakdown {
                r_vel: 0.9,
                effort_activity: activity,
                effort_smooth: 0.01,
                effort_nactive: 0.2,
                pain_limits: 0.03,
                pain_grf: 0.0,
            },
            done: false,
            episode: id,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3).unwrap();
        assert!(b.is_empty());
        b.push(tr(0, 0.1));
        assert_eq!(b.len(), 1);
        for i in 1..4 {
            b.push(tr(i, 0.1));
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0).unwrap().episode, 1);
        assert_eq!(b.get(2).unwrap(), &tr(3, 0.1));
    }

    #[test]
    fn empty_sample_errors() {
        let b = ReplayBuffer::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(8, 0.0, &mut rng), Err(Error::EmptyBuffer)));
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn relabel_difference_is_linear() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(tr(0, 0.04));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r0 = b.sample(1, 0.0, &mut rng).unwrap()[0].1;
        let r1 = b.sample(1, 0.5, &mut rng).unwrap()[0].1;
        assert!((r0 - r1 - 0.5 * 0.04).abs() < 1e-15);
        assert_eq!(b.sample(256, 0.1, &mut rng).unwrap().len(), 256);
    }

    #[test]
    fn sampling_is_seeded() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..100 {
            b.push(tr(i, 0.01));
        }
        let ids = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            b.sample(50, 0.0, &mut rng)
                .unwrap()
                .iter()
                .map(|(t, _)| t.episode)
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(7), ids(7));
        assert_ne!(ids(7), ids(8));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut b = ReplayBuffer::new(5).unwrap();
        for i in 0..7 {
            b.push(tr(i, 0.02 * i as f64));
        }
        let mut blob = Vec::new();
        b.write_to(&mut blob).unwrap();
        assert_eq!(ReplayBuffer::read_from(&blob[..]).unwrap(), b);
        blob[0] = b'X';
        assert!(ReplayBuffer::read_from(&blob[..]).is_err());
        assert!(ReplayBuffer::read_from(&blob[..6]).is_err());
    }

    #[test]
    fn validation() {
        let t = tr(0, 0.1);
        assert!(t.validate(0.5).is_ok());
        assert!(t.validate(0.4).is_err());
        let mut bad = tr(0, f64::NAN);
        assert!(bad.validate(1.0).is_err());
        bad = tr(0, 0.1);
        bad.next_obs.pop();
        assert!(bad.validate(1.0).is_err());
    }
}
