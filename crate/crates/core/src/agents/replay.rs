use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::expansion::Segment;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
    /// Log-probability of `action` under the behavior policy.
    pub behavior_logp: f64,
    pub episode: u64,
    pub step: usize,
}

/// Ring buffer that remembers episode ids so windows of consecutive
/// transitions can be cut without crossing an episode boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PackedReplay", try_from = "PackedReplay")]
pub struct ReplayBuffer {
    capacity: usize,
    min_fill: usize,
    data: Vec<Transition>,
    /// Slot of the oldest transition once the ring is full.
    head: usize,
}

/// Column-packed form used for serialization, so transitions travel as
/// tensors.
#[derive(Serialize, Deserialize)]
struct PackedReplay {
    capacity: usize,
    min_fill: usize,
    head: usize,
    states: Tensor,
    actions: Tensor,
    next_states: Tensor,
    /// reward, behavior log-prob, terminal, truncated, episode, step
    scalars: Tensor,
}

impl From<ReplayBuffer> for PackedReplay {
    fn from(b: ReplayBuffer) -> Self {
        let rows = |f: &dyn Fn(&Transition) -> &[f64]| {
            let width = b.data.first().map_or(0, |t| f(t).len());
            let data = b.data.iter().flat_map(|t| f(t).iter().copied()).collect();
            Tensor::new(b.data.len(), width, data).expect("uniform widths")
        };
        let scalars = b
            .data
            .iter()
            .flat_map(|t| {
                [
                    t.reward,
                    t.behavior_logp,
                    t.terminal as u8 as f64,
                    t.truncated as u8 as f64,
                    t.episode as f64,
                    t.step as f64,
                ]
            })
            .collect();
        Self {
            capacity: b.capacity,
            min_fill: b.min_fill,
            head: b.head,
            states: rows(&|t| &t.state),
            actions: rows(&|t| &t.action),
            next_states: rows(&|t| &t.next_state),
            scalars: Tensor::new(b.data.len(), 6, scalars).expect("six scalars"),
        }
    }
}

impl TryFrom<PackedReplay> for ReplayBuffer {
    type Error = Error;
    fn try_from(p: PackedReplay) -> Result<Self> {
        let n = p.scalars.rows();
        if p.states.rows() != n || p.actions.rows() != n || p.next_states.rows() != n || n > p.capacity {
            return Err(Error::Data("inconsistent packed replay".into()));
        }
        let data = (0..n)
            .map(|i| {
                let s = p.scalars.row_slice(i);
                Transition {
                    state: p.states.row_slice(i).to_vec(),
                    action: p.actions.row_slice(i).to_vec(),
                    reward: s[0],
                    next_state: p.next_states.row_slice(i).to_vec(),
                    terminal: s[2] != 0.0,
                    truncated: s[3] != 0.0,
                    behavior_logp: s[1],
                    episode: s[4] as u64,
                    step: s[5] as usize,
                }
            })
            .collect();
        Ok(Self { capacity: p.capacity, min_fill: p.min_fill, data, head: p.head })
    }
}

/// Anchored minibatch. `segment` holds, for each anchor, the window of up
/// to `window` consecutive transitions starting at the anchor.
#[derive(Clone, Debug)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    pub terminal: Vec<bool>,
    pub behavior_logp: Vec<f64>,
    pub episodes: Vec<u64>,
    pub segment: Segment,
    /// Episode id of every transition in every window, `[anchor][t]`.
    pub window_episodes: Vec<Vec<u64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize, min_fill: usize) -> Self {
        Self { capacity: capacity.max(1), min_fill, data: Vec::new(), head: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn min_fill(&self) -> usize {
        self.min_fill
    }

    pub fn is_ready(&self) -> bool {
        self.data.len() >= self.min_fill.max(1)
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Transition by age order: `0` is the oldest stored.
    pub fn get(&self, i: usize) -> &Transition {
        &self.data[(self.head + i) % self.data.len()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.data.len()).map(move |i| self.get(i))
    }

    /// Indices (age order) of the window starting at `anchor`.
    pub fn window(&self, anchor: usize, window: usize) -> Vec<usize> {
        let mut idx = vec![anchor];
        while idx.len() < window {
            let last = *idx.last().unwrap();
            let t = self.get(last);
            if t.terminal || t.truncated || last + 1 >= self.data.len() {
                break;
            }
            let n = self.get(last + 1);
            if n.episode != t.episode || n.step != t.step + 1 {
                break;
            }
            idx.push(last + 1);
        }
        idx
    }

    /// Uniform anchors; each anchor carries its window of up to `window`
    /// same-episode transitions (shorter near episode or buffer ends).
    pub fn sample_batch(&self, size: usize, window: usize, rng: &mut impl Rng) -> Result<Batch> {
        if !self.is_ready() {
            return Err(Error::NotReady(format!(
                "replay holds {} of the {} transitions needed",
                self.data.len(),
                self.min_fill
            )));
        }
        let window = window.max(1);
        let anchors: Vec<usize> = (0..size).map(|_| rng.random_range(0..self.data.len())).collect();
        Ok(self.batch_from(&anchors, window))
    }

    pub fn batch_from(&self, anchors: &[usize], window: usize) -> Batch {
        let windows: Vec<Vec<usize>> = anchors.iter().map(|&a| self.window(a, window)).collect();
        let first: Vec<&Transition> = anchors.iter().map(|&a| self.get(a)).collect();
        let rows = |f: &dyn Fn(&Transition) -> &[f64]| {
            Tensor::from_rows(&first.iter().map(|t| f(t)).collect::<Vec<_>>()).unwrap()
        };
        let lmax = windows.iter().map(Vec::len).max().unwrap_or(1);
        let mut states = Vec::with_capacity(lmax + 1);
        let mut actions = Vec::with_capacity(lmax);
        let mut rewards = Vec::with_capacity(lmax);
        let mut blogp = Vec::with_capacity(lmax);
        for t in 0..=lmax {
            let mut s_rows = Vec::with_capacity(anchors.len());
            let mut a_rows = Vec::with_capacity(anchors.len());
            let mut r = Vec::with_capacity(anchors.len());
            let mut lp = Vec::with_capacity(anchors.len());
            for w in &windows {
                let len = w.len();
                if t < len {
                    let tr = self.get(w[t]);
                    s_rows.push(tr.state.as_slice());
                    a_rows.push(tr.action.as_slice());
                    r.push(tr.reward);
                    lp.push(tr.behavior_logp);
                } else {
                    let last = self.get(w[len - 1]);
                    s_rows.push(last.next_state.as_slice());
                    a_rows.push(last.action.as_slice());
                    r.push(0.0);
                    lp.push(0.0);
                }
            }
            states.push(Tensor::from_rows(&s_rows).unwrap());
            if t < lmax {
                actions.push(Tensor::from_rows(&a_rows).unwrap());
                rewards.push(r);
                blogp.push(lp);
            }
        }
        let segment = Segment {
            states,
            actions,
            rewards,
            behavior_logp: blogp,
            lengths: windows.iter().map(Vec::len).collect(),
            terminal: windows.iter().map(|w| self.get(*w.last().unwrap()).terminal).collect(),
        };
        Batch {
            states: rows(&|t| &t.state),
            actions: rows(&|t| &t.action),
            rewards: first.iter().map(|t| t.reward).collect(),
            next_states: rows(&|t| &t.next_state),
            terminal: first.iter().map(|t| t.terminal).collect(),
            behavior_logp: first.iter().map(|t| t.behavior_logp).collect(),
            episodes: first.iter().map(|t| t.episode).collect(),
            window_episodes: windows.iter().map(|w| w.iter().map(|&i| self.get(i).episode).collect()).collect(),
            segment,
        }
    }
}
