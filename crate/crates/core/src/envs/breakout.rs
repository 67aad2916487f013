//! Ten by ten brick-breaking game on a discrete grid.
//!
//! Rules, applied once per step:
//! 1. The paddle (bottom row) moves one cell left, stays, or moves right.
//! 2. The ball proposes `(row + dr, col + dc)`. Leaving through a side wall
//!    flips `dc`; leaving through the top flips `dr`; the proposal is then
//!    recomputed from the current cell.
//! 3. A brick at the proposal is removed for reward 1, `dr` flips and the
//!    ball moves sideways only (keeps its row).
//! 4. A proposal on the paddle row bounces (`dr = -1`, row kept) when the
//!    paddle is in that column; otherwise the ball is lost and the episode
//!    terminates.
//! 5. Clearing every brick also terminates.
//! 6. Terminal states are absorbing: stepping one returns it unchanged with
//!    zero reward, so model rollouts may run past the end of an episode.
//!
//! The observation is four 100-cell channels (paddle, ball, bricks, trail)
//! followed by `(dr, dc)`, and encodes the full game state.

use rand::Rng;

use crate::error::{Error, Result};

pub const SIZE: usize = 10;
pub const CELLS: usize = SIZE * SIZE;
pub const OBS_DIM: usize = 4 * CELLS + 2;
pub const NUM_ACTIONS: usize = 3;
const PADDLE_ROW: i32 = SIZE as i32 - 1;
const BRICK_ROWS: std::ops::RangeInclusive<usize> = 1..=3;
const BALL_START_ROW: i32 = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BreakoutState {
    pub paddle: i32,
    pub ball: (i32, i32),
    pub vel: (i32, i32),
    pub trail: (i32, i32),
    pub bricks: [bool; CELLS],
}

impl BreakoutState {
    pub fn brick_count(&self) -> usize {
        self.bricks.iter().filter(|b| **b).count()
    }

    fn brick(&self, r: i32, c: i32) -> bool {
        self.bricks[(r as usize) * SIZE + c as usize]
    }

    pub fn encode(&self) -> Vec<f64> {
        let mut obs = vec![0.0; OBS_DIM];
        let cell = |r: i32, c: i32| r as usize * SIZE + c as usize;
        obs[cell(PADDLE_ROW, self.paddle)] = 1.0;
        obs[CELLS + cell(self.ball.0, self.ball.1)] = 1.0;
        for (i, &b) in self.bricks.iter().enumerate() {
            if b {
                obs[2 * CELLS + i] = 1.0;
            }
        }
        obs[3 * CELLS + cell(self.trail.0, self.trail.1)] = 1.0;
        obs[4 * CELLS] = self.vel.0 as f64;
        obs[4 * CELLS + 1] = self.vel.1 as f64;
        obs
    }

    pub fn decode(obs: &[f64]) -> Result<Self> {
        if obs.len() != OBS_DIM {
            return Err(Error::Shape(format!("breakout observation needs {OBS_DIM} values, got {}", obs.len())));
        }
        let find = |ch: usize| -> Result<(i32, i32)> {
            let hot: Vec<usize> = (0..CELLS).filter(|&i| obs[ch * CELLS + i] > 0.5).collect();
            match hot[..] {
                [i] => Ok(((i / SIZE) as i32, (i % SIZE) as i32)),
                _ => Err(Error::Data(format!("channel {ch} must have exactly one cell set"))),
            }
        };
        let (pr, paddle) = find(0)?;
        if pr != PADDLE_ROW {
            return Err(Error::Data("paddle must be on the bottom row".into()));
        }
        let ball = find(1)?;
        let trail = find(3)?;
        let mut bricks = [false; CELLS];
        for (i, b) in bricks.iter_mut().enumerate() {
            *b = obs[2 * CELLS + i] > 0.5;
        }
        let unit = |v: f64| -> Result<i32> {
            if v == 1.0 || v == -1.0 {
                Ok(v as i32)
            } else {
                Err(Error::Data(format!("ball velocity component {v} not in {{-1, 1}}")))
            }
        };
        let vel = (unit(obs[4 * CELLS])?, unit(obs[4 * CELLS + 1])?);
        Ok(Self { paddle, ball, vel, trail, bricks })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MiniBreakout;

impl MiniBreakout {
    pub fn reset_state(&self, rng: &mut impl Rng) -> BreakoutState {
        let mut bricks = [false; CELLS];
        for r in BRICK_ROWS {
            bricks[r * SIZE..(r + 1) * SIZE].fill(true);
        }
        let col = rng.random_range(0..SIZE as i32);
        let dc = if rng.random_bool(0.5) { 1 } else { -1 };
        let ball = (BALL_START_ROW, col);
        BreakoutState { paddle: SIZE as i32 / 2 - 1, ball, vel: (1, dc), trail: ball, bricks }
    }

    pub fn reset(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.reset_state(rng).encode()
    }

    /// Returns the next state, the reward and the terminal flag.
    pub fn advance(&self, s: &BreakoutState, action: usize) -> (BreakoutState, f64, bool) {
        if s.ball.0 == PADDLE_ROW || s.brick_count() == 0 {
            return (s.clone(), 0.0, true);
        }
        let mut n = s.clone();
        n.paddle = match action {
            0 => (s.paddle - 1).max(0),
            2 => (s.paddle + 1).min(SIZE as i32 - 1),
            _ => s.paddle,
        };
        n.trail = s.ball;
        let (r, c) = s.ball;
        let (mut dr, mut dc) = s.vel;
        let mut nc = c + dc;
        if !(0..SIZE as i32).contains(&nc) {
            dc = -dc;
            nc = c + dc;
        }
        let mut nr = r + dr;
        if nr < 0 {
            dr = -dr;
            nr = r + dr;
        }
        let mut reward = 0.0;
        let mut terminal = false;
        if nr < PADDLE_ROW && n.brick(nr, nc) {
            n.bricks[nr as usize * SIZE + nc as usize] = false;
            reward = 1.0;
            dr = -dr;
            nr = r;
        } else if nr == PADDLE_ROW {
            if n.paddle == nc {
                dr = -1;
                nr = r;
            } else {
                terminal = true;
            }
        }
        n.ball = (nr, nc);
        n.vel = (dr, dc);
        if n.brick_count() == 0 {
            terminal = true;
        }
        (n, reward, terminal)
    }
}
