//! Hand-written players used to produce demonstration archives for tests and
//! as a score reference. They make seeded mistakes on purpose.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archive::{DemoArchive, DemoEpisode};
use crate::env::pacman::{self, Dir, MiniPacman, GRID};
use crate::env::pong::MiniPong;
use crate::env::{Env, EnvId, EnvSpec};
use crate::error::Result;

/// Probability of a uniformly random action instead of the planned one.
pub const MISTAKE_RATE: f64 = 0.1;
const DANGER_RADIUS: usize = 2;

pub struct ScriptedPlayer {
    rng: ChaCha8Rng,
    mistake_rate: f64,
}

impl ScriptedPlayer {
    pub fn new(seed: u64) -> Self {
        Self::with_mistakes(seed, MISTAKE_RATE)
    }

    pub fn with_mistakes(seed: u64, mistake_rate: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            mistake_rate,
        }
    }

    pub fn act(&mut self, env: &Env) -> usize {
        let (planned, calm) = match env {
            Env::Pong(p) => (pong_action(p), true),
            Env::Pacman(p) => (pacman_action(p), ghost_distance(p) > DANGER_RADIUS),
        };
        if calm && self.rng.gen_bool(self.mistake_rate) {
            self.rng.gen_range(0..env.spec().num_actions())
        } else {
            planned
        }
    }
}

/// Moves to where the ball will cross the paddle line, aiming a little off
/// centre so the return comes back steep.
fn pong_action(p: &MiniPong) -> usize {
    let target = match (p.ball_center(), p.ball_velocity()) {
        (Some((bx, by)), (vx, vy)) if vx > 0.0 => {
            let (lo, hi) = (3.0, 85.0);
            let t = (80.0 - (bx + 1.0)).max(0.0) / vx;
            // unfold reflections off the walls
            let span = hi - lo;
            let mut y = (by + vy * t - lo).rem_euclid(2.0 * span);
            if y > span {
                y = 2.0 * span - y;
            }
            let y = y + lo;
            y + if y < 44.0 { -4.0 } else { 4.0 }
        }
        _ => 44.0,
    };
    let dy = target - p.agent_paddle_center();
    if dy < -2.0 {
        1
    } else if dy > 2.0 {
        2
    } else {
        0
    }
}

fn ghost_distance(p: &MiniPacman) -> usize {
    let (a, g) = (p.agent_cell(), p.ghost_cell());
    a.0.abs_diff(g.0) + a.1.abs_diff(g.1)
}

/// Heads for the nearest dot or bonus, treating cells next to the ghost as
/// blocked; flees when no such path exists.
fn pacman_action(p: &MiniPacman) -> usize {
    let start = p.agent_cell();
    let ghost = p.ghost_cell();
    let danger = |c: (usize, usize)| c.0.abs_diff(ghost.0) + c.1.abs_diff(ghost.1) <= DANGER_RADIUS;
    let goal = |c: (usize, usize)| p.has_dot(c) || p.bonus_cell() == Some(c);

    let mut first: [[Option<Dir>; GRID]; GRID] = [[None; GRID]; GRID];
    let mut seen = [[false; GRID]; GRID];
    seen[start.0][start.1] = true;
    let mut queue = VecDeque::new();
    for d in Dir::ALL {
        if let Some(n) = pacman::neighbour(start, d) {
            if !danger(n) {
                seen[n.0][n.1] = true;
                first[n.0][n.1] = Some(d);
                queue.push_back(n);
            }
        }
    }
    while let Some(c) = queue.pop_front() {
        if goal(c) {
            return first[c.0][c.1].unwrap().action();
        }
        for d in Dir::ALL {
            if let Some(n) = pacman::neighbour(c, d) {
                if !seen[n.0][n.1] && !danger(n) {
                    seen[n.0][n.1] = true;
                    first[n.0][n.1] = first[c.0][c.1];
                    queue.push_back(n);
                }
            }
        }
    }
    let dist = |c: (usize, usize)| c.0.abs_diff(ghost.0) + c.1.abs_diff(ghost.1);
    Dir::ALL
        .iter()
        .filter_map(|&d| pacman::neighbour(start, d).map(|n| (d, dist(n))))
        .max_by_key(|&(_, far)| far)
        .map(|(d, _)| d.action())
        .unwrap_or(0)
}

/// Plays one full episode from `env_seed`.
pub fn record_episode(spec: &EnvSpec, env_seed: u64, player: &mut ScriptedPlayer) -> Result<DemoEpisode> {
    let mut env = Env::new(spec);
    let mut frame = env.reset(env_seed);
    let mut ep = DemoEpisode {
        seed: env_seed,
        frames: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        terminal: false,
    };
    loop {
        let a = player.act(&env);
        let r = env.step(a)?;
        ep.frames.push(frame);
        ep.actions.push(a as u8);
        ep.rewards.push(r.reward as f32);
        frame = r.observation;
        if r.terminal {
            ep.terminal = !r.truncated;
            return Ok(ep);
        }
    }
}

/// `episodes` scripted episodes; episode `i` resets with seed `seed + i`.
pub fn scripted_archive(spec: &EnvSpec, episodes: usize, seed: u64) -> Result<DemoArchive> {
    let mut archive = DemoArchive::new(spec);
    let mut player = ScriptedPlayer::new(seed ^ 0x5eed);
    for i in 0..episodes {
        archive.push(record_episode(spec, seed + i as u64, &mut player)?)?;
    }
    Ok(archive)
}

/// The reference demonstration set: eight minipacman episodes.
pub fn reference_archive() -> Result<DemoArchive> {
    scripted_archive(&EnvSpec::new(EnvId::MiniPacman), REFERENCE_EPISODES, REFERENCE_SEED)
}

pub const REFERENCE_EPISODES: usize = 8;
pub const REFERENCE_SEED: u64 = 2018;
