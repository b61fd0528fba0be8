//! Two-paddle pong. The agent owns the right paddle; a rate-limited tracker
//! plays the left one. Each point is worth ±1 and the first side to
//! [`POINTS_TO_WIN`] ends the episode.
//!
//! Positions are integers in 1/16 pixel units so trajectories are identical
//! on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Canvas, EnvSpec, Frame, FRAME_SIDE};

pub(super) const VERSION: u32 = 1;

const SUB: i32 = 16;
const TOP: i32 = 2 * SUB;
const BOTTOM: i32 = (FRAME_SIDE as i32 - 2) * SUB;
const PADDLE_H: i32 = 12 * SUB;
const PADDLE_W: i32 = 2 * SUB;
const BALL: i32 = 2 * SUB;
const AGENT_X: i32 = 80 * SUB;
const OPP_X: i32 = 6 * SUB;
const AGENT_SPEED: i32 = 2 * SUB;
const OPP_SPEED: i32 = 20;
const BALL_VX: i32 = 2 * SUB;
const MAX_VY: i32 = 40;
const SERVE_DELAY: u32 = 8;
pub const POINTS_TO_WIN: u32 = 5;

#[derive(Clone, Debug)]
pub struct MiniPong {
    pub(super) spec: EnvSpec,
    pub(super) steps: usize,
    pub(super) terminal: bool,
    rng: ChaCha8Rng,
    agent_y: i32,
    opp_y: i32,
    ball: (i32, i32),
    vel: (i32, i32),
    serve_timer: u32,
    agent_points: u32,
    opp_points: u32,
}

impl MiniPong {
    pub fn new(spec: EnvSpec) -> Self {
        let mut env = Self {
            spec,
            steps: 0,
            terminal: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            agent_y: 0,
            opp_y: 0,
            ball: (0, 0),
            vel: (0, 0),
            serve_timer: 0,
            agent_points: 0,
            opp_points: 0,
        };
        env.reset(0);
        env
    }

    pub(super) fn reset(&mut self, seed: u64) -> Frame {
        let mid = (TOP + BOTTOM) / 2 - PADDLE_H / 2;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.steps = 0;
        self.terminal = false;
        self.agent_y = mid;
        self.opp_y = mid;
        self.agent_points = 0;
        self.opp_points = 0;
        self.serve_timer = SERVE_DELAY;
        self.ball = self.center();
        self.vel = (0, 0);
        self.render()
    }

    fn center(&self) -> (i32, i32) {
        ((FRAME_SIDE as i32 * SUB - BALL) / 2, (TOP + BOTTOM - BALL) / 2)
    }

    pub(super) fn score(&self) -> f64 {
        self.agent_points as f64 - self.opp_points as f64
    }

    /// Ball centre in pixels, `None` while waiting to serve.
    pub fn ball_center(&self) -> Option<(f64, f64)> {
        (self.serve_timer == 0).then(|| {
            (
                (self.ball.0 + BALL / 2) as f64 / SUB as f64,
                (self.ball.1 + BALL / 2) as f64 / SUB as f64,
            )
        })
    }

    pub fn ball_velocity(&self) -> (f64, f64) {
        (self.vel.0 as f64 / SUB as f64, self.vel.1 as f64 / SUB as f64)
    }

    pub fn agent_paddle_center(&self) -> f64 {
        (self.agent_y + PADDLE_H / 2) as f64 / SUB as f64
    }

    /// One game frame. Returns (reward, terminal).
    pub(super) fn tick(&mut self, action: usize) -> (f64, bool) {
        match action {
            1 => self.agent_y -= AGENT_SPEED,
            2 => self.agent_y += AGENT_SPEED,
            _ => {}
        }
        self.agent_y = self.agent_y.clamp(TOP, BOTTOM - PADDLE_H);

        let target = if self.serve_timer == 0 && self.vel.0 < 0 {
            self.ball.1 + BALL / 2 - PADDLE_H / 2
        } else {
            (TOP + BOTTOM) / 2 - PADDLE_H / 2
        };
        self.opp_y += (target - self.opp_y).clamp(-OPP_SPEED, OPP_SPEED);
        self.opp_y = self.opp_y.clamp(TOP, BOTTOM - PADDLE_H);

        if self.serve_timer > 0 {
            self.serve_timer -= 1;
            if self.serve_timer == 0 {
                self.ball = self.center();
                let dir = if self.rng.gen_bool(0.5) { 1 } else { -1 };
                let vy = self.rng.gen_range(-3..=3) * 8;
                self.vel = (dir * BALL_VX, vy);
            }
            return (0.0, false);
        }

        self.ball.0 += self.vel.0;
        self.ball.1 += self.vel.1;
        if self.ball.1 < TOP {
            self.ball.1 = 2 * TOP - self.ball.1;
            self.vel.1 = -self.vel.1;
        }
        if self.ball.1 + BALL > BOTTOM {
            self.ball.1 = 2 * (BOTTOM - BALL) - self.ball.1;
            self.vel.1 = -self.vel.1;
        }

        if self.vel.0 > 0
            && self.ball.0 + BALL >= AGENT_X
            && self.ball.0 < AGENT_X + PADDLE_W
            && self.overlaps(self.agent_y)
        {
            self.ball.0 = AGENT_X - BALL;
            self.vel = (-BALL_VX, self.deflect(self.agent_y));
        } else if self.vel.0 < 0
            && self.ball.0 <= OPP_X + PADDLE_W
            && self.ball.0 + BALL > OPP_X
            && self.overlaps(self.opp_y)
        {
            self.ball.0 = OPP_X + PADDLE_W;
            self.vel = (BALL_VX, self.deflect(self.opp_y));
        }

        let reward = if self.ball.0 + BALL < 0 {
            self.agent_points += 1;
            1.0
        } else if self.ball.0 > FRAME_SIDE as i32 * SUB {
            self.opp_points += 1;
            -1.0
        } else {
            return (0.0, false);
        };
        self.serve_timer = SERVE_DELAY;
        self.vel = (0, 0);
        let done = self.agent_points >= POINTS_TO_WIN || self.opp_points >= POINTS_TO_WIN;
        (reward, done)
    }

    fn overlaps(&self, paddle_y: i32) -> bool {
        self.ball.1 + BALL > paddle_y && self.ball.1 < paddle_y + PADDLE_H
    }

    /// Vertical speed after a hit, steeper towards the paddle ends.
    fn deflect(&self, paddle_y: i32) -> i32 {
        let offset = (self.ball.1 + BALL / 2) - (paddle_y + PADDLE_H / 2);
        (offset * MAX_VY / (PADDLE_H / 2)).clamp(-MAX_VY, MAX_VY)
    }

    pub(super) fn render(&self) -> Frame {
        let mut c = Canvas::new();
        let side = FRAME_SIDE as i32;
        c.fill(0, 0, side, TOP / SUB, 100);
        c.fill(0, BOTTOM / SUB, side, side - BOTTOM / SUB, 100);
        c.fill(OPP_X / SUB, self.opp_y / SUB, PADDLE_W / SUB, PADDLE_H / SUB, 180);
        c.fill(AGENT_X / SUB, self.agent_y / SUB, PADDLE_W / SUB, PADDLE_H / SUB, 255);
        if self.serve_timer == 0 {
            c.fill(self.ball.0 / SUB, self.ball.1 / SUB, BALL / SUB, BALL / SUB, 255);
        }
        c.into_frame()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Env, EnvId, EnvSpec};

    #[test]
    fn noop_in_empty_region_gives_zero() {
        let mut env = Env::new(&EnvSpec::new(EnvId::MiniPong));
        env.reset(3);
        let r = env.step(0).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(!r.terminal);
    }

    #[test]
    fn rewards_are_unit_and_score_consistent() {
        let mut env = Env::new(&EnvSpec::new(EnvId::MiniPong));
        env.reset(11);
        let mut total = 0.0;
        let mut i = 0usize;
        loop {
            let r = env.step(i % 3).unwrap();
            assert!([-1.0, 0.0, 1.0].contains(&r.reward));
            total += r.reward;
            assert_eq!(total, r.score);
            i = i.wrapping_mul(31).wrapping_add(7);
            if r.terminal {
                break;
            }
        }
        assert!(env.steps() <= 1000);
    }
}
