//! Maze chase on a fixed 11×11 grid of 8-pixel cells. Dots are worth 10, the
//! bonus item 100; touching the ghost ends the episode. Clearing every dot
//! and the bonus restocks the maze.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Canvas, EnvSpec, Frame};

pub(super) const VERSION: u32 = 1;

pub const GRID: usize = 11;
pub const CELL: i32 = 8;
pub const DOT_REWARD: f64 = 10.0;
pub const BONUS_REWARD: f64 = 100.0;

const LAYOUT: [&str; GRID] = [
    "###########",
    "#.........#",
    "#.##.#.##.#",
    "#.#.....#.#",
    "#.#.###.#.#",
    "#.........#",
    "#.#.###.#.#",
    "#.#.....#.#",
    "#.##.#.##.#",
    "#.........#",
    "###########",
];
const AGENT_START: (usize, usize) = (5, 5);
const GHOST_START: (usize, usize) = (1, 5);
const BONUS_CELL: (usize, usize) = (9, 5);
const SPEED: i32 = 2;
const CHASE_PROB: f64 = 0.6;
const CONTACT: i32 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dir {
    Up,
    Down,
    Left,
    Right,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::Up, Dir::Down, Dir::Left, Dir::Right];

    pub fn from_action(a: usize) -> Dir {
        Dir::ALL[a]
    }

    pub fn action(self) -> usize {
        Dir::ALL.iter().position(|&d| d == self).unwrap()
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::Up => (0, -1),
            Dir::Down => (0, 1),
            Dir::Left => (-1, 0),
            Dir::Right => (1, 0),
        }
    }

    fn reverse(self) -> Dir {
        match self {
            Dir::Up => Dir::Down,
            Dir::Down => Dir::Up,
            Dir::Left => Dir::Right,
            Dir::Right => Dir::Left,
        }
    }
}

pub fn is_wall(row: usize, col: usize) -> bool {
    LAYOUT[row].as_bytes()[col] == b'#'
}

/// Neighbouring open cell in direction `d`.
pub fn neighbour((row, col): (usize, usize), d: Dir) -> Option<(usize, usize)> {
    let (dx, dy) = d.delta();
    let r = row as i32 + dy;
    let c = col as i32 + dx;
    if r < 0 || c < 0 || r >= GRID as i32 || c >= GRID as i32 || is_wall(r as usize, c as usize) {
        None
    } else {
        Some((r as usize, c as usize))
    }
}

#[derive(Clone, Debug)]
struct Mover {
    px: (i32, i32),
    dir: Option<Dir>,
}

impl Mover {
    fn at((row, col): (usize, usize)) -> Self {
        Self {
            px: (col as i32 * CELL, row as i32 * CELL),
            dir: None,
        }
    }

    fn aligned(&self) -> bool {
        self.px.0 % CELL == 0 && self.px.1 % CELL == 0
    }

    fn cell(&self) -> (usize, usize) {
        (
            ((self.px.1 + CELL / 2) / CELL) as usize,
            ((self.px.0 + CELL / 2) / CELL) as usize,
        )
    }

    fn advance(&mut self) {
        if let Some(d) = self.dir {
            let (dx, dy) = d.delta();
            self.px.0 += dx * SPEED;
            self.px.1 += dy * SPEED;
        }
    }
}

#[derive(Clone, Debug)]
pub struct MiniPacman {
    pub(super) spec: EnvSpec,
    pub(super) steps: usize,
    pub(super) terminal: bool,
    rng: ChaCha8Rng,
    agent: Mover,
    ghost: Mover,
    ticks: u64,
    dots: [[bool; GRID]; GRID],
    bonus: bool,
    score: f64,
    dots_eaten: u64,
    bonuses_eaten: u64,
}

impl MiniPacman {
    pub fn new(spec: EnvSpec) -> Self {
        let mut env = Self {
            spec,
            steps: 0,
            terminal: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            agent: Mover::at(AGENT_START),
            ghost: Mover::at(GHOST_START),
            ticks: 0,
            dots: [[false; GRID]; GRID],
            bonus: true,
            score: 0.0,
            dots_eaten: 0,
            bonuses_eaten: 0,
        };
        env.reset(0);
        env
    }

    pub(super) fn reset(&mut self, seed: u64) -> Frame {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.steps = 0;
        self.terminal = false;
        self.agent = Mover::at(AGENT_START);
        self.ghost = Mover::at(GHOST_START);
        self.ticks = 0;
        self.score = 0.0;
        self.dots_eaten = 0;
        self.bonuses_eaten = 0;
        self.restock(AGENT_START);
        self.render()
    }

    fn restock(&mut self, occupied: (usize, usize)) {
        for r in 0..GRID {
            for c in 0..GRID {
                self.dots[r][c] = !is_wall(r, c) && (r, c) != BONUS_CELL && (r, c) != occupied;
            }
        }
        self.bonus = occupied != BONUS_CELL;
    }

    pub(super) fn score(&self) -> f64 {
        self.score
    }

    pub fn agent_cell(&self) -> (usize, usize) {
        self.agent.cell()
    }

    pub fn ghost_cell(&self) -> (usize, usize) {
        self.ghost.cell()
    }

    pub fn has_dot(&self, cell: (usize, usize)) -> bool {
        self.dots[cell.0][cell.1]
    }

    pub fn bonus_cell(&self) -> Option<(usize, usize)> {
        self.bonus.then_some(BONUS_CELL)
    }

    pub fn dots_remaining(&self) -> usize {
        self.dots.iter().flatten().filter(|&&d| d).count()
    }

    pub fn dots_eaten(&self) -> u64 {
        self.dots_eaten
    }

    pub fn bonuses_eaten(&self) -> u64 {
        self.bonuses_eaten
    }

    pub(super) fn tick(&mut self, action: usize) -> (f64, bool) {
        self.ticks += 1;
        if self.agent.aligned() {
            let want = Dir::from_action(action);
            self.agent.dir = neighbour(self.agent.cell(), want).map(|_| want);
        }
        self.agent.advance();

        let mut reward = 0.0;
        if self.agent.aligned() {
            let cell = self.agent.cell();
            if self.dots[cell.0][cell.1] {
                self.dots[cell.0][cell.1] = false;
                self.dots_eaten += 1;
                reward = DOT_REWARD;
            } else if self.bonus && cell == BONUS_CELL {
                self.bonus = false;
                self.bonuses_eaten += 1;
                reward = BONUS_REWARD;
            }
            if !self.bonus && self.dots_remaining() == 0 {
                self.restock(cell);
            }
        }
        self.score += reward;

        // the ghost rests one tick in four
        if self.ticks % 4 != 0 {
            if self.ghost.aligned() {
                self.ghost.dir = Some(self.ghost_choice());
            }
            self.ghost.advance();
        }

        let (a, g) = (self.agent.px, self.ghost.px);
        let caught = (a.0 - g.0).abs() < CONTACT && (a.1 - g.1).abs() < CONTACT;
        (reward, caught)
    }

    fn ghost_choice(&mut self) -> Dir {
        let here = self.ghost.cell();
        let mut options: Vec<Dir> = Dir::ALL
            .iter()
            .copied()
            .filter(|&d| neighbour(here, d).is_some())
            .filter(|&d| Some(d.reverse()) != self.ghost.dir)
            .collect();
        if options.is_empty() {
            options = self.ghost.dir.map(|d| vec![d.reverse()]).unwrap_or_default();
        }
        let target = self.agent.cell();
        if self.rng.gen_bool(CHASE_PROB) {
            *options
                .iter()
                .min_by_key(|&&d| {
                    let (r, c) = neighbour(here, d).unwrap();
                    r.abs_diff(target.0) + c.abs_diff(target.1)
                })
                .unwrap()
        } else {
            options[self.rng.gen_range(0..options.len())]
        }
    }

    pub(super) fn render(&self) -> Frame {
        let mut c = Canvas::new();
        for r in 0..GRID {
            for col in 0..GRID {
                let (x, y) = (col as i32 * CELL, r as i32 * CELL);
                if is_wall(r, col) {
                    c.fill(x, y, CELL, CELL, 60);
                } else if self.dots[r][col] {
                    c.fill(x + 3, y + 3, 2, 2, 150);
                }
            }
        }
        if self.bonus {
            let (x, y) = (BONUS_CELL.1 as i32 * CELL, BONUS_CELL.0 as i32 * CELL);
            c.fill(x + 2, y + 2, 4, 4, 200);
        }
        c.fill(self.ghost.px.0 + 1, self.ghost.px.1 + 1, 6, 6, 110);
        c.fill(self.agent.px.0 + 1, self.agent.px.1 + 1, 6, 6, 255);
        c.into_frame()
    }
}
