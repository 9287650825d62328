//! Four-rooms key-then-car navigation with pixel observations.
//!
//! The playable area is a 7x7 grid split by a wall cross at row 3 and
//! column 3, with one passage per wall arm. Each cell renders as a 4x4 pixel
//! block; a 2-pixel wall border pads the 28x28 image out to 32x32. The fourth
//! channel is a constant plane holding the key flag.

use std::collections::VecDeque;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRID: usize = 7;
pub const CELLS: usize = GRID * GRID;
pub const WALL_INDEX: usize = 3;
pub const CELL_PX: usize = 4;
pub const BORDER_PX: usize = 2;
pub const OBS_SIDE: usize = GRID * CELL_PX + 2 * BORDER_PX;
pub const OBS_CHANNELS: usize = 4;
pub const OBS_LEN: usize = OBS_CHANNELS * OBS_SIDE * OBS_SIDE;
pub const EPISODE_CAP: u32 = 100;
pub const N_ACTIONS: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("cell {0:?} is a wall")]
    Wall(Cell),
    #[error("no path from {from:?} to {to:?}")]
    Unreachable { from: Cell, to: Cell },
    #[error("step called on a finished episode (t = {t})")]
    EpisodeFinished { t: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: u8,
    pub col: u8,
}

impl Cell {
    pub const fn new(row: u8, col: u8) -> Self {
        Cell { row, col }
    }

    pub fn index(self) -> usize {
        self.row as usize * GRID + self.col as usize
    }

    pub fn from_index(i: usize) -> Self {
        Cell::new((i / GRID) as u8, (i % GRID) as u8)
    }

    /// The neighbouring cell in direction `a`, if it lies on the grid.
    pub fn offset(self, a: Action) -> Option<Cell> {
        let (r, c) = (self.row as i32, self.col as i32);
        let (r, c) = match a {
            Action::Up => (r - 1, c),
            Action::Down => (r + 1, c),
            Action::Left => (r, c - 1),
            Action::Right => (r, c + 1),
        };
        let g = GRID as i32;
        (0..g).contains(&r).then_some(())?;
        (0..g).contains(&c).then_some(())?;
        Some(Cell::new(r as u8, c as u8))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    /// Also the expert's tie-breaking order.
    pub const ALL: [Action; N_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> [f32; N_ACTIONS] {
        let mut v = [0.0; N_ACTIONS];
        v[self.index()] = 1.0;
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Room {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

#[derive(Debug, Clone)]
pub struct GridLayout {
    walls: [bool; CELLS],
    passages: [Cell; 4],
}

impl GridLayout {
    pub fn four_rooms() -> Self {
        let passages = [Cell::new(3, 1), Cell::new(1, 3), Cell::new(3, 5), Cell::new(5, 3)];
        let mut walls = [false; CELLS];
        for i in 0..GRID {
            walls[Cell::new(WALL_INDEX as u8, i as u8).index()] = true;
            walls[Cell::new(i as u8, WALL_INDEX as u8).index()] = true;
        }
        for p in passages {
            walls[p.index()] = false;
        }
        GridLayout { walls, passages }
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.walls[c.index()]
    }

    pub fn passages(&self) -> &[Cell; 4] {
        &self.passages
    }

    pub fn open_cells(&self) -> Vec<Cell> {
        (0..CELLS).map(Cell::from_index).filter(|&c| !self.is_wall(c)).collect()
    }

    pub fn room_of(&self, c: Cell) -> Option<Room> {
        if self.is_wall(c) || c.row as usize == WALL_INDEX || c.col as usize == WALL_INDEX {
            return None;
        }
        let top = (c.row as usize) < WALL_INDEX;
        let left = (c.col as usize) < WALL_INDEX;
        Some(match (top, left) {
            (true, true) => Room::TopLeft,
            (true, false) => Room::TopRight,
            (false, true) => Room::BottomLeft,
            (false, false) => Room::BottomRight,
        })
    }

    pub fn room_cells(&self, room: Room) -> Vec<Cell> {
        (0..CELLS).map(Cell::from_index).filter(|&c| self.room_of(c) == Some(room)).collect()
    }

    /// Cell reached by taking `a` from `c`; blocked moves stay put.
    pub fn move_from(&self, c: Cell, a: Action) -> Cell {
        match c.offset(a) {
            Some(n) if !self.is_wall(n) => n,
            _ => c,
        }
    }

    /// BFS step counts from `to` to every cell (`None` for walls and
    /// unreachable cells).
    pub fn distances_to(&self, to: Cell) -> [Option<u32>; CELLS] {
        let mut dist = [None; CELLS];
        if self.is_wall(to) {
            return dist;
        }
        dist[to.index()] = Some(0);
        let mut queue = VecDeque::from([to]);
        while let Some(c) = queue.pop_front() {
            let d = dist[c.index()].unwrap();
            for a in Action::ALL {
                if let Some(n) = c.offset(a) {
                    if !self.is_wall(n) && dist[n.index()].is_none() {
                        dist[n.index()] = Some(d + 1);
                        queue.push_back(n);
                    }
                }
            }
        }
        dist
    }
}

impl Default for GridLayout {
    fn default() -> Self {
        Self::four_rooms()
    }
}

struct Tables {
    layout: GridLayout,
    open: Vec<Cell>,
    key_room: Vec<Cell>,
    car_room: Vec<Cell>,
    // dist[to][from]
    dist: Vec<[Option<u32>; CELLS]>,
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let layout = GridLayout::four_rooms();
        let dist = (0..CELLS).map(|i| layout.distances_to(Cell::from_index(i))).collect();
        Tables {
            open: layout.open_cells(),
            key_room: layout.room_cells(Room::TopLeft),
            car_room: layout.room_cells(Room::BottomRight),
            layout,
            dist,
        }
    })
}

/// The fixed four-rooms layout.
pub fn layout() -> &'static GridLayout {
    &tables().layout
}

pub fn open_cells() -> &'static [Cell] {
    &tables().open
}

pub fn key_room() -> &'static [Cell] {
    &tables().key_room
}

pub fn car_room() -> &'static [Cell] {
    &tables().car_room
}

/// BFS geodesic distance under 4-neighbour moves.
pub fn shortest_distance(from: Cell, to: Cell, layout: &GridLayout) -> Result<u32, EnvError> {
    for c in [from, to] {
        if layout.is_wall(c) {
            return Err(EnvError::Wall(c));
        }
    }
    let d = if std::ptr::eq(layout, self::layout()) {
        tables().dist[to.index()][from.index()]
    } else {
        layout.distances_to(to)[from.index()]
    };
    d.ok_or(EnvError::Unreachable { from, to })
}

/// Cached distance on the standard layout; both cells must be open.
pub(crate) fn distance(from: Cell, to: Cell) -> u32 {
    tables().dist[to.index()][from.index()].expect("open cells are connected")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub agent: Cell,
    pub key: Cell,
    pub car: Cell,
    pub has_key: bool,
    pub t: u32,
    /// Spawn-to-key distance, fixed at reset.
    pub d1: u32,
    /// Key-to-car distance, fixed at reset.
    pub d2: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

/// Fresh episode. An agent spawned on the key starts holding it.
pub fn reset(seed: u64) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reset_with(&mut rng)
}

pub fn reset_with(rng: &mut impl Rng) -> EnvState {
    let t = tables();
    let agent = t.open[rng.random_range(0..t.open.len())];
    let key = t.key_room[rng.random_range(0..t.key_room.len())];
    let car = t.car_room[rng.random_range(0..t.car_room.len())];
    EnvState::new(agent, key, car)
}

impl EnvState {
    /// Episode start with the given placements; distances are derived.
    pub fn new(agent: Cell, key: Cell, car: Cell) -> Self {
        EnvState { agent, key, car, has_key: agent == key, t: 0, d1: distance(agent, key), d2: distance(key, car) }
    }

    pub fn is_success(&self) -> bool {
        self.has_key && self.agent == self.car
    }

    pub fn is_done(&self) -> bool {
        self.is_success() || self.t >= EPISODE_CAP
    }

    /// Cell the expert heads for next: the key, then the car.
    pub fn subgoal(&self) -> Cell {
        if self.has_key {
            self.car
        } else {
            self.key
        }
    }

    /// Everything the rendered pixels depend on.
    pub fn view(&self) -> View {
        View { agent: self.agent, key: (!self.has_key).then_some(self.key), car: self.car }
    }
}

pub fn step(state: &EnvState, action: Action) -> Result<Transition, EnvError> {
    if state.is_done() {
        return Err(EnvError::EpisodeFinished { t: state.t });
    }
    let mut next = *state;
    next.agent = layout().move_from(state.agent, action);
    next.t += 1;
    let mut reward = -1.0;
    if !next.has_key && next.agent == next.key {
        next.has_key = true;
        reward += next.d1 as f64;
    }
    if next.is_success() {
        reward += next.d2 as f64 + 1.0;
    }
    Ok(Transition { state: next, reward, done: next.is_done() })
}

/// The render-relevant part of a state. `key` is `None` once collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct View {
    pub agent: Cell,
    pub key: Option<Cell>,
    pub car: Cell,
}

impl View {
    pub fn has_key(&self) -> bool {
        self.key.is_none()
    }
}

/// 4 x 32 x 32 channel-major pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    data: Vec<f32>,
}

const WALL_RGB: [f32; 3] = [0.5, 0.5, 0.5];
const AGENT_RGB: [f32; 3] = [0.0, 0.0, 1.0];
const KEY_RGB: [f32; 3] = [1.0, 1.0, 0.0];
const CAR_RGB: [f32; 3] = [1.0, 0.0, 0.0];
const AGENT_ON_CAR_RGB: [f32; 3] = [1.0, 0.0, 1.0];

impl Observation {
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.data[(channel * OBS_SIDE + y) * OBS_SIDE + x]
    }

    /// Comma-separated dump of all 4096 values in storage order.
    pub fn to_csv(&self) -> String {
        let mut s = self.data.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        s.push('\n');
        s
    }
}

pub fn render(state: &EnvState) -> Observation {
    let mut data = vec![0.0; OBS_LEN];
    render_view_into(&state.view(), &mut data);
    Observation { data }
}

/// Writes the observation for `view` into a 4096-value buffer.
pub fn render_view_into(view: &View, out: &mut [f32]) {
    assert_eq!(out.len(), OBS_LEN);
    let plane = OBS_SIDE * OBS_SIDE;
    let layout = layout();
    let mut paint = |y0: usize, x0: usize, h: usize, w: usize, rgb: [f32; 3]| {
        for (ch, &v) in rgb.iter().enumerate() {
            for y in y0..y0 + h {
                let row = ch * plane + y * OBS_SIDE;
                out[row + x0..row + x0 + w].fill(v);
            }
        }
    };
    paint(0, 0, OBS_SIDE, OBS_SIDE, WALL_RGB);
    for i in 0..CELLS {
        let c = Cell::from_index(i);
        let rgb = if layout.is_wall(c) {
            WALL_RGB
        } else if c == view.agent && c == view.car {
            AGENT_ON_CAR_RGB
        } else if c == view.agent {
            AGENT_RGB
        } else if Some(c) == view.key {
            KEY_RGB
        } else if c == view.car {
            CAR_RGB
        } else {
            [0.0; 3]
        };
        let y = BORDER_PX + c.row as usize * CELL_PX;
        let x = BORDER_PX + c.col as usize * CELL_PX;
        paint(y, x, CELL_PX, CELL_PX, rgb);
    }
    let flag = if view.has_key() { 1.0 } else { 0.0 };
    out[3 * plane..].fill(flag);
}

/// Every view reachable from some reset: an agent can only stand on an
/// uncollected key if it never spawned there, which reset rules out.
pub fn all_views() -> Vec<View> {
    let mut out = Vec::new();
    for &agent in open_cells() {
        for &car in car_room() {
            for &key in key_room() {
                if agent != key {
                    out.push(View { agent, key: Some(key), car });
                }
            }
            out.push(View { agent, key: None, car });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BinaryHeap, HashSet};

    #[test]
    fn layout_has_four_rooms_and_passages() {
        let l = layout();
        assert_eq!(l.open_cells().len(), 40);
        for room in [Room::TopLeft, Room::TopRight, Room::BottomLeft, Room::BottomRight] {
            assert_eq!(l.room_cells(room).len(), 9);
        }
        // each wall arm has exactly one opening
        let arms: [Vec<Cell>; 4] = [
            (0..3).map(|r| Cell::new(r, 3)).collect(),
            (4..7).map(|r| Cell::new(r, 3)).collect(),
            (0..3).map(|c| Cell::new(3, c)).collect(),
            (4..7).map(|c| Cell::new(3, c)).collect(),
        ];
        for arm in arms {
            assert_eq!(arm.iter().filter(|&&c| !l.is_wall(c)).count(), 1);
        }
        let open = l.open_cells();
        let d = l.distances_to(open[0]);
        assert!(open.iter().all(|c| d[c.index()].is_some()));
    }

    #[test]
    fn reset_is_deterministic() {
        assert_eq!(reset(7), reset(7));
    }

    #[test]
    fn keys_and_cars_spawn_in_their_rooms() {
        let l = layout();
        for seed in 0..1000 {
            let s = reset(seed);
            assert_eq!(l.room_of(s.key), Some(Room::TopLeft));
            assert_eq!(l.room_of(s.car), Some(Room::BottomRight));
            assert!(!l.is_wall(s.agent));
            assert_eq!(s.d1, shortest_distance(s.agent, s.key, l).unwrap());
            assert_eq!(s.d2, shortest_distance(s.key, s.car, l).unwrap());
        }
    }

    #[test]
    fn agent_spawns_cover_all_open_cells() {
        let seen: HashSet<Cell> = (0..1000).map(|s| reset(s).agent).collect();
        let open: HashSet<Cell> = layout().open_cells().into_iter().collect();
        assert_eq!(seen, open);
    }

    #[test]
    fn wall_bump_costs_one_step() {
        let s = EnvState::new(Cell::new(0, 0), Cell::new(2, 2), Cell::new(6, 6));
        let tr = step(&s, Action::Up).unwrap();
        assert_eq!(tr.state.agent, s.agent);
        assert_eq!(tr.reward, -1.0);
        assert!(!tr.done);
        // wall cell inside the grid
        let s = EnvState::new(Cell::new(2, 2), Cell::new(0, 0), Cell::new(6, 6));
        let tr = step(&s, Action::Right).unwrap();
        assert_eq!(tr.state.agent, Cell::new(2, 2));
    }

    #[test]
    fn never_reaching_key_scores_minus_cap() {
        let mut s = EnvState::new(Cell::new(6, 6), Cell::new(0, 0), Cell::new(5, 5));
        let mut ret = 0.0;
        loop {
            let tr = step(&s, Action::Down).unwrap();
            ret += tr.reward;
            s = tr.state;
            if tr.done {
                break;
            }
        }
        assert_eq!(s.t, EPISODE_CAP);
        assert_eq!(ret, -100.0);
        assert!(matches!(step(&s, Action::Up), Err(EnvError::EpisodeFinished { .. })));
    }

    #[test]
    fn spawning_on_key_collects_it() {
        let s = EnvState::new(Cell::new(1, 1), Cell::new(1, 1), Cell::new(5, 5));
        assert!(s.has_key);
        assert_eq!(s.d1, 0);
    }

    #[test]
    fn successful_returns_decompose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut successes = 0;
        for seed in 0..400 {
            let mut s = reset(seed);
            let (d1, d2) = (s.d1, s.d2);
            let mut ret = 0.0;
            loop {
                let a = Action::ALL[rng.random_range(0..4)];
                let tr = step(&s, a).unwrap();
                ret += tr.reward;
                s = tr.state;
                if tr.done {
                    break;
                }
            }
            if s.is_success() {
                successes += 1;
                assert_eq!(ret, -(s.t as f64) + d1 as f64 + d2 as f64 + 1.0);
            }
        }
        assert!(successes > 0);
    }

    #[test]
    fn step_is_pure() {
        let s = reset(11);
        for a in Action::ALL {
            assert_eq!(step(&s, a), step(&s, a));
        }
    }

    fn dijkstra(from: Cell, to: Cell, l: &GridLayout) -> Option<u32> {
        let mut best = [u32::MAX; CELLS];
        let mut heap = BinaryHeap::new();
        best[from.index()] = 0;
        heap.push(std::cmp::Reverse((0u32, from.index())));
        while let Some(std::cmp::Reverse((d, i))) = heap.pop() {
            if i == to.index() {
                return Some(d);
            }
            if d > best[i] {
                continue;
            }
            let c = Cell::from_index(i);
            for a in Action::ALL {
                if let Some(n) = c.offset(a).filter(|&n| !l.is_wall(n)) {
                    if d + 1 < best[n.index()] {
                        best[n.index()] = d + 1;
                        heap.push(std::cmp::Reverse((d + 1, n.index())));
                    }
                }
            }
        }
        None
    }

    #[test]
    fn distances_match_dijkstra_and_are_a_metric() {
        let l = layout();
        let open = l.open_cells();
        for &a in &open {
            assert_eq!(shortest_distance(a, a, l).unwrap(), 0);
            for &b in &open {
                assert_eq!(Some(shortest_distance(a, b, l).unwrap()), dijkstra(a, b, l));
            }
            for act in Action::ALL {
                let n = l.move_from(a, act);
                if n != a {
                    assert_eq!(shortest_distance(a, n, l).unwrap(), 1);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let [a, b, c] = [0; 3].map(|_| open[rng.random_range(0..open.len())]);
            let d = |x, y| shortest_distance(x, y, l).unwrap();
            assert_eq!(d(a, b), d(b, a));
            assert!(d(a, c) <= d(a, b) + d(b, c));
        }
        assert_eq!(shortest_distance(Cell::new(3, 3), Cell::new(0, 0), l), Err(EnvError::Wall(Cell::new(3, 3))));
    }

    #[test]
    fn render_shape_and_range() {
        let s = reset(5);
        let a = render(&s);
        assert_eq!(a, render(&s));
        assert_eq!(a.data().len(), 32 * 32 * 4);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // border is wall-coloured
        assert_eq!(a.pixel(0, 0, 0), 0.5);
        assert_eq!(a.pixel(2, 31, 31), 0.5);
    }

    #[test]
    fn key_flag_differs_only_in_channel_three() {
        // The agent is drawn over an uncollected key, so with the agent on the
        // key cell only the flag plane tells the two states apart.
        let plane = OBS_SIDE * OBS_SIDE;
        let mut without = EnvState::new(Cell::new(1, 1), Cell::new(1, 1), Cell::new(6, 6));
        without.has_key = false;
        let mut with = without;
        with.has_key = true;
        let (a, b) = (render(&without), render(&with));
        assert_eq!(a.data()[..3 * plane], b.data()[..3 * plane]);
        assert!(a.data()[3 * plane..].iter().all(|&x| x == 0.0));
        assert!(b.data()[3 * plane..].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn render_is_injective_on_reachable_views() {
        let views = all_views();
        assert_eq!(views.len(), 40 * 9 * 9 - 9 * 9 + 40 * 9);
        let mut seen = HashSet::new();
        let mut buf = vec![0.0; OBS_LEN];
        for v in &views {
            render_view_into(v, &mut buf);
            let bits: Vec<u32> = buf.iter().map(|x| x.to_bits()).collect();
            assert!(seen.insert(bits), "collision for {v:?}");
        }
    }

    #[test]
    fn csv_dump_has_4096_values() {
        let csv = render(&reset(1)).to_csv();
        assert_eq!(csv.trim_end().split(',').count(), 4096);
    }
}
