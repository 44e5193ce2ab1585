//! Grid racetrack with configurable vehicle stability and engine boost.
//!
//! States are the `(x, y, vx, vy)` tuples reachable from the initial cells at
//! rest, plus a `goal` state (reward 1 for any action, then terminal) and an
//! absorbing `terminal` state (engine break-down or after the goal). Actions
//! are keep, +vx, +vy, -vx, -vy.
//!
//! One step under a vertex model:
//! 1. with the engine's failure probability the vehicle breaks: terminal;
//! 2. otherwise the chosen action succeeds with the stability-dependent
//!    probability, and a uniformly random action (possibly the chosen one)
//!    happens instead;
//! 3. the velocity change is clamped to the engine's speed bounds and the
//!    car moves cell by cell along the velocity; hitting a wall or leaving
//!    the grid keeps the position and stops the car, crossing a goal cell
//!    finishes the lap.
//!
//! A vertex model pairs a stability profile (high-speed or low-speed) with an
//! engine setting (boost or no boost).

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::envs::{Environment, ModelSpace, PolicySpace};
use crate::error::{ConfMdpError, Result};
use crate::mdp::{DeltaQMode, TabularConfMdp, TransitionModel};

pub const N_ACTIONS: usize = 5;
const ACTION_DELTAS: [(i32, i32); N_ACTIONS] = [(0, 0), (1, 0), (0, 1), (-1, 0), (0, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Initial,
    Goal,
    Wall,
    Road,
}

impl Cell {
    fn from_char(c: char) -> Option<Self> {
        match c {
            '1' => Some(Cell::Initial),
            '2' => Some(Cell::Goal),
            '3' => Some(Cell::Wall),
            '4' => Some(Cell::Road),
            _ => None,
        }
    }
}

/// Rectangular track, `cells[y][x]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    cells: Vec<Vec<Cell>>,
}

impl Grid {
    pub fn new(cells: Vec<Vec<Cell>>) -> Result<Self> {
        let width = cells.first().map_or(0, Vec::len);
        if width == 0 {
            return Err(ConfMdpError::Structural("empty track grid".into()));
        }
        for (row, r) in cells.iter().enumerate() {
            if r.len() != width {
                return Err(ConfMdpError::Structural(format!(
                    "track row {} has {} cells, expected {width}",
                    row + 1,
                    r.len()
                )));
            }
        }
        let has = |kind| cells.iter().flatten().any(|&c| c == kind);
        if !has(Cell::Initial) {
            return Err(ConfMdpError::Structural("track has no initial cell".into()));
        }
        if !has(Cell::Goal) {
            return Err(ConfMdpError::Structural("track has no goal cell".into()));
        }
        Ok(Self { cells })
    }

    /// Parses one row per line of `1`/`2`/`3`/`4` characters; blank lines
    /// are skipped and surrounding whitespace is trimmed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cells = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .chars()
                .enumerate()
                .map(|(col, ch)| {
                    Cell::from_char(ch).ok_or_else(|| {
                        ConfMdpError::Structural(format!(
                            "invalid track cell {ch:?} at row {}, col {}",
                            line_no + 1,
                            col + 1
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(row);
        }
        Self::new(cells)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfMdpError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn width(&self) -> usize {
        self.cells[0].len()
    }

    pub fn height(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, x: i32, y: i32) -> Option<Cell> {
        if x < 0 || y < 0 {
            return None;
        }
        self.cells.get(y as usize)?.get(x as usize).copied()
    }

    fn initial_cells(&self) -> Vec<(i32, i32)> {
        let mut out = Vec::new();
        for (y, row) in self.cells.iter().enumerate() {
            for (x, &c) in row.iter().enumerate() {
                if c == Cell::Initial {
                    out.push((x as i32, y as i32));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vertex {
    HsB,
    HsNb,
    LsB,
    LsNb,
}

impl Vertex {
    pub fn high_speed(self) -> bool {
        matches!(self, Vertex::HsB | Vertex::HsNb)
    }

    pub fn boost(self) -> bool {
        matches!(self, Vertex::HsB | Vertex::LsB)
    }

    pub fn name(self) -> &'static str {
        match self {
            Vertex::HsB => "hs_b",
            Vertex::HsNb => "hs_nb",
            Vertex::LsB => "ls_b",
            Vertex::LsNb => "ls_nb",
        }
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Probability that the chosen action happens, below and at/above the speed
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stability {
    pub low_speed: f64,
    pub high_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityParams {
    pub hs: Stability,
    pub ls: Stability,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self {
            hs: Stability {
                low_speed: 0.8,
                high_speed: 0.9,
            },
            ls: Stability {
                low_speed: 0.9,
                high_speed: 0.8,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostParams {
    /// Per-step break probability with boost.
    pub boost_failure: f64,
    /// Per-step break probability without boost.
    pub no_boost_failure: f64,
    /// Boost multiplies both speed bounds by this factor.
    pub speed_factor: i32,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            boost_failure: 0.1,
            no_boost_failure: 0.0,
            speed_factor: 2,
        }
    }
}

pub const DEFAULT_V_MIN: i32 = -2;
pub const DEFAULT_V_MAX: i32 = 2;
pub const DEFAULT_SPEED_THRESHOLD: i32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RacetrackSpec {
    pub grid: Grid,
    pub v_min: i32,
    pub v_max: i32,
    pub vertex_set: Vec<Vertex>,
    pub stability: StabilityParams,
    pub boost: BoostParams,
    /// Speeds `max(|vx|, |vy|)` below this use the low-speed stability.
    pub speed_threshold: i32,
    pub gamma: f64,
    pub delta_q: DeltaQMode,
    /// Hull coefficients of the initial model; by default uniform over the
    /// no-boost vertices.
    pub initial_omega: Option<Vec<f64>>,
}

impl RacetrackSpec {
    pub fn new(grid: Grid, vertex_set: Vec<Vertex>) -> Self {
        Self {
            grid,
            v_min: DEFAULT_V_MIN,
            v_max: DEFAULT_V_MAX,
            vertex_set,
            stability: StabilityParams::default(),
            boost: BoostParams::default(),
            speed_threshold: DEFAULT_SPEED_THRESHOLD,
            gamma: 0.9,
            delta_q: DeltaQMode::Constant(1.0),
            initial_omega: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let probs = [
            ("stability.hs.low_speed", self.stability.hs.low_speed),
            ("stability.hs.high_speed", self.stability.hs.high_speed),
            ("stability.ls.low_speed", self.stability.ls.low_speed),
            ("stability.ls.high_speed", self.stability.ls.high_speed),
            ("boost.boost_failure", self.boost.boost_failure),
            ("boost.no_boost_failure", self.boost.no_boost_failure),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfMdpError::Structural(format!(
                    "{name} = {p} is not a probability"
                )));
            }
        }
        if self.v_min > 0 || self.v_max < 0 {
            return Err(ConfMdpError::Structural(
                "speed bounds must contain 0".into(),
            ));
        }
        if self.boost.speed_factor < 1 {
            return Err(ConfMdpError::Structural(
                "boost speed factor must be >= 1".into(),
            ));
        }
        if self.vertex_set.is_empty() {
            return Err(ConfMdpError::Structural(
                "racetrack needs at least one vertex".into(),
            ));
        }
        for (i, v) in self.vertex_set.iter().enumerate() {
            if self.vertex_set[..i].contains(v) {
                return Err(ConfMdpError::Structural(format!("vertex {v} listed twice")));
            }
        }
        Ok(())
    }

    fn bounds(&self, boost: bool) -> (i32, i32) {
        if boost {
            (
                self.v_min * self.boost.speed_factor,
                self.v_max * self.boost.speed_factor,
            )
        } else {
            (self.v_min, self.v_max)
        }
    }

    fn default_omega(&self) -> Vec<f64> {
        let nb = self.vertex_set.iter().filter(|v| !v.boost()).count();
        self.vertex_set
            .iter()
            .map(|v| match nb {
                0 => 1.0 / self.vertex_set.len() as f64,
                _ if v.boost() => 0.0,
                _ => 1.0 / nb as f64,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CarState {
    pub x: i32,
    pub y: i32,
    pub vx: i32,
    pub vy: i32,
}

impl CarState {
    fn speed(&self) -> i32 {
        self.vx.abs().max(self.vy.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Car(CarState),
    Goal,
}

fn round_div(num: i32, den: i32) -> i32 {
    (num as f64 / den as f64).round() as i32
}

/// Deterministic effect of action `a` from `s` with speed bounds `(lo, hi)`.
fn step(grid: &Grid, s: CarState, a: usize, (lo, hi): (i32, i32)) -> Outcome {
    let (dx, dy) = ACTION_DELTAS[a];
    let vx = (s.vx + dx).clamp(lo, hi);
    let vy = (s.vy + dy).clamp(lo, hi);
    let n = vx.abs().max(vy.abs());
    for t in 1..=n {
        let cx = s.x + round_div(vx * t, n);
        let cy = s.y + round_div(vy * t, n);
        match grid.cell(cx, cy) {
            None | Some(Cell::Wall) => {
                return Outcome::Car(CarState { vx: 0, vy: 0, ..s });
            }
            Some(Cell::Goal) => return Outcome::Goal,
            _ => {}
        }
    }
    Outcome::Car(CarState {
        x: s.x + vx,
        y: s.y + vy,
        vx,
        vy,
    })
}

#[derive(Debug, Clone)]
pub struct Racetrack {
    pub spec: RacetrackSpec,
    /// Car states in index order; `goal` and `terminal` follow.
    pub cars: Vec<CarState>,
    pub goal: usize,
    pub terminal: usize,
    pub env: Environment,
}

impl Racetrack {
    pub fn vertices(&self) -> &[TransitionModel] {
        self.env
            .model_space
            .vertices()
            .expect("racetrack is parametric")
    }

    /// Total hull mass on high-speed-stability vertices.
    pub fn high_speed_mass(&self, omega: &[f64]) -> f64 {
        self.spec
            .vertex_set
            .iter()
            .zip(omega)
            .filter(|(v, _)| v.high_speed())
            .map(|(_, w)| w)
            .sum()
    }
}

pub fn build_racetrack(spec: &RacetrackSpec) -> Result<Racetrack> {
    spec.validate()?;
    let grid = &spec.grid;
    let any_boost = spec.vertex_set.iter().any(|v| v.boost());
    let any_plain = spec.vertex_set.iter().any(|v| !v.boost());
    let mut engine_bounds = Vec::new();
    if any_plain {
        engine_bounds.push(spec.bounds(false));
    }
    if any_boost {
        engine_bounds.push(spec.bounds(true));
    }

    // Breadth-first enumeration over every action under every engine setting.
    let starts: Vec<CarState> = grid
        .initial_cells()
        .into_iter()
        .map(|(x, y)| CarState { x, y, vx: 0, vy: 0 })
        .collect();
    let mut index: HashMap<CarState, usize> = HashMap::new();
    let mut cars = Vec::new();
    let mut queue = VecDeque::new();
    for &s in &starts {
        index.insert(s, cars.len());
        cars.push(s);
        queue.push_back(s);
    }
    while let Some(s) = queue.pop_front() {
        for &bounds in &engine_bounds {
            for a in 0..N_ACTIONS {
                if let Outcome::Car(next) = step(grid, s, a, bounds) {
                    if !index.contains_key(&next) {
                        index.insert(next, cars.len());
                        cars.push(next);
                        queue.push_back(next);
                    }
                }
            }
        }
    }

    let n_cars = cars.len();
    let goal = n_cars;
    let terminal = n_cars + 1;
    let ns = n_cars + 2;
    let na = N_ACTIONS;

    let mut reward = vec![0.0; ns * na];
    reward[goal * na..(goal + 1) * na].fill(1.0);
    let mut mu = vec![0.0; ns];
    for s in &starts {
        mu[index[s]] = 1.0 / starts.len() as f64;
    }
    let mdp = TabularConfMdp::new(ns, na, reward, spec.gamma, mu)?.with_delta_q(spec.delta_q);

    let vertices = spec
        .vertex_set
        .iter()
        .map(|&v| {
            let stability = if v.high_speed() {
                spec.stability.hs
            } else {
                spec.stability.ls
            };
            let failure = if v.boost() {
                spec.boost.boost_failure
            } else {
                spec.boost.no_boost_failure
            };
            let bounds = spec.bounds(v.boost());
            let mut p = vec![0.0; ns * na * ns];
            for (i, &car) in cars.iter().enumerate() {
                let success = if car.speed() < spec.speed_threshold {
                    stability.low_speed
                } else {
                    stability.high_speed
                };
                for a in 0..na {
                    let row = &mut p[(i * na + a) * ns..(i * na + a + 1) * ns];
                    row[terminal] += failure;
                    for b in 0..na {
                        let chosen = if b == a { success } else { 0.0 };
                        let w = (1.0 - failure) * (chosen + (1.0 - success) / na as f64);
                        let next = match step(grid, car, b, bounds) {
                            Outcome::Goal => goal,
                            Outcome::Car(c) => index[&c],
                        };
                        row[next] += w;
                    }
                }
            }
            for a in 0..na {
                p[(goal * na + a) * ns + terminal] = 1.0;
                p[(terminal * na + a) * ns + terminal] = 1.0;
            }
            TransitionModel::new(ns, na, p)
        })
        .collect::<Result<Vec<_>>>()?;

    let omega = spec
        .initial_omega
        .clone()
        .unwrap_or_else(|| spec.default_omega());
    let initial_model = TransitionModel::convex_combination(&vertices, &omega)?;
    let env = Environment {
        name: "racetrack".into(),
        mdp,
        policy_space: PolicySpace::default(),
        model_space: ModelSpace::ConvexHull { vertices },
        initial_model,
        initial_omega: Some(omega),
    };
    Ok(Racetrack {
        spec: spec.clone(),
        cars,
        goal,
        terminal,
        env,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{evaluate, Policy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SMALL: &str = "3333333\n3144442\n3144442\n3333333\n";

    #[test]
    fn parse_reports_position() {
        let err = Grid::parse("1442\n14x2\n").unwrap_err().to_string();
        assert!(err.contains("row 2, col 3"), "{err}");
        assert!(Grid::parse("12\n1\n").is_err());
        assert!(Grid::parse("44\n42\n").is_err());
        assert!(Grid::parse("14\n44\n").is_err());
        assert!(Grid::parse("").is_err());
    }

    #[test]
    fn two_cell_track_reaches_goal() {
        let spec = RacetrackSpec {
            stability: StabilityParams {
                hs: Stability {
                    low_speed: 1.0,
                    high_speed: 1.0,
                },
                ls: Stability {
                    low_speed: 1.0,
                    high_speed: 1.0,
                },
            },
            ..RacetrackSpec::new(Grid::parse("12").unwrap(), vec![Vertex::HsNb])
        };
        let rt = build_racetrack(&spec).unwrap();
        // Accelerating right reaches the goal in one step; the goal pays next step.
        let pi = Policy::deterministic(
            rt.env.mdp.n_states(),
            N_ACTIONS,
            &vec![1; rt.env.mdp.n_states()],
            None,
        )
        .unwrap();
        let ev = evaluate(&rt.env.mdp, &rt.env.initial_model, &pi).unwrap();
        assert!((ev.j - 0.9).abs() < 1e-12, "{}", ev.j);
    }

    #[test]
    fn five_actions_and_closed_rows() {
        let grid = Grid::parse(SMALL).unwrap();
        let rt = build_racetrack(&RacetrackSpec::new(
            grid,
            vec![Vertex::HsB, Vertex::HsNb, Vertex::LsB, Vertex::LsNb],
        ))
        .unwrap();
        assert_eq!(rt.env.mdp.n_actions(), 5);
        assert_eq!(
            rt.env.initial_omega.as_deref(),
            Some(&[0.0, 0.5, 0.0, 0.5][..])
        );
        let ns = rt.env.mdp.n_states();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let mut w: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
            let sum: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= sum);
            let p = TransitionModel::convex_combination(rt.vertices(), &w).unwrap();
            let (s, a) = (rng.gen_range(0..ns), rng.gen_range(0..5));
            assert!((p.row(s, a).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn failure_mass_goes_to_terminal() {
        let grid = Grid::parse(SMALL).unwrap();
        let rt =
            build_racetrack(&RacetrackSpec::new(grid, vec![Vertex::HsB, Vertex::LsNb])).unwrap();
        let (b, nb) = (&rt.vertices()[0], &rt.vertices()[1]);
        for s in 0..rt.cars.len() {
            for a in 0..5 {
                assert!(b.prob(s, a, rt.terminal) >= 0.1 - 1e-15);
                assert_eq!(nb.prob(s, a, rt.terminal), 0.0);
                let rest: f64 = (0..rt.env.mdp.n_states())
                    .filter(|&s2| s2 != rt.terminal)
                    .map(|s2| b.prob(s, a, s2))
                    .sum();
                assert!((rest + 0.1 - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stability_sets_intended_action_mass() {
        let grid = Grid::parse("1444444442").unwrap();
        let rt =
            build_racetrack(&RacetrackSpec::new(grid, vec![Vertex::HsNb, Vertex::LsNb])).unwrap();
        let start = 0;
        // From rest, +vx under hs: 0.8 + 0.2/5 on the intended outcome.
        let target = rt
            .cars
            .iter()
            .position(|c| {
                *c == CarState {
                    x: 1,
                    y: 0,
                    vx: 1,
                    vy: 0,
                }
            })
            .unwrap();
        assert!((rt.vertices()[0].prob(start, 1, target) - 0.84).abs() < 1e-12);
        assert!((rt.vertices()[1].prob(start, 1, target) - 0.92).abs() < 1e-12);
    }

    #[test]
    fn walls_stop_the_car() {
        let grid = Grid::parse("3333\n3142\n3333").unwrap();
        let s = CarState {
            x: 1,
            y: 1,
            vx: 0,
            vy: 0,
        };
        assert_eq!(
            step(&grid, s, 2, (-2, 2)),
            Outcome::Car(CarState {
                x: 1,
                y: 1,
                vx: 0,
                vy: 0
            })
        );
        assert_eq!(step(&grid, s, 0, (-2, 2)), Outcome::Car(s));
        let fast = CarState {
            x: 1,
            y: 1,
            vx: 1,
            vy: 0,
        };
        assert_eq!(step(&grid, fast, 1, (-2, 2)), Outcome::Goal);
    }

    #[test]
    fn boost_widens_speed_bounds() {
        let grid = Grid::parse("1444444442").unwrap();
        let s = CarState {
            x: 0,
            y: 0,
            vx: 2,
            vy: 0,
        };
        assert_eq!(
            step(&grid, s, 1, (-2, 2)),
            Outcome::Car(CarState {
                x: 2,
                y: 0,
                vx: 2,
                vy: 0
            })
        );
        assert_eq!(
            step(&grid, s, 1, (-4, 4)),
            Outcome::Car(CarState {
                x: 3,
                y: 0,
                vx: 3,
                vy: 0
            })
        );
    }
}
