//! Wind-grid benchmark domains.
//!
//! Cells are addressed `(x, y)` with `x` growing east and `y` growing north,
//! origin at the southwest corner. The state index of a cell is
//! `y * width + x`. Each cell has a wind mixture; a movement action adds the
//! agent's push and one sampled wind push, clamped to the grid per axis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{BaseMdp, MdpError, ValueFn};

pub const ACTION_N: usize = 0;
pub const ACTION_S: usize = 1;
pub const ACTION_E: usize = 2;
pub const ACTION_W: usize = 3;
pub const ACTION_NOP: usize = 4;
pub const ACTION_COUNT: usize = 5;

pub const ACTION_NAMES: [&str; ACTION_COUNT] = ["N", "S", "E", "W", "NOP"];

#[derive(Debug, Error)]
pub enum GridError {
    #[error("unknown domain kind '{0}' (expected stochastic, traps, dynamicnop1 or dynamicnop2)")]
    UnknownKind(String),

    #[error("wind mixture at cell ({x},{y}) sums to {sum}")]
    BadMixture { x: usize, y: usize, sum: f64 },

    #[error("move_cells ({move_cells}) must exceed wind_cells ({wind_cells})")]
    WeakMove { move_cells: usize, wind_cells: usize },

    #[error("cell ({x},{y}) lies outside the {width}x{height} grid")]
    OutOfGrid { x: usize, y: usize, width: usize, height: usize },

    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },

    #[error("grid tables have {got} cells, expected {expected}")]
    TableSize { expected: usize, got: usize },

    #[error(transparent)]
    Mdp(#[from] MdpError),
}

pub type Result<T> = std::result::Result<T, GridError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    N,
    S,
    E,
    W,
}

impl Dir {
    pub fn vector(self) -> (i64, i64) {
        match self {
            Dir::N => (0, 1),
            Dir::S => (0, -1),
            Dir::E => (1, 0),
            Dir::W => (-1, 0),
        }
    }

    /// Direction of a movement action, `None` for NOP.
    pub fn of_action(a: usize) -> Option<Dir> {
        match a {
            ACTION_N => Some(Dir::N),
            ACTION_S => Some(Dir::S),
            ACTION_E => Some(Dir::E),
            ACTION_W => Some(Dir::W),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NopDynamics {
    StayInPlace,
    DriftWithWind,
}

pub type Cell = (usize, usize);

/// Full description of a wind grid. Per-cell tables are indexed by state index.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub move_cells: usize,
    pub wind_cells: usize,
    pub wind_field: Vec<Vec<(Dir, f64)>>,
    pub nop_dynamics: NopDynamics,
    pub cost_think: Vec<f64>,
    pub cost_act: Vec<f64>,
    pub start_cell: Cell,
    pub goal_cell: Cell,
}

impl GridSpec {
    /// A grid with calm air (no wind mixture entries yet) and uniform costs.
    /// Callers fill `wind_field` before building.
    pub fn uniform(
        width: usize,
        height: usize,
        move_cells: usize,
        wind_cells: usize,
        nop_dynamics: NopDynamics,
        cost_think: f64,
        cost_act: f64,
    ) -> GridSpec {
        let n = width * height;
        GridSpec {
            width,
            height,
            move_cells,
            wind_cells,
            wind_field: vec![Vec::new(); n],
            nop_dynamics,
            cost_think: vec![cost_think; n],
            cost_act: vec![cost_act; n],
            start_cell: (0, 0),
            goal_cell: (width.saturating_sub(1), height.saturating_sub(1)),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, (x, y): Cell) -> usize {
        y * self.width + x
    }

    pub fn cell(&self, index: usize) -> Cell {
        (index % self.width, index / self.width)
    }

    pub fn set_wind(&mut self, cell: Cell, mixture: &[(Dir, f64)]) {
        let i = self.index(cell);
        self.wind_field[i] = mixture.to_vec();
    }

    pub fn manhattan_to_goal(&self, (x, y): Cell) -> usize {
        x.abs_diff(self.goal_cell.0) + y.abs_diff(self.goal_cell.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.move_cells <= self.wind_cells {
            return Err(GridError::WeakMove { move_cells: self.move_cells, wind_cells: self.wind_cells });
        }
        let n = self.cell_count();
        for len in [self.wind_field.len(), self.cost_think.len(), self.cost_act.len()] {
            if len != n {
                return Err(GridError::TableSize { expected: n, got: len });
            }
        }
        for cell in [self.start_cell, self.goal_cell] {
            if cell.0 >= self.width || cell.1 >= self.height {
                return Err(GridError::OutOfGrid { x: cell.0, y: cell.1, width: self.width, height: self.height });
            }
        }
        for i in 0..n {
            let sum: f64 = self.wind_field[i].iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > 1e-9 || self.wind_field[i].iter().any(|&(_, p)| p < 0.0) {
                let (x, y) = self.cell(i);
                return Err(GridError::BadMixture { x, y, sum });
            }
            for (what, value) in [("cost_think", self.cost_think[i]), ("cost_act", self.cost_act[i])] {
                if !(value > 0.0) {
                    return Err(GridError::NonPositive { what, value });
                }
            }
        }
        Ok(())
    }

    /// Builds the SSP MDP over cells. The goal is absorbing: every action is a
    /// zero-cost self-loop there.
    pub fn to_mdp(&self) -> Result<BaseMdp> {
        self.validate()?;
        let goal = self.index(self.goal_cell);
        let mut b = BaseMdp::builder(self.cell_count(), ACTION_COUNT, ACTION_NOP, self.index(self.start_cell), goal);
        for s in 0..self.cell_count() {
            if s == goal {
                for a in 0..ACTION_COUNT {
                    b.edge(s, a, 0.0, &[(s, 1.0)]);
                }
                continue;
            }
            let cell = self.cell(s);
            for a in 0..ACTION_COUNT {
                let cost = if a == ACTION_NOP { self.cost_think[s] } else { self.cost_act[s] };
                b.cost(s, a, cost);
                for &(wind, p) in &self.wind_field[s] {
                    let next = resolve_move(self, cell, a, wind);
                    b.transition(s, a, self.index(next), p);
                }
            }
        }
        Ok(b.build()?)
    }
}

/// Landing cell for `action` taken in `cell` while the wind pushes `wind`.
pub fn resolve_move(spec: &GridSpec, cell: Cell, action: usize, wind: Dir) -> Cell {
    let (wx, wy) = wind.vector();
    let w = spec.wind_cells as i64;
    let (dx, dy) = match Dir::of_action(action) {
        Some(dir) => {
            let (ax, ay) = dir.vector();
            let m = spec.move_cells as i64;
            let (dx, dy) = (m * ax + w * wx, m * ay + w * wy);
            // Progress along the intended axis survives any wind.
            debug_assert!(dx * ax + dy * ay >= m - w);
            (dx, dy)
        }
        None => match spec.nop_dynamics {
            NopDynamics::StayInPlace => (0, 0),
            NopDynamics::DriftWithWind => (w * wx, w * wy),
        },
    };
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    (clamp(cell.0 as i64 + dx, spec.width), clamp(cell.1 as i64 + dy, spec.height))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Stochastic,
    Traps,
    #[serde(rename = "dynamicnop1")]
    DynamicNop1,
    #[serde(rename = "dynamicnop2")]
    DynamicNop2,
}

impl DomainKind {
    pub const ALL: [DomainKind; 4] =
        [DomainKind::Stochastic, DomainKind::Traps, DomainKind::DynamicNop1, DomainKind::DynamicNop2];

    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Stochastic => "stochastic",
            DomainKind::Traps => "traps",
            DomainKind::DynamicNop1 => "dynamicnop1",
            DomainKind::DynamicNop2 => "dynamicnop2",
        }
    }
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DomainKind {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| *c != '-' && *c != '_').collect::<String>().to_lowercase();
        DomainKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| GridError::UnknownKind(s.to_string()))
    }
}

pub const GRID_SIZE: usize = 100;
pub const MOVE_CELLS: usize = 11;
pub const WIND_CELLS: usize = 10;
pub const TRAP_COST: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub kind: DomainKind,
    pub cost_think: f64,
    pub cost_act: f64,
    /// Multiplier on Manhattan distance for the upper bound; `None` means `cost_act`.
    #[serde(default)]
    pub upper_heuristic_scale: Option<f64>,
}

impl DomainConfig {
    /// Default costs for `kind`: think 10 / act 11 for traps, think 1 / act 11 otherwise.
    pub fn new(kind: DomainKind) -> Self {
        let cost_think = if kind == DomainKind::Traps { 10.0 } else { 1.0 };
        DomainConfig { kind, cost_think, cost_act: 11.0, upper_heuristic_scale: None }
    }

    pub fn with_costs(mut self, cost_think: f64, cost_act: f64) -> Self {
        self.cost_think = cost_think;
        self.cost_act = cost_act;
        self
    }

    pub fn scale(&self) -> f64 {
        self.upper_heuristic_scale.unwrap_or(self.cost_act)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, value) in [("cost_think", self.cost_think), ("cost_act", self.cost_act), ("upper_heuristic_scale", self.scale())] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(GridError::NonPositive { what, value });
            }
        }
        Ok(())
    }
}

/// Grid layout for `cfg` on the default 100x100 board.
pub fn domain_spec(cfg: &DomainConfig) -> Result<GridSpec> {
    cfg.validate()?;
    let last = GRID_SIZE - 1;
    let nop = match cfg.kind {
        DomainKind::Stochastic | DomainKind::Traps => NopDynamics::StayInPlace,
        DomainKind::DynamicNop1 | DomainKind::DynamicNop2 => NopDynamics::DriftWithWind,
    };
    let mut spec = GridSpec::uniform(GRID_SIZE, GRID_SIZE, MOVE_CELLS, WIND_CELLS, nop, cfg.cost_think, cfg.cost_act);
    spec.goal_cell = (last, last);
    spec.start_cell = match cfg.kind {
        DomainKind::Stochastic | DomainKind::Traps => (last, 0),
        DomainKind::DynamicNop1 | DomainKind::DynamicNop2 => (98, 1),
    };
    for y in 0..GRID_SIZE {
        for x in 0..GRID_SIZE {
            let mixture: &[(Dir, f64)] = match cfg.kind {
                DomainKind::Stochastic | DomainKind::Traps => {
                    if x == last {
                        &[(Dir::S, 1.0)]
                    } else {
                        &[(Dir::N, 0.6), (Dir::E, 0.2), (Dir::W, 0.2)]
                    }
                }
                DomainKind::DynamicNop1 | DomainKind::DynamicNop2 => {
                    if x == last {
                        &[(Dir::N, 1.0)]
                    } else if y == 0 || (cfg.kind == DomainKind::DynamicNop2 && y == last) {
                        &[(Dir::E, 1.0)]
                    } else {
                        &[(Dir::W, 0.8), (Dir::N, 0.2)]
                    }
                }
            };
            spec.set_wind((x, y), mixture);
        }
    }
    if cfg.kind == DomainKind::Traps {
        let s = spec.index(spec.start_cell);
        spec.cost_think[s] = TRAP_COST;
        spec.cost_act[s] = TRAP_COST;
    }
    Ok(spec)
}

pub fn build_domain(cfg: &DomainConfig) -> Result<(BaseMdp, GridSpec)> {
    let spec = domain_spec(cfg)?;
    let m = spec.to_mdp()?;
    Ok((m, spec))
}

/// Zero lower bound and scaled-Manhattan upper bound.
///
/// Cells whose action cost exceeds the scale get the excess added once, which
/// keeps the bound monotone next to expensive cells such as the trap start.
pub fn heuristic_bounds(spec: &GridSpec, cfg: &DomainConfig) -> (ValueFn, ValueFn) {
    let scale = cfg.scale();
    let goal = spec.index(spec.goal_cell);
    let upper = (0..spec.cell_count())
        .map(|s| {
            if s == goal {
                0.0
            } else {
                let surcharge = (spec.cost_act[s] - scale).max(0.0);
                scale * spec.manhattan_to_goal(spec.cell(s)) as f64 + surcharge
            }
        })
        .collect();
    (ValueFn::zeros(spec.cell_count()), ValueFn::from_vec(upper))
}
