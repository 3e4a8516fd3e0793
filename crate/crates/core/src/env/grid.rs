//! Hazard gridworld loaded from a plain-text layout.
//!
//! Layout characters: `S` start, `G` goal, `H` hazard, `.` free, `#` wall.
//! Actions are `0` up, `1` right, `2` down, `3` left. Moving into a wall or
//! off the grid leaves the agent in place. Entering a hazard costs 1,
//! entering a goal pays 1 and ends the episode.

use std::path::Path;
use std::sync::Arc;

use super::tabular::{TabularCMDP, TabularEnv};
use crate::error::{Error, Result};

/// 5x5 grid, start and goal in opposite corners, three hazards on the
/// diagonal. Hazard-free shortest routes run along the border.
pub const DEFAULT_GRID: &str = "\
S....
.H...
..H..
...H.
....G
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Start,
    Goal,
    Hazard,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Cell>,
}

impl GridLayout {
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(Error::Input("grid layout is empty".into()));
        }
        let cols = lines[0].chars().count();
        let mut cells = Vec::with_capacity(lines.len() * cols);
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::Input(format!(
                    "grid row {r} has {} cells, expected {cols}",
                    line.chars().count()
                )));
            }
            for ch in line.chars() {
                cells.push(match ch {
                    '.' => Cell::Free,
                    'S' => Cell::Start,
                    'G' => Cell::Goal,
                    'H' => Cell::Hazard,
                    '#' => Cell::Wall,
                    other => {
                        return Err(Error::Input(format!("unknown grid character {other:?}")))
                    }
                });
            }
        }
        let starts = cells.iter().filter(|c| **c == Cell::Start).count();
        if starts != 1 {
            return Err(Error::Input(format!("grid needs exactly one start, found {starts}")));
        }
        if !cells.contains(&Cell::Goal) {
            return Err(Error::Input("grid needs at least one goal".into()));
        }
        Ok(Self {
            rows: lines.len(),
            cols,
            cells,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn start(&self) -> usize {
        self.cells.iter().position(|c| *c == Cell::Start).unwrap_or(0)
    }

    fn neighbour(&self, cell: usize, action: usize) -> usize {
        let (r, c) = (cell / self.cols, cell % self.cols);
        let target = match action {
            0 if r > 0 => Some((r - 1, c)),
            1 if c + 1 < self.cols => Some((r, c + 1)),
            2 if r + 1 < self.rows => Some((r + 1, c)),
            3 if c > 0 => Some((r, c - 1)),
            _ => None,
        };
        match target {
            Some((r, c)) if self.cells[r * self.cols + c] != Cell::Wall => r * self.cols + c,
            _ => cell,
        }
    }

    /// One state per cell (walls are unreachable states), 4 deterministic moves.
    pub fn to_cmdp(&self, gamma: f64) -> TabularCMDP {
        let n = self.cells.len();
        let mut transition = vec![0.0; n * 4 * n];
        for s in 0..n {
            for a in 0..4 {
                transition[(s * 4 + a) * n + self.neighbour(s, a)] = 1.0;
            }
        }
        TabularCMDP {
            n_states: n,
            n_actions: 4,
            transition,
            reward: self.cells.iter().map(|c| f64::from(*c == Cell::Goal)).collect(),
            cost: self.cells.iter().map(|c| f64::from(*c == Cell::Hazard)).collect(),
            gamma,
            initial_state: self.start(),
            terminal: self.cells.iter().map(|c| *c == Cell::Goal).collect(),
        }
    }
}

/// A [`GridLayout`] together with its tabular model and episode cap.
#[derive(Debug, Clone)]
pub struct HazardGrid {
    pub layout: GridLayout,
    pub mdp: Arc<TabularCMDP>,
    pub horizon: usize,
}

impl HazardGrid {
    pub fn new(layout: GridLayout, gamma: f64, horizon: usize) -> Result<Self> {
        let mdp = layout.to_cmdp(gamma);
        mdp.validate()?;
        Ok(Self {
            layout,
            mdp: Arc::new(mdp),
            horizon,
        })
    }

    pub fn default_layout(gamma: f64) -> Self {
        Self::new(
            GridLayout::parse(DEFAULT_GRID).expect("default grid parses"),
            gamma,
            50,
        )
        .expect("default grid is valid")
    }

    pub fn env(&self) -> Result<TabularEnv> {
        TabularEnv::new(Arc::clone(&self.mdp), self.horizon)
    }
}
