use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Wall,
    Free,
}

/// Physical parameters of a maze task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Side length of one grid cell, in length units.
    pub cell_size: f64,
    /// Integration step, seconds.
    pub dt: f64,
    /// Speed limit, units/s.
    pub max_speed: f64,
    /// Episode length limit in low-level steps.
    pub max_steps: usize,
    /// Task success radius around the target-cell center.
    pub target_radius: f64,
    /// Discount of the task MDP. Segment value functions do not use it.
    pub gamma: f64,
    /// Reset jitter as a fraction of a cell, per axis. Zero disables it.
    pub start_jitter: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            cell_size: 0.25,
            dt: 0.1,
            max_speed: 1.0,
            max_steps: 200,
            target_radius: 0.125,
            gamma: 0.99,
            start_jitter: 0.1,
        }
    }
}

/// Wall layout plus dynamics parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeSpec {
    pub name: String,
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
    start: (usize, usize),
    target: (usize, usize),
    pub config: EnvConfig,
}

const UMAZE: &str = include_str!("../../mazes/umaze.txt");
const MEDIUM: &str = include_str!("../../mazes/medium.txt");
const LARGE: &str = include_str!("../../mazes/large.txt");

/// Names accepted by [`MazeSpec::builtin`].
pub const BUILTIN_MAZES: [&str; 3] = ["umaze", "medium", "large"];

impl MazeSpec {
    /// Parses an ASCII grid of `#`, `.`, `S` and `T`.
    pub fn parse(name: &str, text: &str, config: EnvConfig) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(Error::InvalidMaze("empty grid".into()));
        }
        let cols = lines[0].chars().count();
        let rows = lines.len();
        let mut cells = Vec::with_capacity(rows * cols);
        let mut start = None;
        let mut target = None;
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::InvalidMaze(format!("row {r} has a different width")));
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Free,
                    'S' => {
                        if start.replace((r, c)).is_some() {
                            return Err(Error::InvalidMaze("more than one 'S'".into()));
                        }
                        Cell::Free
                    }
                    'T' => {
                        if target.replace((r, c)).is_some() {
                            return Err(Error::InvalidMaze("more than one 'T'".into()));
                        }
                        Cell::Free
                    }
                    other => return Err(Error::InvalidMaze(format!("unknown symbol {other:?}"))),
                };
                let boundary = r == 0 || c == 0 || r + 1 == rows || c + 1 == cols;
                if boundary && cell != Cell::Wall {
                    return Err(Error::InvalidMaze(format!("boundary cell ({r}, {c}) is not a wall")));
                }
                cells.push(cell);
            }
        }
        let start = start.ok_or_else(|| Error::InvalidMaze("missing 'S'".into()))?;
        let target = target.ok_or_else(|| Error::InvalidMaze("missing 'T'".into()))?;
        if !(config.cell_size > 0.0 && config.dt > 0.0 && config.max_speed > 0.0 && config.max_steps > 0) {
            return Err(Error::Config("cell size, dt, max speed and max steps must be positive".into()));
        }
        Ok(Self {
            name: name.to_string(),
            rows,
            cols,
            cells,
            start,
            target,
            config,
        })
    }

    /// Built-in layouts with their default episode limits.
    pub fn builtin(name: &str) -> Result<Self> {
        let (text, max_steps) = match name {
            "umaze" => (UMAZE, 120),
            "medium" => (MEDIUM, 220),
            "large" => (LARGE, 400),
            other => return Err(Error::InvalidMaze(format!("no built-in maze named {other:?}"))),
        };
        let config = EnvConfig {
            max_steps,
            ..EnvConfig::default()
        };
        Self::parse(name, text, config)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn start_cell(&self) -> (usize, usize) {
        self.start
    }

    pub fn target_cell(&self) -> (usize, usize) {
        self.target
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.cols + col]
    }

    pub fn is_free(&self, row: usize, col: usize) -> bool {
        row < self.rows && col < self.cols && self.cell(row, col) == Cell::Free
    }

    /// Grid cell containing a point, if inside the bounding box.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cs = self.config.cell_size;
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (c, r) = ((x / cs) as usize, (y / cs) as usize);
        (r < self.rows && c < self.cols).then_some((r, c))
    }

    /// True if the point lies in a free cell.
    pub fn is_free_point(&self, x: f64, y: f64) -> bool {
        self.cell_at(x, y).is_some_and(|(r, c)| self.cell(r, c) == Cell::Free)
    }

    /// Center of a cell as `(x, y)`; `x` grows with the column, `y` with the row.
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let cs = self.config.cell_size;
        [(col as f64 + 0.5) * cs, (row as f64 + 0.5) * cs]
    }

    pub fn target_position(&self) -> [f64; 2] {
        self.cell_center(self.target.0, self.target.1)
    }

    /// Width and height of the bounding box.
    pub fn extent(&self) -> [f64; 2] {
        let cs = self.config.cell_size;
        [self.cols as f64 * cs, self.rows as f64 * cs]
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows)
            .flat_map(move |r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| self.cell(r, c) == Cell::Free)
    }

    /// The grid rendered back to text.
    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                s.push(if (r, c) == self.start {
                    'S'
                } else if (r, c) == self.target {
                    'T'
                } else if self.cell(r, c) == Cell::Wall {
                    '#'
                } else {
                    '.'
                });
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_round_trip() {
        for name in BUILTIN_MAZES {
            let m = MazeSpec::builtin(name).unwrap();
            let again = MazeSpec::parse(name, &m.to_ascii(), m.config.clone()).unwrap();
            assert_eq!(m, again);
        }
        let large = MazeSpec::builtin("large").unwrap();
        assert_eq!((large.rows(), large.cols()), (12, 12));
    }

    #[test]
    fn rejects_malformed_grids() {
        let cfg = EnvConfig::default;
        assert!(MazeSpec::parse("x", "###\n#S#\n###", cfg()).is_err());
        assert!(MazeSpec::parse("x", "####\n#ST#\n#.#\n####", cfg()).is_err());
        assert!(MazeSpec::parse("x", "####\n.ST#\n####", cfg()).is_err());
        assert!(MazeSpec::parse("x", "#####\n#SST#\n#####", cfg()).is_err());
        assert!(MazeSpec::parse("x", "####\n#SX#\n####", cfg()).is_err());
        assert!(MazeSpec::parse("x", "####\n#ST#\n####", cfg()).is_ok());
    }

    #[test]
    fn point_lookup() {
        let m = MazeSpec::builtin("umaze").unwrap();
        assert_eq!(m.cell_at(0.375, 0.375), Some((1, 1)));
        assert!(m.is_free_point(0.375, 0.375));
        assert!(!m.is_free_point(0.1, 0.1));
        assert!(!m.is_free_point(-0.1, 0.375));
        assert_eq!(m.cell_center(1, 1), [0.375, 0.375]);
    }
}
