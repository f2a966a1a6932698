use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Continuous position in meters. `x` grows with the column index, `y` with
/// the row index (row 0 is the top line of the map).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Occupancy grid with 1 m cells, a start and a goal.
#[derive(Clone, Debug, PartialEq)]
pub struct MazeSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    walls: Vec<bool>,
    pub start: Point,
    pub goal: Point,
    pub goal_radius: f64,
    pub cell_size: f64,
}

pub const DEFAULT_GOAL_RADIUS: f64 = 0.5;

/// Parses an ASCII map: `#` wall, `.` free, `S` start, `G` goal.
pub fn load_maze(text: &str) -> Result<MazeSpec> {
    MazeSpec::parse("", text)
}

impl MazeSpec {
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let lines: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(Error::MazeLoad {
                row: 0,
                col: 0,
                msg: "empty map".into(),
            });
        }
        let width = lines[0].chars().count();
        let height = lines.len();
        let mut walls = Vec::with_capacity(width * height);
        let mut start = None;
        let mut goal = None;

        for (r, line) in lines.iter().enumerate() {
            let n = line.chars().count();
            if n != width {
                return Err(Error::MazeLoad {
                    row: r,
                    col: n.min(width),
                    msg: format!("map is not rectangular: row has {n} columns, expected {width}"),
                });
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' | 'G' => {
                        let slot = if ch == 'S' { &mut start } else { &mut goal };
                        if let Some((r0, c0)) = *slot {
                            return Err(Error::MazeLoad {
                                row: r,
                                col: c,
                                msg: format!("second `{ch}` (first at row {r0}, col {c0})"),
                            });
                        }
                        *slot = Some((r, c));
                        walls.push(false);
                    }
                    other => {
                        return Err(Error::MazeLoad {
                            row: r,
                            col: c,
                            msg: format!("unexpected character {other:?}"),
                        })
                    }
                }
            }
        }

        let (sr, sc) = start.ok_or(Error::MazeLoad {
            row: 0,
            col: 0,
            msg: "no start cell `S`".into(),
        })?;
        let (gr, gc) = goal.ok_or(Error::MazeLoad {
            row: 0,
            col: 0,
            msg: "no goal cell `G`".into(),
        })?;

        for r in 0..height {
            for c in 0..width {
                let border = r == 0 || c == 0 || r == height - 1 || c == width - 1;
                if border && !walls[r * width + c] {
                    return Err(Error::MazeLoad {
                        row: r,
                        col: c,
                        msg: "border cell is not a wall".into(),
                    });
                }
            }
        }

        let maze = MazeSpec {
            name: name.to_string(),
            width,
            height,
            walls,
            start: Point::new(sc as f64 + 0.5, sr as f64 + 0.5),
            goal: Point::new(gc as f64 + 0.5, gr as f64 + 0.5),
            goal_radius: DEFAULT_GOAL_RADIUS,
            cell_size: 1.0,
        };
        if !maze.connected((sr, sc), (gr, gc)) {
            return Err(Error::MazeLoad {
                row: gr,
                col: gc,
                msg: format!("goal is unreachable from start at row {sr}, col {sc}"),
            });
        }
        Ok(maze)
    }

    fn connected(&self, from: (usize, usize), to: (usize, usize)) -> bool {
        let mut seen = vec![false; self.walls.len()];
        let mut stack = vec![from];
        seen[from.0 * self.width + from.1] = true;
        while let Some((r, c)) = stack.pop() {
            if (r, c) == to {
                return true;
            }
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if self.is_wall(nr, nc) {
                    continue;
                }
                let i = nr as usize * self.width + nc as usize;
                if !seen[i] {
                    seen[i] = true;
                    stack.push((nr as usize, nc as usize));
                }
            }
        }
        false
    }

    /// Out-of-bounds cells count as walls.
    pub fn is_wall(&self, row: i64, col: i64) -> bool {
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            return true;
        }
        self.walls[row as usize * self.width + col as usize]
    }

    pub fn cell_of(&self, p: Point) -> (i64, i64) {
        (p.y.floor() as i64, p.x.floor() as i64)
    }

    pub fn is_free_point(&self, p: Point) -> bool {
        let (r, c) = self.cell_of(p);
        !self.is_wall(r, c)
    }

    pub fn start_cell(&self) -> (usize, usize) {
        (self.start.y as usize, self.start.x as usize)
    }

    pub fn goal_cell(&self) -> (usize, usize) {
        (self.goal.y as usize, self.goal.x as usize)
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| !self.walls[r * self.width + c])
    }

    /// Renders back to the ASCII format.
    pub fn to_ascii(&self) -> String {
        let (sr, sc) = self.start_cell();
        let (gr, gc) = self.goal_cell();
        let mut s = String::new();
        for r in 0..self.height {
            for c in 0..self.width {
                s.push(if (r, c) == (sr, sc) {
                    'S'
                } else if (r, c) == (gr, gc) {
                    'G'
                } else if self.walls[r * self.width + c] {
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
