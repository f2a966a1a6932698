use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::grid::{MazeSpec, Point};
use crate::error::{Error, Result};

/// Shortest free-space distance to the goal at every cell center.
///
/// Walls and cells that cannot reach the goal hold `f64::INFINITY`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistField {
    pub width: usize,
    pub height: usize,
    /// Cells per meter.
    pub resolution: f64,
    values: Vec<f64>,
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from the goal cell over free cells, 8-connected with diagonal
/// cost √2. A diagonal move needs both orthogonal neighbors free.
pub fn distance_field(maze: &MazeSpec) -> DistField {
    let (w, h) = (maze.width, maze.height);
    let mut values = vec![f64::INFINITY; w * h];
    let (gr, gc) = maze.goal_cell();
    let gi = gr * w + gc;
    values[gi] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry(0.0, gi));

    while let Some(Entry(d, i)) = heap.pop() {
        if d > values[i] {
            continue;
        }
        let (r, c) = ((i / w) as i64, (i % w) as i64);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r + dr, c + dc);
                if maze.is_wall(nr, nc) {
                    continue;
                }
                let diagonal = dr != 0 && dc != 0;
                if diagonal && (maze.is_wall(r + dr, c) || maze.is_wall(r, c + dc)) {
                    continue;
                }
                let step = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
                let nd = d + step * maze.cell_size;
                let ni = nr as usize * w + nc as usize;
                if nd < values[ni] {
                    values[ni] = nd;
                    heap.push(Entry(nd, ni));
                }
            }
        }
    }

    DistField {
        width: w,
        height: h,
        resolution: 1.0 / maze.cell_size,
        values,
    }
}

impl DistField {
    pub fn at_cell(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    fn cell_value(&self, row: i64, col: i64) -> Option<f64> {
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            return None;
        }
        let v = self.values[row as usize * self.width + col as usize];
        v.is_finite().then_some(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Bilinear interpolation between the four surrounding cell centers.
    /// Walled neighbors are dropped and the remaining weights renormalized.
    pub fn shortest_distance(&self, p: Point) -> Result<f64> {
        let fx = p.x * self.resolution - 0.5;
        let fy = p.y * self.resolution - 0.5;
        let (c0, r0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - c0, fy - r0);
        let (c0, r0) = (c0 as i64, r0 as i64);

        let own = self.cell_value((p.y * self.resolution).floor() as i64, (p.x * self.resolution).floor() as i64);
        if own.is_none() {
            return Err(Error::Query(format!(
                "point ({:.4}, {:.4}) is inside a wall",
                p.x, p.y
            )));
        }

        let corners = [
            (r0, c0, (1.0 - tx) * (1.0 - ty)),
            (r0, c0 + 1, tx * (1.0 - ty)),
            (r0 + 1, c0, (1.0 - tx) * ty),
            (r0 + 1, c0 + 1, tx * ty),
        ];
        let (mut acc, mut wsum) = (0.0, 0.0);
        for (r, c, w) in corners {
            if let Some(v) = self.cell_value(r, c) {
                acc += w * v;
                wsum += w;
            }
        }
        Ok(acc / wsum)
    }
}
