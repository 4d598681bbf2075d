use rand::Rng;
use rand_distr::{Distribution, Triangular};

use crate::error::{Error, Result};

/// Grid cell coordinate, row-major, 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

/// The five joint-step choices, in network output order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// (row, col) offset.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay => (0, 0),
        }
    }
}

/// Four movement directions, ordered like the heuristic channels.
pub const DIRECTIONS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Square obstacle grid; `true` marks an obstacle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMap {
    size: usize,
    cells: Vec<bool>,
}

impl GridMap {
    pub fn new(size: usize, cells: Vec<bool>) -> Result<Self> {
        if size == 0 || cells.len() != size * size {
            return Err(Error::InvalidInstance(format!(
                "{} cells for a {size}×{size} map",
                cells.len()
            )));
        }
        Ok(Self { size, cells })
    }

    pub fn empty(size: usize) -> Self {
        Self {
            size,
            cells: vec![false; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn idx(&self, p: Pos) -> usize {
        p.row * self.size + p.col
    }

    pub fn contains(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && row < self.size as i64 && col < self.size as i64
    }

    pub fn is_obstacle(&self, p: Pos) -> bool {
        self.cells[self.idx(p)]
    }

    /// In-bounds and not an obstacle.
    pub fn is_free_at(&self, row: i64, col: i64) -> bool {
        self.contains(row, col) && !self.cells[row as usize * self.size + col as usize]
    }

    pub fn set_obstacle(&mut self, p: Pos, blocked: bool) {
        let i = self.idx(p);
        self.cells[i] = blocked;
    }

    pub fn free_cells(&self) -> Vec<Pos> {
        (0..self.size * self.size)
            .filter(|&i| !self.cells[i])
            .map(|i| Pos::new(i / self.size, i % self.size))
            .collect()
    }

    pub fn density(&self) -> f64 {
        self.cells.iter().filter(|&&c| c).count() as f64 / self.cells.len() as f64
    }

    /// Step from `p` by `delta`, if the result lies on the map.
    pub fn offset(&self, p: Pos, delta: (i64, i64)) -> Option<Pos> {
        let (r, c) = (p.row as i64 + delta.0, p.col as i64 + delta.1);
        self.contains(r, c)
            .then(|| Pos::new(r as usize, c as usize))
    }

    /// 4-connected component label per cell; obstacles get `u32::MAX`.
    pub fn components(&self) -> Vec<u32> {
        let mut label = vec![u32::MAX; self.cells.len()];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..self.cells.len() {
            if self.cells[start] || label[start] != u32::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let p = Pos::new(i / self.size, i % self.size);
                for d in DIRECTIONS {
                    if let Some(q) = self.offset(p, d) {
                        let j = self.idx(q);
                        if !self.cells[j] && label[j] == u32::MAX {
                            label[j] = next;
                            stack.push(j);
                        }
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// Obstacle density for a training map: triangular on [0, 0.5], mode 0.33.
pub fn sample_density<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Triangular::new(0.0, 0.5, 0.33)
        .expect("valid triangular parameters")
        .sample(rng)
}

/// Map whose cells are independent obstacles with probability `density`.
pub fn generate_map_with_density<R: Rng + ?Sized>(
    size: usize,
    density: f64,
    rng: &mut R,
) -> GridMap {
    let cells = (0..size * size)
        .map(|_| rng.gen::<f64>() < density)
        .collect();
    GridMap { size, cells }
}

/// Random training map with a triangular-distributed obstacle density.
pub fn generate_map<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<GridMap> {
    if size < 4 {
        return Err(Error::InvalidInstance(format!(
            "map size {size} is below the minimum of 4"
        )));
    }
    let density = sample_density(rng);
    Ok(generate_map_with_density(size, density, rng))
}
