use std::collections::VecDeque;

use super::map::{GridMap, Pos, DIRECTIONS};
use crate::error::{Error, Result};

/// 4-neighbour shortest-path distance from every cell to one goal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceField {
    size: usize,
    dist: Vec<u32>,
}

impl DistanceField {
    pub const UNREACHABLE: u32 = u32::MAX;

    pub fn size(&self) -> usize {
        self.size
    }

    /// Distance at `p`, `None` when unreachable or blocked.
    pub fn get(&self, p: Pos) -> Option<u32> {
        let d = self.dist[p.row * self.size + p.col];
        (d != Self::UNREACHABLE).then_some(d)
    }

    pub fn at(&self, row: i64, col: i64) -> Option<u32> {
        if row < 0 || col < 0 || row >= self.size as i64 || col >= self.size as i64 {
            return None;
        }
        self.get(Pos::new(row as usize, col as usize))
    }

    pub fn raw(&self) -> &[u32] {
        &self.dist
    }
}

/// Breadth-first search outward from `goal`.
pub fn distance_field(map: &GridMap, goal: Pos) -> Result<DistanceField> {
    if goal.row >= map.size() || goal.col >= map.size() || map.is_obstacle(goal) {
        return Err(Error::GoalOnObstacle(goal.row, goal.col));
    }
    let size = map.size();
    let mut dist = vec![DistanceField::UNREACHABLE; size * size];
    dist[map.idx(goal)] = 0;
    let mut queue = VecDeque::from([goal]);
    while let Some(p) = queue.pop_front() {
        let d = dist[map.idx(p)];
        for delta in DIRECTIONS {
            let Some(q) = map.offset(p, delta) else {
                continue;
            };
            let j = map.idx(q);
            if !map.cells()[j] && dist[j] == DistanceField::UNREACHABLE {
                dist[j] = d + 1;
                queue.push_back(q);
            }
        }
    }
    Ok(DistanceField { size, dist })
}
