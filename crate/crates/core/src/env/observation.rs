use super::distance::DistanceField;
use super::map::{GridMap, Pos, DIRECTIONS};
use crate::error::{Error, Result};

/// Number of observation planes.
pub const CHANNELS: usize = 6;
pub const OBSTACLE_CHANNEL: usize = 0;
pub const AGENT_CHANNEL: usize = 1;
/// First of the four heuristic planes (up, down, left, right).
pub const HEURISTIC_CHANNEL: usize = 2;

/// Another agent inside the field of view, in FOV coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Neighbor {
    pub row: usize,
    pub col: usize,
    pub agent: usize,
}

/// An agent-centred `fov`×`fov`×6 binary window.
///
/// Stored channel-major (`[channel][row][col]`) so it feeds a convolution
/// without reshuffling; [`Observation::shape`] still reports the
/// row/col/channel extents.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    fov: usize,
    bits: Vec<u8>,
}

impl Observation {
    pub fn zeros(fov: usize) -> Self {
        assert!(fov % 2 == 1, "field of view must be odd, got {fov}");
        Self {
            fov,
            bits: vec![0; CHANNELS * fov * fov],
        }
    }

    /// Builds from channel-major 0/1 values.
    pub fn from_bits(fov: usize, bits: Vec<u8>) -> Result<Self> {
        if fov.is_multiple_of(2)
            || bits.len() != CHANNELS * fov * fov
            || bits.iter().any(|&b| b > 1)
        {
            return Err(Error::Shape {
                op: "observation",
                detail: format!("{} values for a {fov}×{fov}×{CHANNELS} window", bits.len()),
            });
        }
        Ok(Self { fov, bits })
    }

    pub fn fov(&self) -> usize {
        self.fov
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.fov, self.fov, CHANNELS]
    }

    pub fn center(&self) -> usize {
        self.fov / 2
    }

    fn offset(&self, row: usize, col: usize, ch: usize) -> usize {
        (ch * self.fov + row) * self.fov + col
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> u8 {
        self.bits[self.offset(row, col, ch)]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, on: bool) {
        let i = self.offset(row, col, ch);
        self.bits[i] = on as u8;
    }

    /// Channel-major 0/1 values.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Appends the values as floats, channel-major.
    pub fn extend_f32(&self, out: &mut Vec<f32>) {
        out.extend(self.bits.iter().map(|&b| b as f32));
    }

    /// FOV cells holding another agent, row-major order.
    pub fn agent_cells(&self) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for r in 0..self.fov {
            for c in 0..self.fov {
                if self.get(r, c, AGENT_CHANNEL) == 1 {
                    cells.push((r, c));
                }
            }
        }
        cells
    }
}

/// Observation of agent `agent` given every agent's position and the
/// distance field towards its own goal.
pub fn build_observation(
    map: &GridMap,
    positions: &[Pos],
    agent: usize,
    field: &DistanceField,
    fov: usize,
) -> Observation {
    let mut obs = Observation::zeros(fov);
    let half = (fov / 2) as i64;
    let me = positions[agent];
    let (r0, c0) = (me.row as i64 - half, me.col as i64 - half);
    for fr in 0..fov {
        for fc in 0..fov {
            let (r, c) = (r0 + fr as i64, c0 + fc as i64);
            if !map.is_free_at(r, c) {
                obs.set(fr, fc, OBSTACLE_CHANNEL, true);
                continue;
            }
            let Some(here) = field.at(r, c) else { continue };
            for (k, (dr, dc)) in DIRECTIONS.into_iter().enumerate() {
                let (nr, nc) = (r + dr, c + dc);
                if map.is_free_at(nr, nc) && field.at(nr, nc).is_some_and(|d| d + 1 == here) {
                    obs.set(fr, fc, HEURISTIC_CHANNEL + k, true);
                }
            }
        }
    }
    for nb in neighbors(positions, agent, fov) {
        obs.set(nb.row, nb.col, AGENT_CHANNEL, true);
    }
    obs
}

/// Other agents inside `agent`'s window, sorted by FOV (row, col).
pub fn neighbors(positions: &[Pos], agent: usize, fov: usize) -> Vec<Neighbor> {
    let half = (fov / 2) as i64;
    let me = positions[agent];
    let mut out: Vec<Neighbor> = positions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != agent)
        .filter_map(|(j, p)| {
            let dr = p.row as i64 - me.row as i64;
            let dc = p.col as i64 - me.col as i64;
            (dr.abs() <= half && dc.abs() <= half).then(|| Neighbor {
                row: (dr + half) as usize,
                col: (dc + half) as usize,
                agent: j,
            })
        })
        .collect();
    out.sort();
    out
}
