use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use super::map::{GridMap, Pos};
use crate::error::{Error, Result};

/// Attempts per agent before instance generation gives up.
const MAX_RESAMPLES: usize = 1000;

/// A map plus one start and one goal per agent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    map: GridMap,
    starts: Vec<Pos>,
    goals: Vec<Pos>,
}

impl Instance {
    /// Validates that all `2n` cells are free, distinct, and every goal is
    /// reachable from its start.
    pub fn new(map: GridMap, starts: Vec<Pos>, goals: Vec<Pos>) -> Result<Self> {
        if starts.len() != goals.len() {
            return Err(Error::InvalidInstance(format!(
                "{} starts but {} goals",
                starts.len(),
                goals.len()
            )));
        }
        let mut seen = HashSet::new();
        for &p in starts.iter().chain(&goals) {
            if p.row >= map.size() || p.col >= map.size() {
                return Err(Error::InvalidInstance(format!(
                    "({}, {}) lies outside the map",
                    p.row, p.col
                )));
            }
            if map.is_obstacle(p) {
                return Err(Error::InvalidInstance(format!(
                    "({}, {}) is an obstacle",
                    p.row, p.col
                )));
            }
            if !seen.insert(p) {
                return Err(Error::InvalidInstance(format!(
                    "({}, {}) is used twice",
                    p.row, p.col
                )));
            }
        }
        let comp = map.components();
        for (i, (&s, &g)) in starts.iter().zip(&goals).enumerate() {
            if comp[map.idx(s)] != comp[map.idx(g)] {
                return Err(Error::InvalidInstance(format!(
                    "goal of agent {i} is unreachable from its start"
                )));
            }
        }
        Ok(Self { map, starts, goals })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn starts(&self) -> &[Pos] {
        &self.starts
    }

    pub fn goals(&self) -> &[Pos] {
        &self.goals
    }

    pub fn num_agents(&self) -> usize {
        self.starts.len()
    }

    /// Text form: `m n`, then `m` rows of `.`/`#`, then `n` lines
    /// `start_row start_col goal_row goal_col`.
    pub fn to_text(&self) -> String {
        let m = self.map.size();
        let mut out = format!("{m} {}\n", self.num_agents());
        for r in 0..m {
            for c in 0..m {
                out.push(if self.map.is_obstacle(Pos::new(r, c)) {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        for (s, g) in self.starts.iter().zip(&self.goals) {
            let _ = writeln!(out, "{} {} {} {}", s.row, s.col, g.row, g.col);
        }
        out
    }

    /// Parses [`Instance::to_text`] output. `path` only labels errors.
    pub fn from_text(text: &str, path: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (ln, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| err(ln, format!("expected integers, got `{header}`")))
            })
            .collect::<Result<_>>()?;
        let [m, n] = nums[..] else {
            return Err(err(ln, format!("expected `m n`, got `{header}`")));
        };
        let mut cells = Vec::with_capacity(m * m);
        for r in 0..m {
            let (ln, row) = lines
                .next()
                .ok_or_else(|| err(ln + 1 + r, "missing map row".into()))?;
            if row.chars().count() != m {
                return Err(err(
                    ln,
                    format!("map row has {} cells, expected {m}", row.chars().count()),
                ));
            }
            for ch in row.chars() {
                cells.push(match ch {
                    '.' => false,
                    '#' => true,
                    other => return Err(err(ln, format!("unexpected map character `{other}`"))),
                });
            }
        }
        let map = GridMap::new(m, cells)?;
        let (mut starts, mut goals) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for a in 0..n {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| err(m + 2 + a, format!("missing agent line {a}")))?;
            let v: Vec<usize> = line
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| err(ln, format!("expected integers, got `{line}`")))
                })
                .collect::<Result<_>>()?;
            let [sr, sc, gr, gc] = v[..] else {
                return Err(err(ln, format!("expected `sx sy gx gy`, got `{line}`")));
            };
            starts.push(Pos::new(sr, sc));
            goals.push(Pos::new(gr, gc));
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(err(ln, format!("trailing content `{extra}`")));
        }
        Self::new(map, starts, goals)
    }
}

/// Picks `n` start/goal pairs on `map`. Each agent's start is resampled
/// until its connected component still holds an unused cell for the goal.
pub fn make_instance<R: Rng + ?Sized>(map: &GridMap, n: usize, rng: &mut R) -> Result<Instance> {
    let free = map.free_cells();
    if free.len() < 2 * n {
        return Err(Error::InstanceGeneration(format!(
            "{} free cells cannot hold {n} agents ({} positions)",
            free.len(),
            2 * n
        )));
    }
    let comp = map.components();
    let mut used = vec![false; map.size() * map.size()];
    let mut by_comp: std::collections::HashMap<u32, Vec<Pos>> = Default::default();
    for &p in &free {
        by_comp.entry(comp[map.idx(p)]).or_default().push(p);
    }
    let (mut starts, mut goals) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for agent in 0..n {
        let mut placed = false;
        for _ in 0..MAX_RESAMPLES {
            let &start = free.choose(rng).expect("free cells exist");
            if used[map.idx(start)] {
                continue;
            }
            let candidates: Vec<Pos> = by_comp[&comp[map.idx(start)]]
                .iter()
                .copied()
                .filter(|&p| p != start && !used[map.idx(p)])
                .collect();
            let Some(&goal) = candidates.choose(rng) else {
                continue;
            };
            used[map.idx(start)] = true;
            used[map.idx(goal)] = true;
            starts.push(start);
            goals.push(goal);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::InstanceGeneration(format!(
                "no reachable start/goal pair for agent {agent} after {MAX_RESAMPLES} resamples"
            )));
        }
    }
    Instance::new(map.clone(), starts, goals)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::env::map::generate_map_with_density;
    use crate::oracles::flood_fill_reference;

    #[test]
    fn single_agent_on_open_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inst = make_instance(&GridMap::empty(4), 1, &mut rng).unwrap();
        assert_ne!(inst.starts()[0], inst.goals()[0]);
    }

    #[test]
    fn isolated_cells_cannot_host_an_agent() {
        // two free cells, each walled off from the other
        let mut map = GridMap::new(4, vec![true; 16]).unwrap();
        map.set_obstacle(Pos::new(0, 0), false);
        map.set_obstacle(Pos::new(3, 3), false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            make_instance(&map, 1, &mut rng),
            Err(Error::InstanceGeneration(_))
        ));
    }

    #[test]
    fn too_few_free_cells() {
        let map = GridMap::new(4, vec![true; 16]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            make_instance(&map, 1, &mut rng),
            Err(Error::InstanceGeneration(_))
        ));
    }

    #[test]
    fn eight_agents_are_distinct_and_reachable() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let map = generate_map_with_density(10, 0.3, &mut rng);
        let inst = make_instance(&map, 8, &mut rng).unwrap();
        let all: HashSet<Pos> = inst.starts().iter().chain(inst.goals()).copied().collect();
        assert_eq!(all.len(), 16);
        for (s, g) in inst.starts().iter().zip(inst.goals()) {
            let d = flood_fill_reference(map.cells(), 10, (g.row, g.col));
            assert!(d[s.row * 10 + s.col].is_some());
            assert!(!map.is_obstacle(*s) && !map.is_obstacle(*g));
        }
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = generate_map_with_density(9, 0.2, &mut rng);
        let inst = make_instance(&map, 3, &mut rng).unwrap();
        let back = Instance::from_text(&inst.to_text(), "x").unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "4 1\n....\n..x.\n....\n....\n0 0 3 3\n";
        match Instance::from_text(bad, "f.txt") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let unreachable = "4 1\n.#..\n##..\n....\n....\n0 0 3 3\n";
        assert!(matches!(
            Instance::from_text(unreachable, "f"),
            Err(Error::InvalidInstance(_))
        ));
    }
}
