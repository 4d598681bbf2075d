use crate::env::{Neighbor, Observation, AGENT_CHANNEL};
use crate::error::{Error, Result};

/// Who asks whom in one joint step.
///
/// `request[i]` is the set of agents `i` sends a request to; `receive[j]`
/// is the dual set of agents asking `j`. Both are sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct CommScope {
    request: Vec<Vec<usize>>,
    receive: Vec<Vec<usize>>,
}

impl CommScope {
    pub fn empty(agents: usize) -> Self {
        Self::from_requests(vec![Vec::new(); agents])
    }

    pub fn from_requests(mut request: Vec<Vec<usize>>) -> Self {
        let n = request.len();
        let mut receive = vec![Vec::new(); n];
        for (i, targets) in request.iter_mut().enumerate() {
            targets.sort_unstable();
            targets.dedup();
            for &j in targets.iter() {
                receive[j].push(i);
            }
        }
        Self { request, receive }
    }

    pub fn agents(&self) -> usize {
        self.request.len()
    }

    pub fn requests(&self) -> &[Vec<usize>] {
        &self.request
    }

    pub fn receivers(&self) -> &[Vec<usize>] {
        &self.receive
    }

    /// Request-reply pairs, counted from the request side.
    pub fn count(&self) -> usize {
        self.request.iter().map(Vec::len).sum()
    }

    /// The same count taken from the receiving side.
    pub fn receive_count(&self) -> usize {
        self.receive.iter().map(Vec::len).sum()
    }

    /// Rejects requests to agents outside the requester's field of view.
    pub fn check_neighbors(&self, neighbors: &[Vec<Neighbor>]) -> Result<()> {
        for (agent, targets) in self.request.iter().enumerate() {
            for &target in targets {
                if target == agent || !neighbors[agent].iter().any(|nb| nb.agent == target) {
                    return Err(Error::NotNeighbor { agent, target });
                }
            }
        }
        Ok(())
    }

    /// Concatenates scopes of independent environments, renumbering agents.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a CommScope>) -> Self {
        let mut request = Vec::new();
        for part in parts {
            let base = request.len();
            request.extend(
                part.request
                    .iter()
                    .map(|t| t.iter().map(|&j| j + base).collect()),
            );
        }
        Self::from_requests(request)
    }
}

/// Copy of `obs` with the agent at FOV cell (`row`, `col`) hidden.
pub fn mask_neighbor(obs: &Observation, row: usize, col: usize) -> Result<Observation> {
    if row >= obs.fov() || col >= obs.fov() || obs.get(row, col, AGENT_CHANNEL) == 0 {
        return Err(Error::MaskEmptyCell(row, col));
    }
    let mut out = obs.clone();
    out.set(row, col, AGENT_CHANNEL, false);
    Ok(out)
}

/// The two neighbours closest to the centre by Manhattan distance, ties to
/// the smaller (row, col).
pub fn rr_n2_scope(neighbors: &[Neighbor], fov: usize) -> Vec<usize> {
    let c = fov / 2;
    let mut ranked: Vec<(usize, usize, usize, usize)> = neighbors
        .iter()
        .map(|nb| {
            (
                nb.row.abs_diff(c) + nb.col.abs_diff(c),
                nb.row,
                nb.col,
                nb.agent,
            )
        })
        .collect();
    ranked.sort_unstable();
    ranked
        .into_iter()
        .take(2)
        .map(|(_, _, _, agent)| agent)
        .collect()
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nb(row: usize, col: usize, agent: usize) -> Neighbor {
        Neighbor { row, col, agent }
    }

    #[test]
    fn duality_and_counts() {
        let s = CommScope::from_requests(vec![vec![1, 2], vec![], vec![0]]);
        assert_eq!(s.receivers(), &[vec![2], vec![0], vec![0]]);
        assert_eq!(s.count(), 3);
        assert_eq!(s.receive_count(), 3);
    }

    #[test]
    fn concat_offsets_agents() {
        let a = CommScope::from_requests(vec![vec![1], vec![]]);
        let b = CommScope::from_requests(vec![vec![], vec![0]]);
        let c = CommScope::concat([&a, &b]);
        assert_eq!(c.requests(), &[vec![1], vec![], vec![], vec![2]]);
    }

    #[test]
    fn non_neighbor_request_rejected() {
        let s = CommScope::from_requests(vec![vec![1], vec![]]);
        let nbs = vec![vec![], vec![]];
        assert!(matches!(
            s.check_neighbors(&nbs),
            Err(Error::NotNeighbor {
                agent: 0,
                target: 1
            })
        ));
        assert!(s.check_neighbors(&[vec![nb(0, 0, 1)], vec![]]).is_ok());
    }

    #[test]
    fn masking() {
        let mut obs = Observation::zeros(5);
        obs.set(0, 1, AGENT_CHANNEL, true);
        obs.set(3, 3, AGENT_CHANNEL, true);
        let m = mask_neighbor(&obs, 0, 1).unwrap();
        assert_eq!(m.agent_cells(), vec![(3, 3)]);
        assert_eq!(obs.agent_cells().len(), 2);
        let only = mask_neighbor(&m, 3, 3).unwrap();
        assert!(only.agent_cells().is_empty());
        assert!(matches!(
            mask_neighbor(&obs, 2, 2),
            Err(Error::MaskEmptyCell(2, 2))
        ));
    }

    #[test]
    fn nearest_two() {
        assert_eq!(rr_n2_scope(&[nb(0, 0, 7)], 5), vec![7]);
        // distances 4, 3, 2, 1 from the centre (2, 2)
        let four = [nb(0, 0, 0), nb(0, 1, 1), nb(1, 1, 2), nb(2, 3, 3)];
        let mut got = rr_n2_scope(&four, 5);
        got.sort();
        assert_eq!(got, vec![2, 3]);
        // all three at distance 1: (1, 2) then (2, 1) win over (2, 3)
        let tie = [nb(2, 3, 0), nb(2, 1, 1), nb(1, 2, 2)];
        assert_eq!(rr_n2_scope(&tie, 5), vec![2, 1]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0; 5]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 0.0, 0.0, 0.0]), 1);
        assert_eq!(argmax(&[3.0, 5.0, 5.0, 1.0, 5.0]), 1);
    }
}
