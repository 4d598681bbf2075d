use rand::Rng;

use super::config::ScopeMode;
use super::network::{observation_batch, position_batch, DccModel};
use super::scope::{argmax, mask_neighbor, rr_n2_scope, CommScope};
use crate::env::{Action, Neighbor, Observation};
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamStore, Tensor, Var};

/// Everything one joint decision produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    /// Executed actions (greedy or exploratory).
    pub actions: Vec<Action>,
    /// Argmax of the final Q values.
    pub greedy: Vec<usize>,
    /// Argmax of the Q head applied to the encoder output alone.
    pub temp_actions: Vec<usize>,
    pub scope: CommScope,
    pub q: Vec<[f32; Action::COUNT]>,
    /// Round-two messages, carried to the next step.
    pub hidden: Vec<Vec<f32>>,
}

impl Decision {
    /// Request-reply pairs this step.
    pub fn comm_count(&self) -> usize {
        self.scope.count()
    }
}

fn q_rows(g: &Graph, q: Var) -> Vec<[f32; Action::COUNT]> {
    let t = g.value(q);
    (0..t.rows())
        .map(|r| t.row(r).try_into().expect("five action values"))
        .collect()
}

fn hidden_tensor(model: &DccModel, hidden: &[&[f32]]) -> Result<Tensor> {
    let width = model.hidden();
    if let Some(bad) = hidden.iter().find(|h| h.len() != width) {
        return Err(Error::Shape {
            op: "hidden state",
            detail: format!("width {}, model expects {width}", bad.len()),
        });
    }
    Tensor::new(vec![hidden.len(), width], hidden.concat())
}

/// Encodes every agent plus, for each (agent, neighbour) pair, the agent's
/// observation with that neighbour hidden by `mask`. An agent requests a
/// neighbour exactly when hiding it changes the agent's greedy action.
/// Returns the unmasked encodings, their greedy actions and the scope.
fn encode_with_scopes<F>(
    model: &DccModel,
    g: &mut Graph,
    obs: &[Observation],
    neighbors: &[Vec<Neighbor>],
    hidden: &[Vec<f32>],
    mode: ScopeMode,
    mask: F,
) -> Result<(Var, Vec<usize>, Vec<Vec<usize>>)>
where
    F: Fn(&Observation, &Neighbor) -> Result<Observation>,
{
    let n = obs.len();
    let mut masked = Vec::new();
    let mut owners = Vec::new();
    if mode == ScopeMode::Dcc {
        for (i, nbs) in neighbors.iter().enumerate() {
            for nb in nbs {
                masked.push(mask(&obs[i], nb)?);
                owners.push((i, nb.agent));
            }
        }
    }
    let rows: Vec<&Observation> = obs.iter().chain(&masked).collect();
    let hid: Vec<&[f32]> = hidden
        .iter()
        .map(Vec::as_slice)
        .chain(owners.iter().map(|&(i, _)| hidden[i].as_slice()))
        .collect();
    let x = g.input(observation_batch(&rows)?);
    let h = g.input(hidden_tensor(model, &hid)?);
    let e_all = model.encode(g, x, h)?;
    let q_all = model.q_values(g, e_all)?;
    let temp: Vec<usize> = q_rows(g, q_all).iter().map(|q| argmax(q)).collect();
    let requests = match mode {
        ScopeMode::Dcc => {
            let mut request = vec![Vec::new(); n];
            for (k, &(i, j)) in owners.iter().enumerate() {
                if temp[n + k] != temp[i] {
                    request[i].push(j);
                }
            }
            request
        }
        ScopeMode::RrN2 => {
            let fov = obs.first().map(Observation::fov).unwrap_or(1);
            neighbors.iter().map(|nbs| rr_n2_scope(nbs, fov)).collect()
        }
    };
    let e = if masked.is_empty() {
        e_all
    } else {
        g.gather_rows(e_all, &(0..n).collect::<Vec<_>>())?
    };
    Ok((e, temp[..n].to_vec(), requests))
}

fn check_inputs(
    obs: &[Observation],
    neighbors: &[Vec<Neighbor>],
    hidden: &[Vec<f32>],
) -> Result<()> {
    if neighbors.len() != obs.len() || hidden.len() != obs.len() {
        return Err(Error::Shape {
            op: "act",
            detail: format!(
                "{} observations, {} neighbour lists, {} hidden states",
                obs.len(),
                neighbors.len(),
                hidden.len()
            ),
        });
    }
    Ok(())
}

/// Decision-causal request lists for a set of agents with a custom masking
/// function (the default is [`mask_neighbor`]). Neighbour indices are
/// taken as given, so the agents need not form a whole environment.
pub fn comm_scopes_with<F>(
    model: &DccModel,
    store: &ParamStore,
    obs: &[Observation],
    neighbors: &[Vec<Neighbor>],
    hidden: &[Vec<f32>],
    mask: F,
) -> Result<Vec<Vec<usize>>>
where
    F: Fn(&Observation, &Neighbor) -> Result<Observation>,
{
    check_inputs(obs, neighbors, hidden)?;
    if obs.is_empty() {
        return Ok(Vec::new());
    }
    let mut g = Graph::inference(store);
    let (_, _, requests) =
        encode_with_scopes(model, &mut g, obs, neighbors, hidden, ScopeMode::Dcc, mask)?;
    Ok(requests)
}

/// Neighbours of a single agent whose removal flips its greedy action.
pub fn comm_scope(
    model: &DccModel,
    store: &ParamStore,
    obs: &Observation,
    neighbors: &[Neighbor],
    hidden: &[f32],
) -> Result<Vec<usize>> {
    let mut requests = comm_scopes_with(
        model,
        store,
        std::slice::from_ref(obs),
        &[neighbors.to_vec()],
        &[hidden.to_vec()],
        |o, nb| mask_neighbor(o, nb.row, nb.col),
    )?;
    Ok(requests.swap_remove(0))
}

/// Greedy action of the Q head applied directly to message `e`.
pub fn temp_action(model: &DccModel, store: &ParamStore, e: &[f32]) -> Result<usize> {
    let mut g = Graph::inference(store);
    let x = g.input(Tensor::new(vec![1, e.len()], e.to_vec())?);
    let q = model.q_values(&mut g, x)?;
    Ok(argmax(g.value(q).data()))
}

/// One joint decision for every agent of one environment.
#[allow(clippy::too_many_arguments)]
pub fn act<R: Rng + ?Sized>(
    model: &DccModel,
    store: &ParamStore,
    obs: &[Observation],
    neighbors: &[Vec<Neighbor>],
    hidden: &[Vec<f32>],
    epsilon: f64,
    mode: ScopeMode,
    rng: &mut R,
) -> Result<Decision> {
    check_inputs(obs, neighbors, hidden)?;
    if obs.is_empty() {
        return Ok(Decision {
            actions: vec![],
            greedy: vec![],
            temp_actions: vec![],
            scope: CommScope::empty(0),
            q: vec![],
            hidden: vec![],
        });
    }
    let mut g = Graph::inference(store);
    let (e, temp_actions, requests) =
        encode_with_scopes(model, &mut g, obs, neighbors, hidden, mode, |o, nb| {
            mask_neighbor(o, nb.row, nb.col)
        })?;
    if let Some(&target) = requests.iter().flatten().find(|&&j| j >= obs.len()) {
        let agent = requests
            .iter()
            .position(|r| r.contains(&target))
            .expect("found above");
        return Err(Error::NotNeighbor { agent, target });
    }
    let scope = CommScope::from_requests(requests);
    scope.check_neighbors(neighbors)?;
    let refs: Vec<&Observation> = obs.iter().collect();
    let pos = g.input(position_batch(&refs)?);
    let l = model.embed_positions(&mut g, pos)?;
    let (_, e2) = model.communicate(&mut g, e, l, &scope)?;
    let qv = model.q_values(&mut g, e2)?;
    let q = q_rows(&g, qv);
    let greedy: Vec<usize> = q.iter().map(|row| argmax(row)).collect();
    let actions = greedy
        .iter()
        .map(|&a| {
            let idx = if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                rng.gen_range(0..Action::COUNT)
            } else {
                a
            };
            Action::from_index(idx).expect("index below action count")
        })
        .collect();
    let e2t = g.value(e2);
    let hidden = (0..e2t.rows()).map(|r| e2t.row(r).to_vec()).collect();
    Ok(Decision {
        actions,
        greedy,
        temp_actions,
        scope,
        q,
        hidden,
    })
}
