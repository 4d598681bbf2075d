//! Randomised checks of the engine against the independent references in
//! [`crate::oracles`]. Shared by `dcc selftest` and the acceptance harness.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{
    distance_field, generate_map_with_density, make_instance, Action, GridMap, MapfEnv,
    Observation, Pos, AGENT_CHANNEL, HEURISTIC_CHANNEL, REWARD_COLLISION, REWARD_FINISH,
    REWARD_MOVE, REWARD_STAY_OFF_GOAL, REWARD_STAY_ON_GOAL,
};
use crate::error::Result;
use crate::model::{
    act, observation_batch, position_batch, temp_action, CommScope, DccModel, ModelConfig,
    ScopeMode,
};
use crate::nn::gradcheck::{check_gradients, GradCheckOptions};
use crate::nn::{Graph, GruCell, MultiHeadAttention, ParamId, ParamStore, Tensor};
use crate::oracles::{
    attention_reference, dueling_reference, flood_fill_reference, heuristic_bits_reference,
    n_step_return_reference, resolve_moves_reference, Mat,
};
use crate::training::{n_step_returns, Frame, Segment, Task};

/// Outcome of one check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    fn finish(
        name: &'static str,
        start: Instant,
        outcome: Result<std::result::Result<String, String>>,
    ) -> Self {
        let seconds = start.elapsed().as_secs_f64();
        match outcome {
            Ok(Ok(detail)) => Self {
                name,
                passed: true,
                detail,
                seconds,
            },
            Ok(Err(detail)) => Self {
                name,
                passed: false,
                detail,
                seconds,
            },
            Err(e) => Self {
                name,
                passed: false,
                detail: format!("error: {e}"),
                seconds,
            },
        }
    }
}

/// Number of random fixtures per check.
#[derive(Clone, Copy, Debug)]
pub struct Budget {
    pub gradient_trials: usize,
    pub fuzz_steps: usize,
    pub heuristic_maps: usize,
    pub scope_fixtures: usize,
    pub scalar_fixtures: usize,
}

impl Budget {
    /// Quick pass for `dcc selftest`.
    pub fn quick() -> Self {
        Self {
            gradient_trials: 10,
            fuzz_steps: 1000,
            heuristic_maps: 10,
            scope_fixtures: 100,
            scalar_fixtures: 100,
        }
    }

    /// Counts required for acceptance.
    pub fn full() -> Self {
        Self {
            gradient_trials: 100,
            fuzz_steps: 10_000,
            heuristic_maps: 100,
            scope_fixtures: 1000,
            scalar_fixtures: 1000,
        }
    }
}

pub fn run_all(budget: Budget, seed: u64) -> Vec<CheckResult> {
    vec![
        gradients(budget.gradient_trials, seed),
        env_fuzz(budget.fuzz_steps, seed),
        heuristic_channels(budget.heuristic_maps, seed),
        scopes(budget.scope_fixtures, seed),
        scalar_oracles(budget.scalar_fixtures, seed),
    ]
}

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
pub const SCALAR_TOLERANCE: f64 = 1e-5;

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape matches data")
}

fn projection_loss(g: &mut Graph<f64>, y: crate::nn::Var, proj: ParamId) -> Result<crate::nn::Var> {
    let p = g.param(proj);
    let prod = g.mul(y, p)?;
    Ok(g.sum(prod))
}

/// Small network used by the model-level checks.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        fov: 5,
        conv_channels: vec![4, 4],
        kernel: 3,
        hidden: 8,
        pos_embed: 4,
        heads: 2,
        key_dim: 4,
    }
}

/// A small network whose first convolution reacts strongly to the agent
/// channel, so hiding one neighbour often flips the greedy action.
pub fn agent_sensitive_model(seed: u64) -> Result<(DccModel, ParamStore)> {
    let (m, mut store) = DccModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let id = store.find("encoder.conv0.w").expect("conv0 registered");
    let w = store.get_mut(id);
    let (out, inc, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    for o in 0..out {
        for i in 0..k * k {
            w.data_mut()[(o * inc + AGENT_CHANNEL) * k * k + i] *= 40.0;
        }
    }
    Ok((m, store))
}

/// Finite differences against backprop for every layer and the full
/// forward pass.
pub fn gradients(trials: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| -> Result<std::result::Result<String, String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer_opts = GradCheckOptions {
            step: 1e-6,
            per_tensor: None,
            floor: 1e-6,
        };
        let (mut layer_worst, mut e2e_worst) = (0.0f64, 0.0f64);
        for trial in 0..trials {
            let mut layers: Vec<(&str, f64)> = Vec::new();

            let mut s = ParamStore::new();
            let x = s.add("x", rand_tensor(&[3, 4], &mut rng));
            let w = s.add("w", rand_tensor(&[4, 5], &mut rng));
            let b = s.add("b", rand_tensor(&[5], &mut rng));
            let v = s.add("v", rand_tensor(&[3, 1], &mut rng));
            let p = s.add("p", rand_tensor(&[3], &mut rng));
            let r = check_gradients(
                &s.cast(),
                |g| {
                    let (xv, wv, bv) = (g.param(x), g.param(w), g.param(b));
                    let y = g.affine(xv, wv, Some(bv))?;
                    let t = g.tanh(y);
                    let sm = g.softmax(t);
                    let cat = g.concat_cols(&[sm, t])?;
                    let sl = g.slice_cols(cat, 2, 5)?;
                    let ga = g.gather_rows(sl, &[2, 0])?;
                    let sc = g.scatter_rows(sl, &[0, 1], ga)?;
                    let re = g.relu(sc);
                    let sg = g.sigmoid(sc);
                    let mixed = g.add(re, sg)?;
                    let vv = g.param(v);
                    let q = g.dueling(vv, mixed)?;
                    let pick = g.pick_cols(q, &[0, 4, 2])?;
                    projection_loss(g, pick, p)
                },
                &layer_opts,
                &mut rng,
            )?;
            layers.push(("affine/activations/dueling", r.max_rel_err));

            let mut s = ParamStore::new();
            let x = s.add("x", rand_tensor(&[2, 2, 4, 3], &mut rng));
            let w = s.add("w", rand_tensor(&[2, 2, 3, 3], &mut rng));
            let b = s.add("b", rand_tensor(&[2], &mut rng));
            let p = s.add("p", rand_tensor(&[2, 2, 4, 3], &mut rng));
            let r = check_gradients(
                &s.cast(),
                |g| {
                    let (xv, wv, bv) = (g.param(x), g.param(w), g.param(b));
                    let y = g.conv2d(xv, wv, bv, 1)?;
                    projection_loss(g, y, p)
                },
                &layer_opts,
                &mut rng,
            )?;
            layers.push(("conv", r.max_rel_err));

            let mut s = ParamStore::new();
            let cell = GruCell::register(&mut s, "gru", 3, 4, &mut rng);
            for id in [cell.bx, cell.bh] {
                s.get_mut(id)
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-0.5..0.5));
            }
            let x = s.add("x", rand_tensor(&[2, 3], &mut rng));
            let h = s.add("h", rand_tensor(&[2, 4], &mut rng));
            let p = s.add("p", rand_tensor(&[2, 4], &mut rng));
            let r = check_gradients(
                &s.cast(),
                |g| {
                    let (xv, hv) = (g.param(x), g.param(h));
                    let y = cell.forward(g, xv, hv)?;
                    projection_loss(g, y, p)
                },
                &layer_opts,
                &mut rng,
            )?;
            layers.push(("gru", r.max_rel_err));

            let mut s = ParamStore::new();
            let att = MultiHeadAttention::register(&mut s, "att", 4, 5, 2, 2, 3, &mut rng);
            let q = s.add("q", rand_tensor(&[2, 4], &mut rng));
            let kv = s.add("kv", rand_tensor(&[3, 5], &mut rng));
            let p = s.add("p", rand_tensor(&[2, 3], &mut rng));
            let r = check_gradients(
                &s.cast(),
                |g| {
                    let (qv, kvv) = (g.param(q), g.param(kv));
                    let y = att.forward_grouped(g, qv, kvv, &[vec![0, 2], vec![1, 2, 0]])?;
                    projection_loss(g, y, p)
                },
                &layer_opts,
                &mut rng,
            )?;
            layers.push(("attention", r.max_rel_err));

            let mut s = ParamStore::new();
            let x = s.add("x", rand_tensor(&[4], &mut rng));
            let target: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let weights: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..1.0)).collect();
            let r = check_gradients(
                &s.cast(),
                |g| {
                    let xv = g.param(x);
                    g.weighted_squared_error(xv, &target, &weights)
                },
                &layer_opts,
                &mut rng,
            )?;
            layers.push(("weighted squared error", r.max_rel_err));

            for (name, err) in layers {
                layer_worst = layer_worst.max(err);
                if err.is_nan() || err >= LAYER_TOLERANCE {
                    return Ok(Err(format!(
                        "trial {trial}: {name} relative error {err:.3e}"
                    )));
                }
            }

            let err = end_to_end_trial(seed.wrapping_add(trial as u64), &mut rng)?;
            e2e_worst = e2e_worst.max(err);
            if err.is_nan() || err >= END_TO_END_TOLERANCE {
                return Ok(Err(format!(
                    "trial {trial}: end-to-end relative error {err:.3e}"
                )));
            }
        }
        Ok(Ok(format!(
            "{trials} trials, worst layer {layer_worst:.2e}, worst end-to-end {e2e_worst:.2e}"
        )))
    })();
    CheckResult::finish("gradients", start, outcome)
}

fn end_to_end_trial(seed: u64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (m, store) = DccModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let n = rng.gen_range(2..=4);
    let obs: Vec<Observation> = (0..n)
        .map(|_| {
            let count = rng.gen_range(1..4);
            let cells = random_cells(rng, count);
            random_obs(rng, 5, &cells)
        })
        .collect();
    let refs: Vec<&Observation> = obs.iter().collect();
    let requests: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && rng.gen_bool(0.5)).collect())
        .collect();
    let scope = CommScope::from_requests(requests);
    let x = observation_batch::<f64>(&refs)?;
    let p = position_batch::<f64>(&refs)?;
    let h: Vec<f64> = (0..n * 8).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let picks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..Action::COUNT)).collect();
    let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let loss = |g: &mut Graph<f64>| {
        let xv = g.input(x.clone());
        let pv = g.input(p.clone());
        let hv = g.input(Tensor::new(vec![n, 8], h.clone())?);
        let out = m.step(g, xv, pv, hv, &scope)?;
        let picked = g.pick_cols(out.q, &picks)?;
        g.weighted_squared_error(picked, &target, &weights)
    };
    let opts = GradCheckOptions {
        step: 1e-6,
        per_tensor: Some(4),
        floor: 1e-6,
    };
    Ok(check_gradients(&store.cast(), loss, &opts, rng)?.max_rel_err)
}

fn random_cells(rng: &mut impl Rng, count: usize) -> Vec<(usize, usize)> {
    (0..count)
        .map(|_| loop {
            let c = (rng.gen_range(0..5), rng.gen_range(0..5));
            if c != (2, 2) {
                break c;
            }
        })
        .collect()
}

fn random_obs(rng: &mut impl Rng, fov: usize, agents: &[(usize, usize)]) -> Observation {
    let mut obs = Observation::zeros(fov);
    for ch in 0..crate::env::CHANNELS {
        if ch == AGENT_CHANNEL {
            continue;
        }
        for r in 0..fov {
            for c in 0..fov {
                obs.set(r, c, ch, rng.gen_bool(0.3));
            }
        }
    }
    for &(r, c) in agents {
        obs.set(r, c, AGENT_CHANNEL, true);
    }
    obs
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    max_size: usize,
    max_agents: usize,
) -> crate::env::Instance {
    loop {
        let size = rng.gen_range(4..=max_size);
        let map = generate_map_with_density(size, rng.gen_range(0.0..0.4), rng);
        let agents = rng.gen_range(1..=max_agents);
        if let Ok(inst) = make_instance(&map, agents, rng) {
            return inst;
        }
    }
}

/// Random joint actions on random instances; committed states are checked
/// for collisions, rewards against the reward table and moves against the
/// reference resolver.
pub fn env_fuzz(steps: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| -> Result<std::result::Result<String, String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF022);
        let allowed = [
            REWARD_COLLISION,
            REWARD_MOVE,
            REWARD_STAY_ON_GOAL,
            REWARD_STAY_OFF_GOAL,
            REWARD_FINISH,
        ];
        let (mut done, mut episodes, mut collisions_resolved) = (0, 0, 0);
        while done < steps {
            let inst = random_instance(&mut rng, 20, 16);
            let mut env = MapfEnv::new(inst, 64, 5)?;
            episodes += 1;
            while !env.is_done() && done < steps {
                let prev: Vec<Pos> = env.state().positions.clone();
                let actions: Vec<Action> = (0..env.num_agents())
                    .map(|_| Action::ALL[rng.gen_range(0..Action::COUNT)])
                    .collect();
                let out = env.step(&actions)?;
                done += 1;
                let next = &env.state().positions;
                let map = env.instance().map();
                for i in 0..next.len() {
                    for j in i + 1..next.len() {
                        if next[i] == next[j] {
                            return Ok(Err(format!(
                                "vertex collision between {i} and {j} at step {done}"
                            )));
                        }
                        if next[i] == prev[j] && next[j] == prev[i] && next[i] != prev[i] {
                            return Ok(Err(format!(
                                "edge collision between {i} and {j} at step {done}"
                            )));
                        }
                    }
                    if map.is_obstacle(next[i]) {
                        return Ok(Err(format!("agent {i} on an obstacle at step {done}")));
                    }
                }
                if let Some(r) = out.rewards.iter().find(|r| !allowed.contains(r)) {
                    return Ok(Err(format!("reward {r} outside the reward table")));
                }
                let p: Vec<(i64, i64)> =
                    prev.iter().map(|p| (p.row as i64, p.col as i64)).collect();
                let mut bounced = vec![false; p.len()];
                let proposed: Vec<(i64, i64)> = p
                    .iter()
                    .zip(&actions)
                    .enumerate()
                    .map(|(i, (&(r, c), a))| {
                        let (nr, nc) = (r + a.delta().0, c + a.delta().1);
                        if map.is_free_at(nr, nc) {
                            (nr, nc)
                        } else {
                            bounced[i] = true;
                            (r, c)
                        }
                    })
                    .collect();
                let (want, reset) = resolve_moves_reference(&p, &proposed, &bounced);
                let got: Vec<(i64, i64)> =
                    next.iter().map(|p| (p.row as i64, p.col as i64)).collect();
                if got != want || out.collided != reset {
                    return Ok(Err(format!(
                        "move resolution differs from the reference at step {done}"
                    )));
                }
                collisions_resolved += reset.iter().filter(|&&r| r).count();
            }
        }
        Ok(Ok(format!(
            "{done} steps over {episodes} instances, {collisions_resolved} agents sent back"
        )))
    })();
    CheckResult::finish("environment fuzz", start, outcome)
}

/// Heuristic observation channels against a separate flood fill.
pub fn heuristic_channels(maps: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| -> Result<std::result::Result<String, String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4E0);
        let mut cells = 0usize;
        for k in 0..maps {
            let inst = random_instance(&mut rng, 20, 8);
            let fov = [3, 5, 7, 9][k % 4];
            let env = MapfEnv::new(inst, 64, fov)?;
            let map: &GridMap = env.instance().map();
            let size = map.size();
            for (agent, &me) in env.state().positions.iter().enumerate() {
                let goal = env.instance().goals()[agent];
                let dist = flood_fill_reference(map.cells(), size, (goal.row, goal.col));
                let obs = env.observe(agent);
                let half = fov as i64 / 2;
                for fr in 0..fov {
                    for fc in 0..fov {
                        let cell = (
                            me.row as i64 + fr as i64 - half,
                            me.col as i64 + fc as i64 - half,
                        );
                        let want = heuristic_bits_reference(&dist, map.cells(), size, cell);
                        for (d, &w) in want.iter().enumerate() {
                            if obs.get(fr, fc, HEURISTIC_CHANNEL + d) != w {
                                return Ok(Err(format!(
                                    "map {k}, agent {agent}, cell {cell:?}, direction {d}: expected {w}"
                                )));
                            }
                        }
                        cells += 1;
                    }
                }
            }
            // the engine's own distance field must agree with the flood fill too
            let goal = env.instance().goals()[0];
            let field = distance_field(map, goal)?;
            let dist = flood_fill_reference(map.cells(), size, (goal.row, goal.col));
            for r in 0..size {
                for c in 0..size {
                    if field.get(Pos::new(r, c)).map(u64::from) != dist[r * size + c] {
                        return Ok(Err(format!("map {k}: distance differs at ({r}, {c})")));
                    }
                }
            }
        }
        Ok(Ok(format!("{maps} maps, {cells} FOV cells")))
    })();
    CheckResult::finish("heuristic channels", start, outcome)
}

fn encode_one(
    m: &DccModel,
    store: &ParamStore,
    obs: &Observation,
    hidden: &[f32],
) -> Result<Vec<f32>> {
    let mut g = Graph::inference(store);
    let x = g.input(observation_batch(&[obs])?);
    let h = g.input(Tensor::new(vec![1, hidden.len()], hidden.to_vec())?);
    let e = m.encode(&mut g, x, h)?;
    Ok(g.value(e).data().to_vec())
}

/// Communication scopes against brute-force masking, one joint state per
/// fixture.
pub fn scopes(fixtures: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| -> Result<std::result::Result<String, String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5C0);
        let (mut agents_checked, mut nonempty, mut pairs) = (0usize, 0usize, 0usize);
        for k in 0..fixtures {
            let (m, store) = agent_sensitive_model(seed.wrapping_mul(31).wrapping_add(k as u64))?;
            let size = rng.gen_range(5..=8);
            let map = generate_map_with_density(size, rng.gen_range(0.0..0.2), &mut rng);
            let Ok(inst) = make_instance(
                &map,
                rng.gen_range(2..=6).min(map.free_cells().len() / 2),
                &mut rng,
            ) else {
                continue;
            };
            let env = MapfEnv::new(inst, 64, 5)?;
            let obs = env.observe_all();
            let nbs = env.all_neighbors();
            let hidden: Vec<Vec<f32>> = (0..env.num_agents())
                .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let d = act(
                &m,
                &store,
                &obs,
                &nbs,
                &hidden,
                0.0,
                ScopeMode::Dcc,
                &mut rng,
            )?;
            for i in 0..env.num_agents() {
                let base = temp_action(&m, &store, &encode_one(&m, &store, &obs[i], &hidden[i])?)?;
                let mut want = Vec::new();
                for nb in &nbs[i] {
                    let mut masked = obs[i].clone();
                    masked.set(nb.row, nb.col, AGENT_CHANNEL, false);
                    if temp_action(&m, &store, &encode_one(&m, &store, &masked, &hidden[i])?)?
                        != base
                    {
                        want.push(nb.agent);
                    }
                }
                want.sort_unstable();
                if d.scope.requests()[i] != want {
                    return Ok(Err(format!(
                        "fixture {k}, agent {i}: scope {:?}, enumeration {want:?}",
                        d.scope.requests()[i]
                    )));
                }
                agents_checked += 1;
                nonempty += !want.is_empty() as usize;
            }
            let requested: usize = d.scope.requests().iter().map(Vec::len).sum();
            let received: usize = d.scope.receivers().iter().map(Vec::len).sum();
            if requested != received || requested != d.comm_count() {
                return Ok(Err(format!(
                    "fixture {k}: Σ|C_i| = {requested}, Σ|C̄_j| = {received}"
                )));
            }
            pairs += requested;
        }
        if nonempty == 0 {
            return Ok(Err("no fixture produced a non-empty scope".into()));
        }
        Ok(Ok(format!(
            "{fixtures} fixtures, {agents_checked} agents, {nonempty} non-empty scopes, {pairs} request pairs"
        )))
    })();
    CheckResult::finish("communication scope", start, outcome)
}

fn mat<'a>(store: &'a ParamStore, name: &str) -> Mat<'a> {
    let t = store.get(store.find(name).expect("registered parameter"));
    Mat {
        rows: t.shape()[0],
        cols: t.shape()[1],
        data: t.data(),
    }
}

/// Attention, dueling head and 2-step returns against loop recomputation.
pub fn scalar_oracles(fixtures: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| -> Result<std::result::Result<String, String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CA1);
        let mut worst = [0.0f64; 3];
        for k in 0..fixtures {
            // attention over a random key set
            let (qin, kvin) = (rng.gen_range(2..9), rng.gen_range(2..9));
            let heads = rng.gen_range(1..4);
            let dk = rng.gen_range(1..5);
            let out_w = rng.gen_range(1..9);
            let mut store = ParamStore::new();
            let att = MultiHeadAttention::register(
                &mut store, "att", qin, kvin, heads, dk, out_w, &mut rng,
            );
            let rows = rng.gen_range(1..6);
            let q = rand_tensor(&[1, qin], &mut rng);
            let kv = rand_tensor(&[rows, kvin], &mut rng);
            let members: Vec<usize> = (0..rows).filter(|_| rng.gen_bool(0.7)).collect();
            let members = if members.is_empty() { vec![0] } else { members };
            let mut g = Graph::inference(&store);
            let (qv, kvv) = (g.input(q.clone()), g.input(kv.clone()));
            let y = att.forward_grouped(&mut g, qv, kvv, std::slice::from_ref(&members))?;
            let got = g.value(y).data().to_vec();
            let rows_in: Vec<&[f32]> = members.iter().map(|&r| kv.row(r)).collect();
            let (want, _) = attention_reference(
                q.data(),
                &rows_in,
                &mat(&store, "att.wq"),
                &mat(&store, "att.wk"),
                &mat(&store, "att.wv"),
                &mat(&store, "att.out.w"),
                store.get(store.find("att.out.b").expect("bias")).data(),
                heads,
            );
            for (a, b) in got.iter().zip(&want) {
                worst[0] = worst[0].max((*a as f64 - b).abs());
            }

            // dueling combination
            let batch = rng.gen_range(1..4);
            let v = rand_tensor(&[batch, 1], &mut rng);
            let adv = rand_tensor(&[batch, Action::COUNT], &mut rng);
            let mut g = Graph::inference(&store);
            let (vv, av) = (g.input(v.clone()), g.input(adv.clone()));
            let qd = g.dueling(vv, av)?;
            for r in 0..batch {
                let a: Vec<f64> = adv.row(r).iter().map(|&x| x as f64).collect();
                let want = dueling_reference(v.data()[r] as f64, &a);
                for (x, w) in g.value(qd).row(r).iter().zip(&want) {
                    worst[1] = worst[1].max((*x as f64 - w).abs());
                }
            }

            // 2-step returns over a random segment
            let agents = rng.gen_range(1..4);
            let transitions = rng.gen_range(1..6);
            // either the tail of an episode (a final frame without a
            // transition, terminal on success) or a window with lookahead
            let tail = rng.gen_bool(0.5);
            let ends = tail && rng.gen_bool(0.5);
            let moving_frames = if tail { transitions } else { transitions + 2 };
            let mut frames = Vec::new();
            for f in 0..moving_frames + tail as usize {
                let moving = f < moving_frames;
                frames.push(Frame {
                    obs: Vec::new(),
                    requests: vec![Vec::new(); agents],
                    actions: if moving { vec![0; agents] } else { Vec::new() },
                    rewards: if moving {
                        (0..agents).map(|_| rng.gen_range(-1.0..3.0)).collect()
                    } else {
                        Vec::new()
                    },
                });
            }
            let seg = Segment {
                task: Task { size: 10, agents },
                agents,
                initial_hidden: Vec::new(),
                trained: transitions,
                ends_in_success: ends,
                frames,
            };
            let bootstrap: Vec<Vec<f32>> = (0..seg.frames.len())
                .map(|_| (0..agents).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let gamma = rng.gen_range(0.5..1.0);
            let got = n_step_returns(&seg, &bootstrap, gamma, 2);
            let terminal = seg.terminal_flags();
            for i in 0..agents {
                let rewards: Vec<Option<f32>> = seg
                    .frames
                    .iter()
                    .map(|f| f.has_transition().then(|| f.rewards[i]))
                    .collect();
                let boot: Vec<f32> = bootstrap.iter().map(|b| b[i]).collect();
                for (t, row) in got.iter().enumerate().take(seg.trained) {
                    let want = n_step_return_reference(&rewards, &boot, &terminal, t, 2, gamma);
                    worst[2] = worst[2].max((row[i] - want).abs());
                }
            }
            if worst.iter().any(|w| w.is_nan() || *w >= SCALAR_TOLERANCE) {
                return Ok(Err(format!(
                    "fixture {k}: attention {:.2e}, dueling {:.2e}, returns {:.2e}",
                    worst[0], worst[1], worst[2]
                )));
            }
        }
        Ok(Ok(format!(
            "{fixtures} fixtures, max abs error attention {:.2e}, dueling {:.2e}, returns {:.2e}",
            worst[0], worst[1], worst[2]
        )))
    })();
    CheckResult::finish("scalar oracles", start, outcome)
}
