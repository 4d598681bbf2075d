use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::env::{Neighbor, Observation, AGENT_CHANNEL, CHANNELS};
use crate::nn::gradcheck::{check_gradients, GradCheckOptions};
use crate::nn::{Graph, ParamStore, Tensor};
use crate::oracles::{attention_reference, dueling_reference, gru_reference, Mat};

fn small() -> ModelConfig {
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

fn model(seed: u64) -> (DccModel, ParamStore) {
    DccModel::new(small(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_obs(rng: &mut impl Rng, fov: usize, agents: &[(usize, usize)]) -> Observation {
    let mut obs = Observation::zeros(fov);
    for ch in 0..CHANNELS {
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

fn mat<'a>(store: &'a ParamStore, name: &str) -> Mat<'a> {
    let t = store.get(store.find(name).unwrap_or_else(|| panic!("no {name}")));
    Mat {
        rows: t.shape()[0],
        cols: t.shape()[1],
        data: t.data(),
    }
}

fn vecp<'a>(store: &'a ParamStore, name: &str) -> &'a [f32] {
    store.get(store.find(name).unwrap()).data()
}

fn encode_one(m: &DccModel, store: &ParamStore, obs: &Observation, hidden: &[f32]) -> Vec<f32> {
    let mut g = Graph::inference(store);
    let x = g.input(observation_batch(&[obs]).unwrap());
    let h = g.input(Tensor::new(vec![1, hidden.len()], hidden.to_vec()).unwrap());
    let e = m.encode(&mut g, x, h).unwrap();
    g.value(e).data().to_vec()
}

#[test]
fn zero_everything_encodes_to_zero() {
    let (m, mut store) = model(1);
    for id in store.ids().collect::<Vec<_>>() {
        store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let e = encode_one(&m, &store, &Observation::zeros(5), &[0.0; 8]);
    assert!(e.iter().all(|&v| v == 0.0));
}

#[test]
fn hidden_state_matters_and_encoding_is_reproducible() {
    let (m, store) = model(2);
    let obs = random_obs(&mut ChaCha8Rng::seed_from_u64(3), 5, &[(0, 0)]);
    let a = encode_one(&m, &store, &obs, &[0.0; 8]);
    let b = encode_one(&m, &store, &obs, &[0.5; 8]);
    assert_ne!(a, b);
    let (m2, store2) = model(2);
    assert_eq!(a, encode_one(&m2, &store2, &obs, &[0.0; 8]));
}

#[test]
fn wrong_observation_shape_rejected() {
    let (m, store) = model(1);
    let mut g = Graph::inference(&store);
    let x = g.input(Tensor::zeros(&[1, 6, 7, 7]));
    let h = g.input(Tensor::zeros(&[1, 8]));
    assert!(m.encode(&mut g, x, h).is_err());
}

#[test]
fn bind_checks_layout() {
    let (_, store) = model(4);
    assert!(DccModel::bind(small(), &store).is_ok());
    let wider = ModelConfig {
        hidden: 16,
        ..small()
    };
    assert!(matches!(
        DccModel::bind(wider, &store),
        Err(crate::Error::ModelMismatch(_))
    ));
}

#[test]
fn dueling_head_matches_scalar_recomputation() {
    let (m, store) = model(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let e: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g = Graph::inference(&store);
    let x = g.input(Tensor::new(vec![1, 8], e.clone()).unwrap());
    let q = m.q_values(&mut g, x).unwrap();
    let q = g.value(q).data().to_vec();
    let (tw, tb) = (mat(&store, "q.trunk.w"), vecp(&store, "q.trunk.b"));
    let trunk: Vec<f64> = (0..8)
        .map(|j| (tb[j] as f64 + (0..8).map(|i| e[i] as f64 * tw.at(i, j)).sum::<f64>()).max(0.0))
        .collect();
    let lin = |w: &Mat, b: &[f32], j: usize| {
        b[j] as f64 + (0..8).map(|i| trunk[i] * w.at(i, j)).sum::<f64>()
    };
    let v = lin(&mat(&store, "q.value.w"), vecp(&store, "q.value.b"), 0);
    let aw = mat(&store, "q.advantage.w");
    let adv: Vec<f64> = (0..5)
        .map(|j| lin(&aw, vecp(&store, "q.advantage.b"), j))
        .collect();
    let want = dueling_reference(v, &adv);
    for (a, b) in q.iter().zip(&want) {
        assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
    }
    let centred: f64 = q.iter().map(|&x| x as f64 - v).sum();
    assert!(centred.abs() < 1e-5);
}

#[test]
fn temp_action_ignores_constant_shift_in_advantage_bias() {
    let (m, mut store) = model(7);
    let e = vec![0.3; 8];
    let before = temp_action(&m, &store, &e).unwrap();
    let id = store.find("q.advantage.b").unwrap();
    store
        .get_mut(id)
        .data_mut()
        .iter_mut()
        .for_each(|b| *b += 5.0);
    assert_eq!(temp_action(&m, &store, &e).unwrap(), before);
}

#[test]
fn no_neighbors_no_scope() {
    let (m, store) = model(8);
    let obs = random_obs(&mut ChaCha8Rng::seed_from_u64(1), 5, &[]);
    assert!(comm_scope(&m, &store, &obs, &[], &[0.0; 8])
        .unwrap()
        .is_empty());
}

#[test]
fn identity_mask_gives_empty_scope() {
    let (m, store) = model(9);
    let obs = random_obs(&mut ChaCha8Rng::seed_from_u64(2), 5, &[(0, 0), (4, 4)]);
    let nbs = vec![
        Neighbor {
            row: 0,
            col: 0,
            agent: 1,
        },
        Neighbor {
            row: 4,
            col: 4,
            agent: 2,
        },
    ];
    let scope = comm_scopes_with(
        &m,
        &store,
        &[obs.clone(), Observation::zeros(5), Observation::zeros(5)],
        &[nbs, vec![], vec![]],
        &[vec![0.1; 8], vec![0.0; 8], vec![0.0; 8]],
        |o, _| Ok(o.clone()),
    )
    .unwrap();
    assert!(scope.iter().all(Vec::is_empty));
}

/// Boosts the first convolution's agent-channel weights so that hiding a
/// single neighbour often flips the greedy action.
fn agent_sensitive_model(seed: u64) -> (DccModel, ParamStore) {
    let (m, mut store) = model(seed);
    let id = store.find("encoder.conv0.w").unwrap();
    let w = store.get_mut(id);
    let (out, inc, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    for o in 0..out {
        for i in 0..k * k {
            w.data_mut()[(o * inc + AGENT_CHANNEL) * k * k + i] *= 40.0;
        }
    }
    (m, store)
}

#[test]
fn scope_matches_brute_force_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut nonempty = 0;
    for trial in 0..40 {
        let (m, store) = agent_sensitive_model(100 + trial);
        let cells: Vec<(usize, usize)> = (0..rng.gen_range(1..5))
            .map(|_| loop {
                let c = (rng.gen_range(0..5), rng.gen_range(0..5));
                if c != (2, 2) {
                    break c;
                }
            })
            .collect();
        let obs = random_obs(&mut rng, 5, &cells);
        let mut nbs: Vec<Neighbor> = obs
            .agent_cells()
            .into_iter()
            .enumerate()
            .map(|(k, (row, col))| Neighbor {
                row,
                col,
                agent: k + 1,
            })
            .collect();
        nbs.sort();
        let hidden: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = comm_scope(&m, &store, &obs, &nbs, &hidden).unwrap();

        let base = temp_action(&m, &store, &encode_one(&m, &store, &obs, &hidden)).unwrap();
        let mut want = Vec::new();
        for nb in &nbs {
            let mut masked = obs.clone();
            masked.set(nb.row, nb.col, AGENT_CHANNEL, false);
            let a = temp_action(&m, &store, &encode_one(&m, &store, &masked, &hidden)).unwrap();
            if a != base {
                want.push(nb.agent);
            }
        }
        assert_eq!(got, want);
        nonempty += !want.is_empty() as usize;
    }
    assert!(nonempty > 0, "fixtures never exercised a non-empty scope");
}

#[test]
fn empty_scopes_pass_messages_through() {
    let (m, store) = model(11);
    let mut g = Graph::inference(&store);
    let e = g.input(Tensor::new(vec![3, 8], (0..24).map(|v| v as f32 * 0.1).collect()).unwrap());
    let l = g.input(Tensor::zeros(&[3, 4]));
    let (e1, e2) = m.communicate(&mut g, e, l, &CommScope::empty(3)).unwrap();
    assert_eq!(g.value(e1), g.value(e));
    assert_eq!(g.value(e2), g.value(e));
}

/// Both rounds recomputed with the loop references.
fn communicate_reference(
    store: &ParamStore,
    e: &[Vec<f32>],
    l: &[Vec<f32>],
    scope: &CommScope,
) -> Vec<Vec<f64>> {
    let round = |msg: &[Vec<f32>], partners: &[Vec<usize>], gru: &str| -> Vec<Vec<f32>> {
        let kv: Vec<Vec<f32>> = msg
            .iter()
            .zip(l)
            .map(|(m, p)| [m.as_slice(), p.as_slice()].concat())
            .collect();
        (0..msg.len())
            .map(|i| {
                if partners[i].is_empty() {
                    return msg[i].clone();
                }
                let members: Vec<&[f32]> = std::iter::once(i)
                    .chain(partners[i].iter().copied())
                    .map(|k| kv[k].as_slice())
                    .collect();
                let (att, _) = attention_reference(
                    &msg[i],
                    &members,
                    &mat(store, "comm.attention.wq"),
                    &mat(store, "comm.attention.wk"),
                    &mat(store, "comm.attention.wv"),
                    &mat(store, "comm.attention.out.w"),
                    vecp(store, "comm.attention.out.b"),
                    2,
                );
                let att: Vec<f32> = att.iter().map(|&v| v as f32).collect();
                gru_reference(
                    &att,
                    &msg[i],
                    &mat(store, &format!("{gru}.wx")),
                    &mat(store, &format!("{gru}.wh")),
                    vecp(store, &format!("{gru}.bx")),
                    vecp(store, &format!("{gru}.bh")),
                )
                .into_iter()
                .map(|v| v as f32)
                .collect()
            })
            .collect()
    };
    let e1 = round(e, scope.receivers(), "comm.round1");
    let e2 = round(&e1, scope.requests(), "comm.round2");
    e2.into_iter()
        .map(|r| r.into_iter().map(f64::from).collect())
        .collect()
}

#[test]
fn three_agent_chain_matches_loop_reference() {
    let (m, store) = model(12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let e: Vec<Vec<f32>> = (0..3)
        .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let l: Vec<Vec<f32>> = (0..3)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    // 0 asks 1, 1 asks 2
    let scope = CommScope::from_requests(vec![vec![1], vec![2], vec![]]);
    let mut g = Graph::inference(&store);
    let ev = g.input(Tensor::new(vec![3, 8], e.concat()).unwrap());
    let lv = g.input(Tensor::new(vec![3, 4], l.concat()).unwrap());
    let (_, e2) = m.communicate(&mut g, ev, lv, &scope).unwrap();
    let want = communicate_reference(&store, &e, &l, &scope);
    for (r, row) in want.iter().enumerate() {
        for (c, &w) in row.iter().enumerate() {
            let got = g.value(e2).row(r)[c] as f64;
            assert!((got - w).abs() < 1e-5, "row {r} col {c}: {got} vs {w}");
        }
    }
    // agent 2 asked nobody but replied to 1, so its message changed in round one only
    assert_ne!(g.value(e2).row(2), &e[2][..]);
}

fn two_agent_fixture(rng: &mut impl Rng) -> (Vec<Observation>, Vec<Vec<Neighbor>>) {
    let a = random_obs(rng, 5, &[(1, 3)]);
    let b = random_obs(rng, 5, &[(3, 1)]);
    (
        vec![a, b],
        vec![
            vec![Neighbor {
                row: 1,
                col: 3,
                agent: 1,
            }],
            vec![Neighbor {
                row: 3,
                col: 1,
                agent: 0,
            }],
        ],
    )
}

#[test]
fn single_agent_greedy_equals_temp_action() {
    let (m, store) = model(14);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let obs = random_obs(&mut rng, 5, &[]);
    let d = act(
        &m,
        &store,
        std::slice::from_ref(&obs),
        &[vec![]],
        &[vec![0.0; 8]],
        0.0,
        ScopeMode::Dcc,
        &mut rng,
    )
    .unwrap();
    let e = encode_one(&m, &store, &obs, &[0.0; 8]);
    assert_eq!(d.actions[0].index(), temp_action(&m, &store, &e).unwrap());
    assert_eq!(d.comm_count(), 0);
    assert_eq!(d.hidden[0], e);
}

#[test]
fn full_exploration_is_uniform() {
    let (m, store) = model(16);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let obs = random_obs(&mut rng, 5, &[]);
    let mut counts = [0usize; 5];
    for _ in 0..2000 {
        let d = act(
            &m,
            &store,
            std::slice::from_ref(&obs),
            &[vec![]],
            &[vec![0.0; 8]],
            1.0,
            ScopeMode::Dcc,
            &mut rng,
        )
        .unwrap();
        counts[d.actions[0].index()] += 1;
    }
    assert!(
        counts.iter().all(|&c| (330..470).contains(&c)),
        "{counts:?}"
    );
}

#[test]
fn comm_count_and_causal_trigger() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for seed in 0..30 {
        let (m, store) = agent_sensitive_model(200 + seed);
        let (obs, nbs) = two_agent_fixture(&mut rng);
        let hidden = vec![vec![0.0; 8]; 2];
        for mode in [ScopeMode::Dcc, ScopeMode::RrN2] {
            let d = act(&m, &store, &obs, &nbs, &hidden, 0.0, mode, &mut rng).unwrap();
            let recount: usize = d.scope.requests().iter().map(Vec::len).sum();
            assert_eq!(d.comm_count(), recount);
            assert_eq!(d.scope.count(), d.scope.receive_count());
            if mode == ScopeMode::RrN2 {
                assert_eq!(d.comm_count(), 2);
            }
            if mode == ScopeMode::Dcc && d.comm_count() == 0 {
                assert_eq!(d.greedy, d.temp_actions);
            }
        }
    }
}

#[test]
fn end_to_end_gradients_reach_every_block() {
    let (m, store) = model(19);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (obs, _) = two_agent_fixture(&mut rng);
    let refs: Vec<&Observation> = obs.iter().collect();
    let scope = CommScope::from_requests(vec![vec![1], vec![0]]);
    let store64 = store.cast::<f64>();
    let x = observation_batch::<f64>(&refs).unwrap();
    let p = position_batch::<f64>(&refs).unwrap();
    let h: Vec<f64> = (0..16).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let loss = |g: &mut Graph<f64>| {
        let xv = g.input(x.clone());
        let pv = g.input(p.clone());
        let hv = g.input(Tensor::new(vec![2, 8], h.clone()).unwrap());
        let out = m.step(g, xv, pv, hv, &scope)?;
        let picked = g.pick_cols(out.q, &[1, 3])?;
        g.weighted_squared_error(picked, &[0.7, -0.4], &[1.0, 0.5])
    };
    let opts = GradCheckOptions {
        step: 1e-6,
        per_tensor: Some(6),
        floor: 1e-6,
    };
    let report = check_gradients(&store64, loss, &opts, &mut rng).unwrap();
    assert!(report.max_rel_err < 1e-3, "{:?}", report.worst);
    for prefix in [
        "encoder.conv0",
        "encoder.gru",
        "comm.attention",
        "comm.round1",
        "comm.round2",
        "comm.pos_embed",
        "q.value",
        "q.advantage",
    ] {
        assert!(
            report.nonzero_params.iter().any(|n| n.starts_with(prefix)),
            "no gradient reached {prefix}"
        );
    }
}
