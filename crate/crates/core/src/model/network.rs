use rand::Rng;

use super::config::ModelConfig;
use super::scope::CommScope;
use crate::env::{Action, Observation, AGENT_CHANNEL, CHANNELS};
use crate::error::{Error, Result};
use crate::nn::{
    Affine, Conv2d, Graph, GruCell, MultiHeadAttention, ParamStore, Real, Tensor, Var,
};

/// Parameter layout of the policy network. The weights themselves live in a
/// [`ParamStore`]; this struct only records where each layer's tensors are.
#[derive(Clone, Debug)]
pub struct DccModel {
    config: ModelConfig,
    convs: Vec<Conv2d>,
    flatten: Affine,
    encoder_gru: GruCell,
    pos_embed: Affine,
    attention: MultiHeadAttention,
    round1: GruCell,
    round2: GruCell,
    trunk: Affine,
    value: Affine,
    advantage: Affine,
}

/// Vars produced by one joint step of the network.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    /// Encoder output.
    pub e: Var,
    /// After the first (reply) round.
    pub e1: Var,
    /// After the second round; the next step's hidden state.
    pub e2: Var,
    /// Dueling Q values, one row per agent.
    pub q: Var,
}

impl DccModel {
    /// Registers freshly initialised parameters.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = &config;
        let mut convs = Vec::with_capacity(c.conv_channels.len());
        let mut in_ch = CHANNELS;
        for (k, &out) in c.conv_channels.iter().enumerate() {
            convs.push(Conv2d::register(
                &mut store,
                &format!("encoder.conv{k}"),
                in_ch,
                out,
                c.kernel,
                rng,
            ));
            in_ch = out;
        }
        let flat = in_ch * c.fov * c.fov;
        let flatten = Affine::register(&mut store, "encoder.flatten", flat, c.hidden, true, rng);
        let encoder_gru = GruCell::register(&mut store, "encoder.gru", c.hidden, c.hidden, rng);
        let pos_embed = Affine::register(
            &mut store,
            "comm.pos_embed",
            c.fov * c.fov,
            c.pos_embed,
            true,
            rng,
        );
        let attention = MultiHeadAttention::register(
            &mut store,
            "comm.attention",
            c.hidden,
            c.hidden + c.pos_embed,
            c.heads,
            c.key_dim,
            c.hidden,
            rng,
        );
        let round1 = GruCell::register(&mut store, "comm.round1", c.hidden, c.hidden, rng);
        let round2 = GruCell::register(&mut store, "comm.round2", c.hidden, c.hidden, rng);
        let trunk = Affine::register(&mut store, "q.trunk", c.hidden, c.hidden, true, rng);
        let value = Affine::register(&mut store, "q.value", c.hidden, 1, true, rng);
        let advantage = Affine::register(
            &mut store,
            "q.advantage",
            c.hidden,
            Action::COUNT,
            true,
            rng,
        );
        let model = Self {
            config,
            convs,
            flatten,
            encoder_gru,
            pos_embed,
            attention,
            round1,
            round2,
            trunk,
            value,
            advantage,
        };
        Ok((model, store))
    }

    /// Layout for `config`, checked against the names and shapes in `store`.
    pub fn bind(config: ModelConfig, store: &ParamStore) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let (model, fresh) = Self::new(config, &mut rng)?;
        if fresh.len() != store.len() {
            return Err(Error::ModelMismatch(format!(
                "expected {} parameter tensors, found {}",
                fresh.len(),
                store.len()
            )));
        }
        for ((_, want_name, want), (_, name, got)) in fresh.iter().zip(store.iter()) {
            if want_name != name || want.shape() != got.shape() {
                return Err(Error::ModelMismatch(format!(
                    "expected `{want_name}` {:?}, found `{name}` {:?}",
                    want.shape(),
                    got.shape()
                )));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    /// Conv stack, flatten map, then the encoder GRU: `obs` is N×6×ℓ×ℓ,
    /// `hidden` N×width.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, obs: Var, hidden: Var) -> Result<Var> {
        let fov = self.config.fov;
        let shape = g.shape(obs);
        if shape.len() != 4 || shape[1..] != [CHANNELS, fov, fov] {
            return Err(Error::Shape {
                op: "encode",
                detail: format!(
                    "observation batch {shape:?}, expected [_, {CHANNELS}, {fov}, {fov}]"
                ),
            });
        }
        let mut x = obs;
        for conv in &self.convs {
            let y = conv.forward(g, x)?;
            x = g.relu(y);
        }
        let flat = self.flatten.forward(g, x)?;
        let features = g.relu(flat);
        self.encoder_gru.forward(g, features, hidden)
    }

    /// Embedded neighbour positions, one row per agent, from N×ℓ² multi-hot rows.
    pub fn embed_positions<T: Real>(&self, g: &mut Graph<T>, positions: Var) -> Result<Var> {
        self.pos_embed.forward(g, positions)
    }

    /// Dueling head: `V + (A − mean A)`.
    pub fn q_values<T: Real>(&self, g: &mut Graph<T>, e: Var) -> Result<Var> {
        let t = self.trunk.forward(g, e)?;
        let t = g.relu(t);
        let v = self.value.forward(g, t)?;
        let a = self.advantage.forward(g, t)?;
        g.dueling(v, a)
    }

    /// Two-round request/reply exchange. Round one: each requested agent
    /// attends over itself and its requesters and folds the result into
    /// its message with the first GRU. Round two: each requester attends
    /// over itself and the agents it asked, using round-one messages, and
    /// folds that in with the second GRU. Agents with nothing to attend to
    /// pass their message through unchanged.
    pub fn communicate<T: Real>(
        &self,
        g: &mut Graph<T>,
        e: Var,
        l: Var,
        scope: &CommScope,
    ) -> Result<(Var, Var)> {
        let rows = g.value(e).rows();
        if scope.agents() != rows || g.value(l).rows() != rows {
            return Err(Error::Shape {
                op: "communicate",
                detail: format!(
                    "{} messages, {} positions, scope over {} agents",
                    rows,
                    g.value(l).rows(),
                    scope.agents()
                ),
            });
        }
        let e1 = self.round(g, e, l, scope.receivers(), &self.round1)?;
        let e2 = self.round(g, e1, l, scope.requests(), &self.round2)?;
        Ok((e1, e2))
    }

    fn round<T: Real>(
        &self,
        g: &mut Graph<T>,
        msg: Var,
        l: Var,
        partners: &[Vec<usize>],
        gru: &GruCell,
    ) -> Result<Var> {
        let active: Vec<usize> = (0..partners.len())
            .filter(|&i| !partners[i].is_empty())
            .collect();
        if active.is_empty() {
            return Ok(msg);
        }
        let groups: Vec<Vec<usize>> = active
            .iter()
            .map(|&i| {
                std::iter::once(i)
                    .chain(partners[i].iter().copied())
                    .collect()
            })
            .collect();
        let kv = g.concat_cols(&[msg, l])?;
        let own = g.gather_rows(msg, &active)?;
        let pooled = self.attention.forward_grouped(g, own, kv, &groups)?;
        let updated = gru.forward(g, pooled, own)?;
        g.scatter_rows(msg, &active, updated)
    }

    /// Full step: encode, embed positions, communicate, Q head.
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<T>,
        obs: Var,
        positions: Var,
        hidden: Var,
        scope: &CommScope,
    ) -> Result<StepVars> {
        let e = self.encode(g, obs, hidden)?;
        let l = self.embed_positions(g, positions)?;
        let (e1, e2) = self.communicate(g, e, l, scope)?;
        let q = self.q_values(g, e2)?;
        Ok(StepVars { e, e1, e2, q })
    }
}

/// Multi-hot over FOV cells: every other agent plus the centre.
pub fn position_features(obs: &Observation) -> Vec<f32> {
    let fov = obs.fov();
    let mut out = vec![0.0; fov * fov];
    for r in 0..fov {
        for c in 0..fov {
            if obs.get(r, c, AGENT_CHANNEL) == 1 {
                out[r * fov + c] = 1.0;
            }
        }
    }
    out[obs.center() * fov + obs.center()] = 1.0;
    out
}

/// Stacks observations into an N×6×ℓ×ℓ tensor.
pub fn observation_batch<T: Real>(obs: &[&Observation]) -> Result<Tensor<T>> {
    let fov = obs.first().map(|o| o.fov()).ok_or_else(|| Error::Shape {
        op: "observation_batch",
        detail: "no observations".into(),
    })?;
    let mut data = Vec::with_capacity(obs.len() * CHANNELS * fov * fov);
    for o in obs {
        if o.fov() != fov {
            return Err(Error::Shape {
                op: "observation_batch",
                detail: format!("mixed FOV {} and {fov}", o.fov()),
            });
        }
        data.extend(o.bits().iter().map(|&b| T::of(b as f64)));
    }
    Tensor::new(vec![obs.len(), CHANNELS, fov, fov], data)
}

/// Stacks [`position_features`] rows into an N×ℓ² tensor.
pub fn position_batch<T: Real>(obs: &[&Observation]) -> Result<Tensor<T>> {
    let fov = obs.first().map(|o| o.fov()).unwrap_or(1);
    let data: Vec<T> = obs
        .iter()
        .flat_map(|o| position_features(o))
        .map(|v| T::of(v as f64))
        .collect();
    Tensor::new(vec![obs.len(), fov * fov], data)
}
