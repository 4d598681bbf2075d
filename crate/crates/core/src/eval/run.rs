use std::thread;

use super::suite::{Suite, SuiteCase};
use crate::env::MapfEnv;
use crate::error::Result;
use crate::model::{act, DccModel, ScopeMode};
use crate::nn::ParamStore;

/// Outcome of one greedy episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub case_id: String,
    pub size: usize,
    pub agents: usize,
    pub success: bool,
    /// Steps taken; the step limit when unsolved.
    pub steps: usize,
    pub comm_pairs: usize,
    /// Request lists per step, kept only when tracing.
    pub scopes: Option<Vec<Vec<Vec<usize>>>>,
}

/// Plays one case greedily.
pub fn evaluate_case(
    model: &DccModel,
    store: &ParamStore,
    case: &SuiteCase,
    mode: ScopeMode,
    trace: bool,
) -> Result<EpisodeMetrics> {
    let mut env = MapfEnv::new(case.instance.clone(), case.step_limit, model.config().fov)?;
    let mut hidden = vec![vec![0.0f32; model.hidden()]; env.num_agents()];
    let mut comm_pairs = 0;
    let mut scopes = trace.then(Vec::new);
    // ε = 0 never draws, so any generator will do
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    while !env.is_done() {
        let d = act(
            model,
            store,
            &env.observe_all(),
            &env.all_neighbors(),
            &hidden,
            0.0,
            mode,
            &mut rng,
        )?;
        comm_pairs += d.comm_count();
        if let Some(s) = scopes.as_mut() {
            s.push(d.scope.requests().to_vec());
        }
        env.step(&d.actions)?;
        hidden = d.hidden;
    }
    Ok(EpisodeMetrics {
        case_id: case.id.clone(),
        size: case.size,
        agents: case.agents,
        success: env.is_success(),
        steps: env.state().step_count,
        comm_pairs,
        scopes,
    })
}

/// Evaluates every case, spread over `workers` threads; results are in
/// case-id order regardless of scheduling.
pub fn evaluate(
    model: &DccModel,
    store: &ParamStore,
    suite: &Suite,
    mode: ScopeMode,
    workers: usize,
    trace: bool,
) -> Result<Vec<EpisodeMetrics>> {
    let workers = workers.clamp(1, suite.cases.len().max(1));
    let chunk = suite.cases.len().div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<EpisodeMetrics>>> = thread::scope(|s| {
        let handles: Vec<_> = suite
            .cases
            .chunks(chunk)
            .map(|cases| {
                s.spawn(move || {
                    cases
                        .iter()
                        .map(|c| evaluate_case(model, store, c, mode, trace))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(suite.cases.len());
    for p in parts {
        out.extend(p?);
    }
    out.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(out)
}
