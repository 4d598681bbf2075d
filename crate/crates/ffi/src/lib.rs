//! C ABI over `dcc_core`: environments and trained policies behind opaque
//! handles. Every fallible call returns a [`DccStatus`]; the message of the
//! last failure on the calling thread is available from
//! [`dcc_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dcc_core::env::{
    generate_map_with_density, make_instance, Action, Instance, MapfEnv, CHANNELS,
};
use dcc_core::model::{act, DccModel, ScopeMode};
use dcc_core::nn::ParamStore;
use dcc_core::training::load_model;
use dcc_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DccStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidInstance = 3,
    EpisodeOver = 4,
    Io = 5,
    Checkpoint = 6,
    ModelMismatch = 7,
    Parse = 8,
    Internal = 99,
}

/// Scope rules accepted by [`dcc_policy_act`].
pub const DCC_MODE_DCC: u32 = 0;
pub const DCC_MODE_RR_N2: u32 = 1;

/// A running episode.
pub struct DccEnv {
    inner: MapfEnv,
}

/// A trained network plus the recurrent state of the episode it is playing.
pub struct DccPolicy {
    model: DccModel,
    store: ParamStore,
    hidden: Vec<Vec<f32>>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> DccStatus {
    match e {
        Error::InvalidInstance(_) | Error::GoalOnObstacle(..) | Error::InstanceGeneration(_) => {
            DccStatus::InvalidInstance
        }
        Error::EpisodeOver => DccStatus::EpisodeOver,
        Error::Io(_) => DccStatus::Io,
        Error::Checkpoint(_) => DccStatus::Checkpoint,
        Error::ModelMismatch(_) => DccStatus::ModelMismatch,
        Error::Parse { .. } | Error::Config(_) => DccStatus::Parse,
        Error::ActionCount { .. } | Error::Shape { .. } => DccStatus::InvalidArgument,
        _ => DccStatus::Internal,
    }
}

/// Runs `f`, recording the error message and mapping panics to `Internal`.
fn guard(f: impl FnOnce() -> Result<(), (DccStatus, String)>) -> DccStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DccStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DccStatus::Internal
        }
    }
}

fn core_err(e: Error) -> (DccStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DccStatus, String) {
    (DccStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (DccStatus, String) {
    (DccStatus::InvalidArgument, msg.into())
}

/// Borrowed C string as UTF-8.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DccStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dcc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Engine version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dcc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of bytes in one observation: channels × fov × fov.
#[no_mangle]
pub extern "C" fn dcc_observation_len(fov: u32) -> usize {
    CHANNELS * fov as usize * fov as usize
}

fn new_env(
    instance: Instance,
    step_limit: u32,
    fov: u32,
    out: *mut *mut DccEnv,
) -> Result<(), (DccStatus, String)> {
    if fov == 0 || fov.is_multiple_of(2) {
        return Err(invalid(format!("fov must be odd and positive, got {fov}")));
    }
    if step_limit == 0 {
        return Err(invalid("step_limit must be positive"));
    }
    let inner = MapfEnv::new(instance, step_limit as usize, fov as usize).map_err(core_err)?;
    // SAFETY: checked non-null by the callers
    unsafe { *out = Box::into_raw(Box::new(DccEnv { inner })) };
    Ok(())
}

/// Creates an environment from instance text (`m n` header, `m` map rows of
/// `.` and `#`, then one `start_row start_col goal_row goal_col` line per
/// agent).
///
/// # Safety
/// `instance_text` must be a NUL-terminated string and `out` a valid
/// pointer. Free the result with [`dcc_env_free`].
#[no_mangle]
pub unsafe extern "C" fn dcc_env_from_text(
    instance_text: *const c_char,
    step_limit: u32,
    fov: u32,
    out: *mut *mut DccEnv,
) -> DccStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let t = text(instance_text, "instance_text")?;
        let instance = Instance::from_text(t, "<ffi>").map_err(core_err)?;
        new_env(instance, step_limit, fov, out)
    })
}

/// Creates a random environment: a `size`×`size` map with the given
/// obstacle density and `agents` start/goal pairs, all drawn from `seed`.
///
/// # Safety
/// `out` must be a valid pointer. Free the result with [`dcc_env_free`].
#[no_mangle]
pub unsafe extern "C" fn dcc_env_generate(
    size: u32,
    agents: u32,
    density: f64,
    seed: u64,
    step_limit: u32,
    fov: u32,
    out: *mut *mut DccEnv,
) -> DccStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if size == 0 || !(0.0..1.0).contains(&density) {
            return Err(invalid("size must be positive and density in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = generate_map_with_density(size as usize, density, &mut rng);
        let instance = make_instance(&map, agents as usize, &mut rng).map_err(core_err)?;
        new_env(instance, step_limit, fov, out)
    })
}

/// # Safety
/// `env` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcc_env_free(env: *mut DccEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Agent count, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcc_env_num_agents(env: *const DccEnv) -> u32 {
    env.as_ref().map_or(0, |e| e.inner.num_agents() as u32)
}

/// Field-of-view width, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcc_env_fov(env: *const DccEnv) -> u32 {
    env.as_ref().map_or(0, |e| e.inner.fov() as u32)
}

/// Steps taken so far, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcc_env_step_count(env: *const DccEnv) -> u32 {
    env.as_ref()
        .map_or(0, |e| e.inner.state().step_count as u32)
}

/// True when every agent is on its goal.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcc_env_is_success(env: *const DccEnv) -> bool {
    env.as_ref().is_some_and(|e| e.inner.is_success())
}

/// True when the episode is over (success or step limit).
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcc_env_is_done(env: *const DccEnv) -> bool {
    env.as_ref().is_some_and(|e| e.inner.is_done())
}

/// Back to the start positions.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcc_env_reset(env: *mut DccEnv) -> DccStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        env.inner.reset();
        Ok(())
    })
}

/// Writes every agent's (row, col) into `rows`/`cols`, each of length `n`
/// equal to the agent count.
///
/// # Safety
/// `rows` and `cols` must point to `n` writable `u32`s.
#[no_mangle]
pub unsafe extern "C" fn dcc_env_positions(
    env: *const DccEnv,
    rows: *mut u32,
    cols: *mut u32,
    n: usize,
) -> DccStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if rows.is_null() || cols.is_null() {
            return Err(null("rows/cols"));
        }
        let pos = &env.inner.state().positions;
        if n != pos.len() {
            return Err(invalid(format!("expected {} agents, got {n}", pos.len())));
        }
        for (i, p) in pos.iter().enumerate() {
            *rows.add(i) = p.row as u32;
            *cols.add(i) = p.col as u32;
        }
        Ok(())
    })
}

/// Writes agent `agent`'s observation, channel-major `[channel][row][col]`
/// with one byte per cell (0 or 1), into `out` of length `len`
/// (see [`dcc_observation_len`]).
///
/// # Safety
/// `out` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dcc_env_observation(
    env: *const DccEnv,
    agent: u32,
    out: *mut u8,
    len: usize,
) -> DccStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if agent as usize >= env.inner.num_agents() {
            return Err(invalid(format!("agent {agent} out of range")));
        }
        let obs = env.inner.observe(agent as usize);
        if len != obs.bits().len() {
            return Err(invalid(format!(
                "observation needs {} bytes, got {len}",
                obs.bits().len()
            )));
        }
        ptr::copy_nonoverlapping(obs.bits().as_ptr(), out, len);
        Ok(())
    })
}

/// Applies one joint action (0 up, 1 down, 2 left, 3 right, 4 stay per
/// agent). `rewards` (length `n`) and `done` may be null.
///
/// # Safety
/// `actions` must point to `n` readable bytes; `rewards`, when non-null,
/// to `n` writable floats; `done`, when non-null, to one writable bool.
#[no_mangle]
pub unsafe extern "C" fn dcc_env_step(
    env: *mut DccEnv,
    actions: *const u8,
    n: usize,
    rewards: *mut f32,
    done: *mut bool,
) -> DccStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        if actions.is_null() {
            return Err(null("actions"));
        }
        let raw = std::slice::from_raw_parts(actions, n);
        let acts = raw
            .iter()
            .map(|&a| {
                Action::from_index(a as usize)
                    .ok_or_else(|| invalid(format!("action {a} out of range")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let outcome = env.inner.step(&acts).map_err(core_err)?;
        if !rewards.is_null() {
            ptr::copy_nonoverlapping(outcome.rewards.as_ptr(), rewards, n);
        }
        if !done.is_null() {
            *done = outcome.done;
        }
        Ok(())
    })
}

/// Loads a checkpoint written by `dcc train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer. Free
/// the result with [`dcc_policy_free`].
#[no_mangle]
pub unsafe extern "C" fn dcc_policy_load(
    path: *const c_char,
    out: *mut *mut DccPolicy,
) -> DccStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = text(path, "path")?;
        let (model, store, _) = load_model(Path::new(p)).map_err(core_err)?;
        *out = Box::into_raw(Box::new(DccPolicy {
            model,
            store,
            hidden: Vec::new(),
        }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcc_policy_free(policy: *mut DccPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Clears the recurrent state; call before each new episode.
///
/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcc_policy_reset(policy: *mut DccPolicy) -> DccStatus {
    guard(|| {
        let policy = policy.as_mut().ok_or_else(|| null("policy"))?;
        policy.hidden.clear();
        Ok(())
    })
}

/// Field of view the policy was trained with.
///
/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dcc_policy_fov(policy: *const DccPolicy) -> u32 {
    policy.as_ref().map_or(0, |p| p.model.config().fov as u32)
}

/// Greedy joint action for the environment's current state under `mode`
/// (`DCC_MODE_DCC` or `DCC_MODE_RR_N2`), written to `actions` (length
/// `n`, the agent count). `comm_pairs`, when non-null,
/// receives the number of requests sent this step. Updates the policy's
/// recurrent state; the environment is not stepped.
///
/// # Safety
/// `actions` must point to `n` writable bytes; `comm_pairs`, when
/// non-null, to one writable `u32`.
#[no_mangle]
pub unsafe extern "C" fn dcc_policy_act(
    policy: *mut DccPolicy,
    env: *const DccEnv,
    mode: u32,
    actions: *mut u8,
    n: usize,
    comm_pairs: *mut u32,
) -> DccStatus {
    guard(|| {
        let policy = policy.as_mut().ok_or_else(|| null("policy"))?;
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if actions.is_null() {
            return Err(null("actions"));
        }
        let agents = env.inner.num_agents();
        if n != agents {
            return Err(invalid(format!("expected {agents} agents, got {n}")));
        }
        if env.inner.fov() != policy.model.config().fov {
            return Err(invalid(format!(
                "environment fov {} differs from the policy's {}",
                env.inner.fov(),
                policy.model.config().fov
            )));
        }
        if policy.hidden.len() != agents {
            policy.hidden = vec![vec![0.0; policy.model.hidden()]; agents];
        }
        let mode = match mode {
            DCC_MODE_DCC => ScopeMode::Dcc,
            DCC_MODE_RR_N2 => ScopeMode::RrN2,
            other => return Err(invalid(format!("unknown mode {other}"))),
        };
        // greedy, so the generator is never drawn from
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let d = act(
            &policy.model,
            &policy.store,
            &env.inner.observe_all(),
            &env.inner.all_neighbors(),
            &policy.hidden,
            0.0,
            mode,
            &mut rng,
        )
        .map_err(core_err)?;
        for (i, a) in d.actions.iter().enumerate() {
            *actions.add(i) = a.index() as u8;
        }
        if !comm_pairs.is_null() {
            *comm_pairs = d.comm_count() as u32;
        }
        policy.hidden = d.hidden;
        Ok(())
    })
}
