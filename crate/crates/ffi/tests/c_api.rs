use std::ffi::{CStr, CString};
use std::ops::ControlFlow;
use std::path::Path;
use std::process::Command;
use std::ptr;

use dcc_core::model::ModelConfig;
use dcc_core::training::{train, TrainConfig, TrainOptions};
use dcc_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(dcc_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn env_from(text: &str, step_limit: u32, fov: u32) -> *mut DccEnv {
    let t = CString::new(text).unwrap();
    let mut env = ptr::null_mut();
    let status = unsafe { dcc_env_from_text(t.as_ptr(), step_limit, fov, &mut env) };
    assert_eq!(status, DccStatus::Ok, "{}", last_error());
    env
}

const CORRIDOR: &str = "3 1\n...\n###\n...\n0 0 0 2\n";

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(dcc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn walk_to_goal_then_episode_over() {
    let env = env_from(CORRIDOR, 10, 3);
    unsafe {
        assert_eq!(dcc_env_num_agents(env), 1);
        let mut rewards = [0f32; 1];
        let mut done = false;
        let right = [3u8];
        assert_eq!(
            dcc_env_step(env, right.as_ptr(), 1, rewards.as_mut_ptr(), &mut done),
            DccStatus::Ok
        );
        assert_eq!((rewards[0], done), (-0.075, false));
        assert_eq!(
            dcc_env_step(env, right.as_ptr(), 1, rewards.as_mut_ptr(), &mut done),
            DccStatus::Ok
        );
        assert_eq!((rewards[0], done), (3.0, true));
        assert!(dcc_env_is_success(env) && dcc_env_is_done(env));
        assert_eq!(dcc_env_step_count(env), 2);

        assert_eq!(
            dcc_env_step(env, right.as_ptr(), 1, ptr::null_mut(), ptr::null_mut()),
            DccStatus::EpisodeOver
        );
        assert!(last_error().contains("finished episode"));

        assert_eq!(dcc_env_reset(env), DccStatus::Ok);
        let (mut r, mut c) = ([9u32], [9u32]);
        assert_eq!(
            dcc_env_positions(env, r.as_mut_ptr(), c.as_mut_ptr(), 1),
            DccStatus::Ok
        );
        assert_eq!((r[0], c[0]), (0, 0));
        dcc_env_free(env);
    }
}

#[test]
fn observation_layout_is_channel_major() {
    let env = env_from(CORRIDOR, 10, 3);
    let len = dcc_observation_len(3);
    assert_eq!(len, 54);
    let mut obs = vec![7u8; len];
    unsafe {
        assert_eq!(
            dcc_env_observation(env, 0, obs.as_mut_ptr(), len),
            DccStatus::Ok
        );
        // obstacle channel, agent at (0, 0): the row above and column to the left lie off the map
        assert_eq!(&obs[..9], &[1, 1, 1, 1, 0, 0, 1, 1, 1]);
        // heuristic "right" channel at the centre cell
        assert_eq!(obs[5 * 9 + 4], 1);
        assert_eq!(
            dcc_env_observation(env, 0, obs.as_mut_ptr(), len - 1),
            DccStatus::InvalidArgument
        );
        assert_eq!(
            dcc_env_observation(env, 1, obs.as_mut_ptr(), len),
            DccStatus::InvalidArgument
        );
        dcc_env_free(env);
    }
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let mut env = ptr::null_mut();
    unsafe {
        let bad = CString::new("3 1\n..\n").unwrap();
        assert_eq!(
            dcc_env_from_text(bad.as_ptr(), 10, 3, &mut env),
            DccStatus::Parse
        );
        assert!(last_error().contains("<ffi>:2:"), "{}", last_error());
        assert_eq!(
            dcc_env_from_text(ptr::null(), 10, 3, &mut env),
            DccStatus::NullPointer
        );
        let blocked = CString::new("3 1\n.#.\n###\n...\n0 0 0 2\n").unwrap();
        assert_eq!(
            dcc_env_from_text(blocked.as_ptr(), 10, 3, &mut env),
            DccStatus::InvalidInstance
        );
        let ok = CString::new(CORRIDOR).unwrap();
        assert_eq!(
            dcc_env_from_text(ok.as_ptr(), 10, 4, &mut env),
            DccStatus::InvalidArgument
        );
        assert!(env.is_null());

        let env = env_from(CORRIDOR, 10, 3);
        let acts = [7u8];
        assert_eq!(
            dcc_env_step(env, acts.as_ptr(), 1, ptr::null_mut(), ptr::null_mut()),
            DccStatus::InvalidArgument
        );
        let two = [4u8, 4];
        assert_eq!(
            dcc_env_step(env, two.as_ptr(), 2, ptr::null_mut(), ptr::null_mut()),
            DccStatus::InvalidArgument
        );
        assert_eq!(
            dcc_env_step(
                ptr::null_mut(),
                two.as_ptr(),
                2,
                ptr::null_mut(),
                ptr::null_mut()
            ),
            DccStatus::NullPointer
        );
        dcc_env_free(env);
        dcc_env_free(ptr::null_mut());
        assert_eq!(dcc_env_num_agents(ptr::null()), 0);
    }
}

#[test]
fn generated_environments_are_seeded() {
    let make = |seed| unsafe {
        let mut env = ptr::null_mut();
        assert_eq!(
            dcc_env_generate(10, 4, 0.3, seed, 64, 9, &mut env),
            DccStatus::Ok,
            "{}",
            last_error()
        );
        let (mut r, mut c) = ([0u32; 4], [0u32; 4]);
        assert_eq!(
            dcc_env_positions(env, r.as_mut_ptr(), c.as_mut_ptr(), 4),
            DccStatus::Ok
        );
        dcc_env_free(env);
        (r, c)
    };
    assert_eq!(make(5), make(5));
    let mut env = ptr::null_mut();
    assert_eq!(
        unsafe { dcc_env_generate(2, 3, 0.0, 1, 64, 9, &mut env) },
        DccStatus::InvalidInstance
    );
}

fn tiny_checkpoint(dir: &Path) -> CString {
    let mut cfg = TrainConfig::default();
    cfg.run.steps = 0;
    cfg.model = ModelConfig {
        fov: 5,
        conv_channels: vec![4],
        kernel: 3,
        hidden: 8,
        pos_embed: 4,
        heads: 2,
        key_dim: 4,
    };
    let opts = TrainOptions {
        out_dir: dir.to_path_buf(),
        resume: false,
    };
    let summary = train(&cfg, &opts, |_| ControlFlow::Continue(())).unwrap();
    CString::new(summary.checkpoint.to_str().unwrap()).unwrap()
}

#[test]
fn policy_plays_an_episode() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_checkpoint(dir.path());
    unsafe {
        let mut policy = ptr::null_mut();
        assert_eq!(
            dcc_policy_load(path.as_ptr(), &mut policy),
            DccStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(dcc_policy_fov(policy), 5);
        let mut env = ptr::null_mut();
        assert_eq!(
            dcc_env_generate(8, 3, 0.2, 2, 20, 5, &mut env),
            DccStatus::Ok
        );
        let mut actions = [0u8; 3];
        let mut comm = 0u32;
        let mut done = false;
        while !done {
            for mode in [DCC_MODE_DCC, DCC_MODE_RR_N2] {
                assert_eq!(
                    dcc_policy_act(policy, env, mode, actions.as_mut_ptr(), 3, &mut comm),
                    DccStatus::Ok
                );
                assert!(actions.iter().all(|&a| a < 5));
            }
            assert_eq!(
                dcc_env_step(env, actions.as_ptr(), 3, ptr::null_mut(), &mut done),
                DccStatus::Ok
            );
        }
        assert_eq!(
            dcc_policy_act(policy, env, 9, actions.as_mut_ptr(), 3, &mut comm),
            DccStatus::InvalidArgument
        );
        assert_eq!(dcc_policy_reset(policy), DccStatus::Ok);

        let mut wide = ptr::null_mut();
        assert_eq!(
            dcc_env_generate(8, 3, 0.2, 2, 20, 9, &mut wide),
            DccStatus::Ok
        );
        assert_eq!(
            dcc_policy_act(
                policy,
                wide,
                DCC_MODE_DCC,
                actions.as_mut_ptr(),
                3,
                &mut comm
            ),
            DccStatus::InvalidArgument
        );
        assert!(last_error().contains("fov"));
        dcc_env_free(wide);
        dcc_env_free(env);
        dcc_policy_free(policy);

        let missing = CString::new(dir.path().join("nope.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(
            dcc_policy_load(missing.as_ptr(), &mut policy),
            DccStatus::Io
        );
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dcc.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "dcc_env_step",
        "dcc_policy_act",
        "dcc_last_error_message",
        "DCC_STATUS_EPISODE_OVER",
    ] {
        assert!(text.contains(f), "header lacks {f}");
    }
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
