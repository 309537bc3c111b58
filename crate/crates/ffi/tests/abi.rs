use std::ffi::{CStr, CString};
use std::ptr;

use loho::executor::executor_by_name;
use loho::manager::manager_by_name;
use loho::{run_episode, EpisodeConfig, ExecutorConfig, Scene};
use loho_ffi::*;

const SCENE: &str = include_str!("../../core/scenes/three_objects.json");

fn last_error() -> Option<String> {
    let p = loho_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

struct SceneHandle(*mut LohoScene);

impl Drop for SceneHandle {
    fn drop(&mut self) {
        unsafe { loho_scene_free(self.0) }
    }
}

fn scene() -> SceneHandle {
    let json = CString::new(SCENE).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { loho_scene_from_json(json.as_ptr(), &mut s) }, LohoStatus::Ok);
    assert!(!s.is_null());
    SceneHandle(s)
}

fn params(s: &SceneHandle) -> LohoEpisodeParams {
    let mut p = LohoEpisodeParams {
        seed: 0,
        manager_interval: 0,
        step_budget: 0,
        p_slip: 0.0,
        drop_radius: 0.0,
        waypoints: 0,
        open_loop: 0,
    };
    assert_eq!(unsafe { loho_episode_params_default(s.0, &mut p) }, LohoStatus::Ok);
    p
}

fn run_jsonl(s: &SceneHandle, p: &LohoEpisodeParams) -> String {
    let mut ep = ptr::null_mut();
    assert_eq!(unsafe { loho_run_episode(s.0, p, &mut ep) }, LohoStatus::Ok, "{:?}", last_error());
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { loho_episode_to_jsonl(ep, &mut text) }, LohoStatus::Ok);
    let out = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
    unsafe {
        loho_string_free(text);
        loho_episode_free(ep);
    }
    out
}

#[test]
fn defaults_come_from_scene() {
    let s = scene();
    let p = params(&s);
    let reference = Scene::from_json(SCENE).unwrap();
    assert_eq!(p.seed, reference.seed);
    assert_eq!(p.p_slip, reference.failure.p_slip);
    assert_eq!(p.manager_interval, 100);
    assert_eq!(p.step_budget, 5000);
    assert_eq!(p.waypoints, 8);
    assert_eq!(p.open_loop, 0);
}

#[test]
fn episode_matches_library_run() {
    let s = scene();
    let mut p = params(&s);
    p.seed = 11;
    p.p_slip = 0.3;
    let via_ffi = run_jsonl(&s, &p);

    let reference = Scene::from_json(SCENE).unwrap();
    let mut cfg = EpisodeConfig::from_scene(&reference).with_seed(11);
    cfg.failure.p_slip = 0.3;
    let manager = manager_by_name("scripted", 8).unwrap();
    let executor = executor_by_name("pure_pursuit", ExecutorConfig::for_sim(reference.projection(), &reference.params)).unwrap();
    let log = run_episode(&cfg, &reference, manager.as_ref(), executor.as_ref()).unwrap();
    assert_eq!(via_ffi, log.to_jsonl());
    assert_eq!(via_ffi, run_jsonl(&s, &p));
}

#[test]
fn accessors_report_outcome() {
    let s = scene();
    let p = params(&s);
    let mut ep = ptr::null_mut();
    assert_eq!(unsafe { loho_run_episode(s.0, &p, &mut ep) }, LohoStatus::Ok);
    let mut outcome = LohoOutcome::TraceExhausted;
    let mut frames = 0u64;
    let mut calls = 0u64;
    let mut progress = -1.0;
    unsafe {
        assert_eq!(loho_episode_outcome(ep, &mut outcome), LohoStatus::Ok);
        assert_eq!(loho_episode_frames(ep, &mut frames), LohoStatus::Ok);
        assert_eq!(loho_episode_invocations(ep, &mut calls), LohoStatus::Ok);
        assert_eq!(loho_episode_progress(ep, &mut progress), LohoStatus::Ok);
        loho_episode_free(ep);
    }
    assert_eq!(outcome, LohoOutcome::Success);
    assert!(frames > 0);
    assert_eq!(calls, frames.div_ceil(100) + u64::from(frames.is_multiple_of(100)));
    assert_eq!(progress, 1.0);

    let mut tight = p;
    tight.step_budget = 10;
    let mut ep = ptr::null_mut();
    unsafe {
        assert_eq!(loho_run_episode(s.0, &tight, &mut ep), LohoStatus::Ok);
        assert_eq!(loho_episode_outcome(ep, &mut outcome), LohoStatus::Ok);
        assert_eq!(loho_episode_frames(ep, &mut frames), LohoStatus::Ok);
        loho_episode_free(ep);
    }
    assert_eq!(outcome, LohoOutcome::BudgetExhausted);
    assert_eq!(frames, 10);
}

#[test]
fn errors_set_status_and_message() {
    let mut s = ptr::null_mut();
    let bad = CString::new("{\"schema\": 2}").unwrap();
    assert_eq!(unsafe { loho_scene_from_json(bad.as_ptr(), &mut s) }, LohoStatus::Parse);
    assert!(s.is_null());
    assert!(last_error().is_some());

    assert_eq!(unsafe { loho_scene_from_json(ptr::null(), &mut s) }, LohoStatus::NullPointer);
    assert_eq!(last_error().as_deref(), Some("json is null"));

    let handle = scene();
    assert_eq!(last_error(), None, "success clears the last error");

    let mut p = params(&handle);
    p.manager_interval = 0;
    let mut ep = ptr::null_mut();
    assert_eq!(unsafe { loho_run_episode(handle.0, &p, &mut ep) }, LohoStatus::Run);
    assert!(ep.is_null());
    assert!(last_error().unwrap().contains("manager_interval"));

    p.manager_interval = 100;
    p.waypoints = 1;
    assert_eq!(unsafe { loho_run_episode(handle.0, &p, &mut ep) }, LohoStatus::InvalidArgument);

    let mut v = 0.0;
    assert_eq!(unsafe { loho_dfd(ptr::null(), 1, [0.0, 0.0].as_ptr(), 1, &mut v) }, LohoStatus::NullPointer);
    assert_eq!(unsafe { loho_dfd([0.0, 1.5].as_ptr(), 1, [0.0, 0.0].as_ptr(), 1, &mut v) }, LohoStatus::InvalidArgument);
    assert_eq!(unsafe { loho_dfd([0.0, 0.0].as_ptr(), 0, [0.0, 0.0].as_ptr(), 1, &mut v) }, LohoStatus::InvalidArgument);
}

#[test]
fn last_error_is_per_thread() {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { loho_scene_from_json(ptr::null(), &mut s) }, LohoStatus::NullPointer);
    assert!(last_error().is_some());
    std::thread::spawn(|| assert_eq!(last_error(), None)).join().unwrap();
    assert!(last_error().is_some());
}

#[test]
fn metrics_on_hand_computed_pairs() {
    // parallel unit segments one apart: every coupling and every resampled pair is 1 apart
    let a = [0.0, 0.0, 1.0, 0.0];
    let b = [0.0, 1.0, 1.0, 1.0];
    // single points at a 3-4-5 offset
    let c = [0.0, 0.0];
    let d = [0.3, 0.4];
    // f's far end sits 0.5 beyond e's, so the directed distance f -> e is 0.5
    let e = [0.0, 0.0, 0.5, 0.0];
    let f = [0.0, 0.0, 1.0, 0.0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(loho_dfd(a.as_ptr(), 2, b.as_ptr(), 2, &mut v), LohoStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(loho_hausdorff(a.as_ptr(), 2, b.as_ptr(), 2, &mut v), LohoStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(loho_rmse(a.as_ptr(), 2, b.as_ptr(), 2, 64, &mut v), LohoStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);

        assert_eq!(loho_dfd(c.as_ptr(), 1, d.as_ptr(), 1, &mut v), LohoStatus::Ok);
        assert!((v - 0.5).abs() < 1e-12);
        assert_eq!(loho_rmse(c.as_ptr(), 1, d.as_ptr(), 1, 2, &mut v), LohoStatus::Ok);
        assert!((v - 0.5).abs() < 1e-12);

        assert_eq!(loho_hausdorff(e.as_ptr(), 2, f.as_ptr(), 2, &mut v), LohoStatus::Ok);
        assert!((v - 0.5).abs() < 1e-12);
        assert_eq!(loho_rmse(e.as_ptr(), 2, f.as_ptr(), 2, 1, &mut v), LohoStatus::InvalidArgument);
    }
}

#[test]
fn renders_ppm() {
    let xy = [0, 0, 1000, 1000];
    let (mut bytes, mut len) = (ptr::null_mut(), 0usize);
    assert_eq!(unsafe { loho_render_trace_ppm(xy.as_ptr(), 2, 32, 24, 1, &mut bytes, &mut len) }, LohoStatus::Ok);
    let ppm = unsafe { std::slice::from_raw_parts(bytes, len) }.to_vec();
    unsafe { loho_bytes_free(bytes, len) };
    let header = b"P6\n32 24\n255\n";
    assert!(ppm.starts_with(header));
    assert_eq!(ppm.len(), header.len() + 32 * 24 * 3);
    assert!(ppm[header.len()..].iter().any(|&b| b != 0));

    let outside = [0, 0, 1001, 0];
    assert_eq!(
        unsafe { loho_render_trace_ppm(outside.as_ptr(), 2, 32, 24, 0, &mut bytes, &mut len) },
        LohoStatus::InvalidArgument
    );
    assert!(bytes.is_null());
    assert_eq!(len, 0);
    assert_eq!(
        unsafe { loho_render_trace_ppm(xy.as_ptr(), 1, 32, 24, 0, &mut bytes, &mut len) },
        LohoStatus::InvalidArgument
    );
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        loho_scene_free(ptr::null_mut());
        loho_episode_free(ptr::null_mut());
        loho_string_free(ptr::null_mut());
        loho_bytes_free(ptr::null_mut(), 0);
    }
}
