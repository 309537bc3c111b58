//! C ABI over `loho`.
//!
//! Scenes and episodes are opaque heap handles owned by the caller and released
//! with their `_free` function. Every fallible call returns a [`LohoStatus`];
//! on anything but `LOHO_STATUS_OK` a message is available from
//! [`loho_last_error`] on the same thread until the next fallible call there.
//! Panics never cross the boundary; they surface as `LOHO_STATUS_PANIC`.
//!
//! Trajectories for the metric functions are interleaved `x0, y0, x1, y1, ...`
//! arrays in the unit square, `len` counting points rather than doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use loho::executor::executor_by_name;
use loho::manager::{manager_by_name, DEFAULT_WAYPOINTS};
use loho::metrics::{self, progress_score, NormTrajectory};
use loho::render::{render_trace, Canvas, TraceStyle};
use loho::{
    run_episode, EpisodeConfig, EpisodeLog, ExecutorConfig, Mode, Outcome, Pixel, PurePursuit, Scene, ScriptedManager, Trace,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LohoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Run = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LohoOutcome {
    Success = 0,
    BudgetExhausted = 1,
    TraceExhausted = 2,
}

/// A validated scene. Opaque to C.
pub struct LohoScene {
    scene: Scene,
}

/// A finished episode and its full log. Opaque to C.
pub struct LohoEpisode {
    log: EpisodeLog,
}

/// Episode settings. Fill with `loho_episode_params_default`, then adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LohoEpisodeParams {
    pub seed: u64,
    pub manager_interval: u64,
    pub step_budget: u64,
    pub p_slip: f64,
    pub drop_radius: f64,
    /// Waypoints per manager trace.
    pub waypoints: u32,
    /// Nonzero runs the plan-once baseline instead of the closed loop.
    pub open_loop: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(LohoStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Self(LohoStatus::InvalidArgument, msg.into())
    }
}

fn set_last_error(msg: String) {
    let text = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LohoStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure(LohoStatus::Panic, format!("panic: {msg}")))
    });
    match result {
        Ok(()) => LohoStatus::Ok,
        Err(Failure(status, msg)) => {
            set_last_error(msg);
            status
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(LohoStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(LohoStatus::NullPointer, format!("{what} is null")))
}

unsafe fn trajectory(xy: *const f64, len: usize, what: &str) -> Result<NormTrajectory, Failure> {
    if xy.is_null() {
        return Err(Failure(LohoStatus::NullPointer, format!("{what} is null")));
    }
    let flat = std::slice::from_raw_parts(xy, len.checked_mul(2).ok_or_else(|| Failure::invalid("length overflow"))?);
    let points = flat.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    NormTrajectory::new(points).map_err(|e| Failure::invalid(format!("{what}: {e}")))
}

/// Message for the last failed call on this thread, or NULL. The pointer stays
/// valid until the next fallible call on the same thread.
#[no_mangle]
pub extern "C" fn loho_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses and validates a scene from NUL-terminated UTF-8 JSON.
///
/// # Safety
/// `json` must be NULL or a valid C string; `out_scene` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn loho_scene_from_json(json: *const c_char, out_scene: *mut *mut LohoScene) -> LohoStatus {
    guard(|| {
        let slot = out(out_scene, "out_scene")?;
        *slot = ptr::null_mut();
        let text = deref(json, "json")?;
        let text = CStr::from_ptr(text)
            .to_str()
            .map_err(|e| Failure(LohoStatus::Parse, format!("scene is not UTF-8: {e}")))?;
        let scene = Scene::from_json(text).map_err(|e| Failure(LohoStatus::Parse, e.to_string()))?;
        *slot = Box::into_raw(Box::new(LohoScene { scene }));
        Ok(())
    })
}

/// # Safety
/// `scene` must be NULL or a handle from `loho_scene_from_json` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn loho_scene_free(scene: *mut LohoScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Closed-loop defaults for `scene`, taking seed and failure settings from it.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn loho_episode_params_default(
    scene: *const LohoScene,
    out_params: *mut LohoEpisodeParams,
) -> LohoStatus {
    guard(|| {
        let scene = &deref(scene, "scene")?.scene;
        let cfg = EpisodeConfig::from_scene(scene);
        *out(out_params, "out_params")? = LohoEpisodeParams {
            seed: cfg.seed,
            manager_interval: cfg.manager_interval,
            step_budget: cfg.step_budget,
            p_slip: cfg.failure.p_slip,
            drop_radius: cfg.failure.drop_radius,
            waypoints: DEFAULT_WAYPOINTS as u32,
            open_loop: 0,
        };
        Ok(())
    })
}

/// Runs one episode with the scripted manager and pure-pursuit executor.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn loho_run_episode(
    scene: *const LohoScene,
    params: *const LohoEpisodeParams,
    out_episode: *mut *mut LohoEpisode,
) -> LohoStatus {
    guard(|| {
        let slot = out(out_episode, "out_episode")?;
        *slot = ptr::null_mut();
        let scene = &deref(scene, "scene")?.scene;
        let p = deref(params, "params")?;
        let mut cfg = EpisodeConfig::from_scene(scene).with_seed(p.seed);
        cfg.manager_interval = p.manager_interval;
        cfg.step_budget = p.step_budget;
        cfg.failure.p_slip = p.p_slip;
        cfg.failure.drop_radius = p.drop_radius;
        cfg.mode = if p.open_loop != 0 { Mode::OpenLoop } else { Mode::ClosedLoop };
        if p.waypoints < 2 {
            return Err(Failure::invalid(format!("waypoints must be >= 2, got {}", p.waypoints)));
        }
        let manager = manager_by_name(ScriptedManager::NAME, p.waypoints as usize).expect("scripted manager is registered");
        let executor = executor_by_name(PurePursuit::NAME, ExecutorConfig::for_sim(scene.projection(), &scene.params))
            .expect("pure_pursuit executor is registered");
        let log = run_episode(&cfg, scene, manager.as_ref(), executor.as_ref())
            .map_err(|e| Failure(LohoStatus::Run, e.to_string()))?;
        *slot = Box::into_raw(Box::new(LohoEpisode { log }));
        Ok(())
    })
}

/// # Safety
/// `episode` must be NULL or a handle from `loho_run_episode` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn loho_episode_free(episode: *mut LohoEpisode) {
    if !episode.is_null() {
        drop(Box::from_raw(episode));
    }
}

/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn loho_episode_outcome(episode: *const LohoEpisode, out_outcome: *mut LohoOutcome) -> LohoStatus {
    guard(|| {
        let log = &deref(episode, "episode")?.log;
        *out(out_outcome, "out_outcome")? = match log.outcome {
            Outcome::Success => LohoOutcome::Success,
            Outcome::BudgetExhausted => LohoOutcome::BudgetExhausted,
            Outcome::TraceExhausted => LohoOutcome::TraceExhausted,
        };
        Ok(())
    })
}

/// Simulator steps taken.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn loho_episode_frames(episode: *const LohoEpisode, out_frames: *mut u64) -> LohoStatus {
    guard(|| {
        *out(out_frames, "out_frames")? = deref(episode, "episode")?.log.frames();
        Ok(())
    })
}

/// Manager invocations made.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn loho_episode_invocations(episode: *const LohoEpisode, out_count: *mut u64) -> LohoStatus {
    guard(|| {
        *out(out_count, "out_count")? = deref(episode, "episode")?.log.invocations.len() as u64;
        Ok(())
    })
}

/// Fraction of plan primitives the final frame shows as done.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn loho_episode_progress(episode: *const LohoEpisode, out_score: *mut f64) -> LohoStatus {
    guard(|| {
        *out(out_score, "out_score")? = progress_score(&deref(episode, "episode")?.log);
        Ok(())
    })
}

/// The episode log as JSON lines. Release with `loho_string_free`.
///
/// # Safety
/// Pointers must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn loho_episode_to_jsonl(episode: *const LohoEpisode, out_text: *mut *mut c_char) -> LohoStatus {
    guard(|| {
        let slot = out(out_text, "out_text")?;
        *slot = ptr::null_mut();
        let text = deref(episode, "episode")?.log.to_jsonl();
        *slot = CString::new(text).expect("JSON has no interior nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `text` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn loho_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}

/// Discrete Fréchet distance between two unit-square trajectories.
///
/// # Safety
/// `a` and `b` must point to `2 * a_len` and `2 * b_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn loho_dfd(a: *const f64, a_len: usize, b: *const f64, b_len: usize, out_value: *mut f64) -> LohoStatus {
    guard(|| {
        let value = metrics::dfd(&trajectory(a, a_len, "a")?, &trajectory(b, b_len, "b")?);
        *out(out_value, "out_value")? = value;
        Ok(())
    })
}

/// Symmetric Hausdorff distance between the point sets of two trajectories.
///
/// # Safety
/// `a` and `b` must point to `2 * a_len` and `2 * b_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn loho_hausdorff(
    a: *const f64,
    a_len: usize,
    b: *const f64,
    b_len: usize,
    out_value: *mut f64,
) -> LohoStatus {
    guard(|| {
        let value = metrics::hausdorff(&trajectory(a, a_len, "a")?, &trajectory(b, b_len, "b")?);
        *out(out_value, "out_value")? = value;
        Ok(())
    })
}

/// RMSE after resampling both trajectories to `samples` points by arc length.
///
/// # Safety
/// `a` and `b` must point to `2 * a_len` and `2 * b_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn loho_rmse(
    a: *const f64,
    a_len: usize,
    b: *const f64,
    b_len: usize,
    samples: usize,
    out_value: *mut f64,
) -> LohoStatus {
    guard(|| {
        let value = metrics::rmse(&trajectory(a, a_len, "a")?, &trajectory(b, b_len, "b")?, samples)
            .map_err(|e| Failure::invalid(e.to_string()))?;
        *out(out_value, "out_value")? = value;
        Ok(())
    })
}

/// Draws a trace of `len` interleaved pixel waypoints in `[0, 1000]` onto a
/// black `width` x `height` canvas and returns it as a binary PPM.
/// Release with `loho_bytes_free`.
///
/// # Safety
/// `xy` must point to `2 * len` ints; out pointers must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn loho_render_trace_ppm(
    xy: *const i32,
    len: usize,
    width: u32,
    height: u32,
    gradient: u8,
    out_bytes: *mut *mut u8,
    out_len: *mut usize,
) -> LohoStatus {
    guard(|| {
        let bytes_slot = out(out_bytes, "out_bytes")?;
        let len_slot = out(out_len, "out_len")?;
        *bytes_slot = ptr::null_mut();
        *len_slot = 0;
        let flat = std::slice::from_raw_parts(deref(xy, "xy")?, len.checked_mul(2).ok_or_else(|| Failure::invalid("length overflow"))?);
        let waypoints = flat.chunks_exact(2).map(|c| Pixel::new(c[0], c[1])).collect();
        let trace = Trace::new(waypoints).map_err(|e| Failure::invalid(e.to_string()))?;
        let canvas = Canvas::new(width, height, [0; 3]).map_err(|e| Failure::invalid(e.to_string()))?;
        let style = TraceStyle {
            gradient: gradient != 0,
            ..TraceStyle::default()
        };
        let ppm = render_trace(canvas, &trace, &style).to_ppm().into_boxed_slice();
        *len_slot = ppm.len();
        *bytes_slot = Box::into_raw(ppm).cast::<u8>();
        Ok(())
    })
}

/// # Safety
/// `bytes` and `len` must come from one successful `loho_render_trace_ppm`.
#[no_mangle]
pub unsafe extern "C" fn loho_bytes_free(bytes: *mut u8, len: usize) {
    if !bytes.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(bytes, len)));
    }
}
