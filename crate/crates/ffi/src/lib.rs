//! C ABI over `clova_core`.
//!
//! Every function returns a [`ClovaStatus`]. On failure the message is
//! available from [`clova_last_error`] on the same thread. Strings handed
//! out by the library are freed with [`clova_string_free`]; runners with
//! [`clova_runner_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use clova_core::backend::{from_selector, Backend, BACKEND_ENV};
use clova_core::bench::{generate_benchmark, BenchmarkSpec, Bundle};
use clova_core::controller::{run_test_stage, run_training_stage, ControllerConfig, Runtime, State};
use clova_core::demos::HashedNgramEmbedder;
use clova_core::dsl::{parse_program, pretty_print, validate};
use clova_core::model::Split;
use clova_core::tools::standard_signatures;
use clova_core::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClovaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    MalformedSpec = 3,
    OutputExists = 4,
    Backend = 5,
    MissingState = 6,
    Io = 7,
    InvalidProgram = 8,
    Internal = 9,
}

/// Opaque handle: a loaded bundle, its backend and the current state.
pub struct ClovaRunner {
    bundle: Bundle,
    cfg: ControllerConfig,
    backend: Box<dyn Backend>,
    embedder: HashedNgramEmbedder,
    state: State,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(ClovaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Spec(_) => ClovaStatus::MalformedSpec,
            Error::Backend(_) | Error::Learning(clova_core::learning::LearningError::Backend(_)) => ClovaStatus::Backend,
            Error::State(_) => ClovaStatus::MissingState,
            Error::Io { .. } | Error::Json { .. } => ClovaStatus::Io,
            Error::Lex(_) | Error::Parse(_) => ClovaStatus::InvalidProgram,
            _ => ClovaStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> ClovaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ClovaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ClovaStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` is null or a NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> FfiResult<&'a str> {
    if ptr.is_null() {
        return Err(Failure(ClovaStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(ClovaStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// As [`read_str`]; null maps to `None`.
unsafe fn read_opt_path(ptr: *const c_char, what: &str) -> FfiResult<Option<PathBuf>> {
    if ptr.is_null() {
        Ok(None)
    } else {
        read_str(ptr, what).map(|s| Some(PathBuf::from(s)))
    }
}

fn out_string(out: *mut *mut c_char, text: String) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure(ClovaStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(text).map_err(|_| Failure(ClovaStatus::Internal, "string contains NUL".into()))?;
    // SAFETY: checked non-null; the caller owns the slot.
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn runner_mut<'a>(runner: *mut ClovaRunner) -> FfiResult<&'a mut ClovaRunner> {
    // SAFETY: handles come from `clova_runner_open` and are not shared across threads by contract.
    unsafe { runner.as_mut() }.ok_or_else(|| Failure(ClovaStatus::NullArgument, "runner is null".into()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn clova_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version has no interior NUL"),
    };
    VERSION.as_ptr()
}

/// Message of the last failure on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn clova_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clova_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn write_bundle(spec: BenchmarkSpec, out: &Path) -> FfiResult<()> {
    if out.read_dir().is_ok_and(|mut d| d.next().is_some()) {
        return Err(Failure(ClovaStatus::OutputExists, format!("{} is not empty", out.display())));
    }
    let bench = generate_benchmark(&spec).map_err(Error::from)?;
    bench.write(out)?;
    let cfg = ControllerConfig::default();
    State::fresh(bench.toolkit, &HashedNgramEmbedder::default(), cfg.demo_capacity, &cfg.learning)
        .save(&out.join("state"))?;
    Ok(())
}

/// Generates a benchmark bundle with its initial state in `out_dir`.
/// `spec_json` may be null for the desk preset; `seed` overrides the spec seed.
///
/// # Safety
/// String arguments are null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn clova_generate_bundle(spec_json: *const c_char, seed: u64, out_dir: *const c_char) -> ClovaStatus {
    guard(|| {
        let out = PathBuf::from(read_str(out_dir, "out_dir")?);
        let mut spec = if spec_json.is_null() {
            BenchmarkSpec::desk_preset(seed)
        } else {
            let text = read_str(spec_json, "spec_json")?;
            let spec: BenchmarkSpec =
                serde_json::from_str(text).map_err(|e| Failure(ClovaStatus::MalformedSpec, e.to_string()))?;
            spec.check().map_err(Error::from)?;
            spec
        };
        spec.seed = seed;
        write_bundle(spec, &out)
    })
}

/// Opens a bundle. `state_dir` may be null for the bundle's initial state.
/// The backend follows the environment selector, else the bundle rules.
///
/// # Safety
/// String arguments are null or NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn clova_runner_open(
    bundle_dir: *const c_char,
    state_dir: *const c_char,
    out: *mut *mut ClovaRunner,
) -> ClovaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(ClovaStatus::NullArgument, "out is null".into()));
        }
        let dir = PathBuf::from(read_str(bundle_dir, "bundle_dir")?);
        let state_dir = read_opt_path(state_dir, "state_dir")?.unwrap_or_else(|| dir.join("state"));
        let bundle = Bundle::load(&dir)?;
        let cfg = ControllerConfig {
            rho_dataset: bundle.spec.corruption.dataset,
            rho_web: bundle.spec.corruption.web,
            seed: bundle.spec.seed,
            ..Default::default()
        };
        let selector = std::env::var(BACKEND_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("scripted:{}", bundle.rules_path().display()));
        let backend = from_selector(&selector).map_err(Error::from)?;
        let state = State::load(&state_dir, &cfg.learning)?;
        let runner = Box::new(ClovaRunner {
            bundle,
            cfg,
            backend,
            embedder: HashedNgramEmbedder::default(),
            state,
        });
        *out = Box::into_raw(runner);
        Ok(())
    })
}

/// Releases a runner. Null is ignored.
///
/// # Safety
/// `runner` is null or came from [`clova_runner_open`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn clova_runner_free(runner: *mut ClovaRunner) {
    if !runner.is_null() {
        drop(Box::from_raw(runner));
    }
}

/// Runs learning episodes over the training split. `out_episodes` may be null.
///
/// # Safety
/// `runner` is a live handle; `out_episodes` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn clova_runner_train(runner: *mut ClovaRunner, out_episodes: *mut usize) -> ClovaStatus {
    guard(|| {
        let r = runner_mut(runner)?;
        let tasks = r.bundle.split(Split::Train);
        let rt = Runtime {
            backend: r.backend.as_ref(),
            scenes: &r.bundle.scenes,
            embedder: &r.embedder,
            cfg: &r.cfg,
        };
        let records = run_training_stage(&rt, &mut r.state, &tasks, &mut |_| {})?;
        if !out_episodes.is_null() {
            *out_episodes = records.len();
        }
        Ok(())
    })
}

/// Evaluates the current state on the test split with `jobs` threads.
/// Writes the accuracy, or NaN when the split is empty.
///
/// # Safety
/// `runner` is a live handle; `out_accuracy` is writable.
#[no_mangle]
pub unsafe extern "C" fn clova_runner_eval(runner: *mut ClovaRunner, jobs: usize, out_accuracy: *mut f64) -> ClovaStatus {
    guard(|| {
        let r = runner_mut(runner)?;
        if out_accuracy.is_null() {
            return Err(Failure(ClovaStatus::NullArgument, "out_accuracy is null".into()));
        }
        let tasks = r.bundle.split(Split::Test);
        let rt = Runtime {
            backend: r.backend.as_ref(),
            scenes: &r.bundle.scenes,
            embedder: &r.embedder,
            cfg: &r.cfg,
        };
        let (_, metrics) = run_test_stage(&rt, &r.state, &tasks, jobs.max(1))?;
        *out_accuracy = metrics.accuracy.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Writes the current state checkpoint to `dir`.
///
/// # Safety
/// `runner` is a live handle; `dir` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn clova_runner_save_state(runner: *mut ClovaRunner, dir: *const c_char) -> ClovaStatus {
    guard(|| {
        let r = runner_mut(runner)?;
        let dir = read_str(dir, "dir")?;
        r.state.save(Path::new(dir))?;
        Ok(())
    })
}

/// Hex SHA-256 of the current state. Free the string with [`clova_string_free`].
///
/// # Safety
/// `runner` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn clova_runner_state_hash(runner: *mut ClovaRunner, out: *mut *mut c_char) -> ClovaStatus {
    guard(|| {
        let r = runner_mut(runner)?;
        out_string(out, r.state.hash())
    })
}

/// Parses and validates a program, returning its canonical text.
///
/// # Safety
/// `source` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn clova_program_canonicalize(source: *const c_char, out: *mut *mut c_char) -> ClovaStatus {
    guard(|| {
        let ast = parse_program(read_str(source, "source")?)?;
        let diags = validate(&ast, &standard_signatures());
        if !diags.is_empty() {
            let msg: Vec<String> = diags.iter().map(ToString::to_string).collect();
            return Err(Failure(ClovaStatus::InvalidProgram, msg.join("; ")));
        }
        out_string(out, pretty_print(&ast))
    })
}
