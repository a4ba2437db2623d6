//! C ABI over the synthtask core.
//!
//! Every function returns an [`StStatus`]. On failure a message is kept per
//! thread and can be read with [`st_last_error_message`]. Strings returned
//! through out-pointers are owned by the caller and released with
//! [`st_string_free`]. Handles are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use synthtask::ctga::serialize_generator_pair;
use synthtask::generator::{parse_generation, ParseError};
use synthtask::metrics::{macro_f1, mean_stderr, micro_f1, squad_f1};
use synthtask::registry::{load_registry, MetaTemplate, TaskType};
use synthtask::template::{parse_template, render, render_choices, RenderContext, Template};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    TemplateSyntax = 4,
    RenderFailed = 5,
    Unparsable = 6,
    EmptySide = 7,
    FramingFailed = 8,
    UnknownTaskType = 9,
    MetricFailed = 10,
    RegistryFailed = 11,
    OutOfRange = 12,
    Panic = 13,
}

/// Parsed template.
pub struct StTemplate {
    inner: Template,
}

/// Loaded meta-template registry.
pub struct StRegistry {
    entries: Vec<MetaTemplate>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(StStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: StStatus, message: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, message.into()))
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> StStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            StStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            StStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(StStatus::NullArgument, format!("`{name}` is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(StStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut().map_or_else(|| fail(StStatus::NullArgument, format!("`{name}` is null")), Ok)
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(StStatus::NullArgument, format!("`{name}` is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', "\u{FFFD}")).expect("interior nul removed").into_raw()
}

fn context_from_json(bindings_json: &str, seed: u64) -> FfiResult<RenderContext> {
    let value: serde_json::Value = serde_json::from_str(bindings_json).or_else(|e| fail(StStatus::InvalidJson, e.to_string()))?;
    match value {
        serde_json::Value::Object(map) => Ok(RenderContext::from_json_object(&map, seed)),
        _ => fail(StStatus::InvalidJson, "bindings must be a JSON object"),
    }
}

/// Message from the most recent call on this thread if it failed,
/// otherwise null. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn st_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn st_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn st_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `source` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_template_parse(source: *const c_char, out: *mut *mut StTemplate) -> StStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let source = str_arg(source, "source")?;
        let inner = parse_template(source).or_else(|e| fail(StStatus::TemplateSyntax, e.to_string()))?;
        *out = Box::into_raw(Box::new(StTemplate { inner }));
        Ok(())
    })
}

/// # Safety
/// `template` must come from [`st_template_parse`], or be null.
#[no_mangle]
pub unsafe extern "C" fn st_template_free(template: *mut StTemplate) {
    if !template.is_null() {
        drop(Box::from_raw(template));
    }
}

/// Whether the template declares answer choices.
///
/// # Safety
/// `template` must be a live handle, or null.
#[no_mangle]
pub unsafe extern "C" fn st_template_has_choices(template: *const StTemplate) -> bool {
    template.as_ref().is_some_and(|t| t.inner.has_choices())
}

/// Renders with variables taken from a JSON object.
///
/// # Safety
/// `template` must be a live handle, `bindings_json` a nul-terminated
/// string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn st_template_render(
    template: *const StTemplate,
    bindings_json: *const c_char,
    seed: u64,
    out: *mut *mut c_char,
) -> StStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let template = template.as_ref().map_or_else(|| fail(StStatus::NullArgument, "`template` is null"), Ok)?;
        let ctx = context_from_json(str_arg(bindings_json, "bindings_json")?, seed)?;
        let text = render(&template.inner, &ctx).or_else(|e| fail(StStatus::RenderFailed, e.to_string()))?;
        *out = to_c(text);
        Ok(())
    })
}

/// Renders the answer choices as a JSON array of strings.
///
/// # Safety
/// As for [`st_template_render`].
#[no_mangle]
pub unsafe extern "C" fn st_template_render_choices(
    template: *const StTemplate,
    bindings_json: *const c_char,
    seed: u64,
    out_json: *mut *mut c_char,
) -> StStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let template = template.as_ref().map_or_else(|| fail(StStatus::NullArgument, "`template` is null"), Ok)?;
        let ctx = context_from_json(str_arg(bindings_json, "bindings_json")?, seed)?;
        let choices = render_choices(&template.inner, &ctx).or_else(|e| fail(StStatus::RenderFailed, e.to_string()))?;
        *out = to_c(serde_json::to_string(&choices).expect("strings serialize"));
        Ok(())
    })
}

/// Splits generator output on its `<|pipe|>` line and substitutes `context`.
///
/// # Safety
/// String arguments must be nul-terminated; out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn st_parse_generation(
    raw: *const c_char,
    context: *const c_char,
    out_instruction: *mut *mut c_char,
    out_response: *mut *mut c_char,
) -> StStatus {
    guard(|| {
        let oi = out_arg(out_instruction, "out_instruction")?;
        let or = out_arg(out_response, "out_response")?;
        *oi = ptr::null_mut();
        *or = ptr::null_mut();
        let (instruction, response) = parse_generation(str_arg(raw, "raw")?, str_arg(context, "context")?).or_else(|e| match e {
            ParseError::Unparsable => fail(StStatus::Unparsable, e.to_string()),
            ParseError::EmptySide(_) => fail(StStatus::EmptySide, e.to_string()),
        })?;
        *oi = to_c(instruction);
        *or = to_c(response);
        Ok(())
    })
}

/// Frames one example for generator training.
///
/// # Safety
/// String arguments must be nul-terminated; out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn st_serialize_generator_pair(
    task_type: *const c_char,
    context: *const c_char,
    instruction: *const c_char,
    response: *const c_char,
    out_input: *mut *mut c_char,
    out_output: *mut *mut c_char,
) -> StStatus {
    guard(|| {
        let oi = out_arg(out_input, "out_input")?;
        let oo = out_arg(out_output, "out_output")?;
        *oi = ptr::null_mut();
        *oo = ptr::null_mut();
        let tt: TaskType = str_arg(task_type, "task_type")?
            .parse()
            .or_else(|e: synthtask::registry::UnknownTaskType| fail(StStatus::UnknownTaskType, e.to_string()))?;
        let pair = serialize_generator_pair(tt, str_arg(context, "context")?, str_arg(instruction, "instruction")?, str_arg(response, "response")?)
            .or_else(|e| fail(StStatus::FramingFailed, e.to_string()))?;
        *oi = to_c(pair.input);
        *oo = to_c(pair.output);
        Ok(())
    })
}

/// Maximum token-overlap F1 of `prediction` against `n_golds` answers.
///
/// # Safety
/// `golds` must point to `n_golds` nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn st_squad_f1(prediction: *const c_char, golds: *const *const c_char, n_golds: usize, out: *mut f64) -> StStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let prediction = str_arg(prediction, "prediction")?;
        let golds = slice_arg(golds, n_golds, "golds")?
            .iter()
            .map(|&g| str_arg(g, "golds[i]"))
            .collect::<FfiResult<Vec<&str>>>()?;
        *out = squad_f1(prediction, &golds).or_else(|e| fail(StStatus::MetricFailed, e.to_string()))?;
        Ok(())
    })
}

type LabelMetric = fn(&[usize], &[usize], usize) -> Result<f64, synthtask::metrics::MetricError>;

unsafe fn classification(
    preds: *const usize,
    golds: *const usize,
    n: usize,
    n_labels: usize,
    out: *mut f64,
    f: LabelMetric,
) -> StStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let preds = slice_arg(preds, n, "preds")?;
        let golds = slice_arg(golds, n, "golds")?;
        *out = f(preds, golds, n_labels).or_else(|e| fail(StStatus::MetricFailed, e.to_string()))?;
        Ok(())
    })
}

/// Macro-averaged F1 over labels `0..n_labels`.
///
/// # Safety
/// `preds` and `golds` must each point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn st_macro_f1(preds: *const usize, golds: *const usize, n: usize, n_labels: usize, out: *mut f64) -> StStatus {
    classification(preds, golds, n, n_labels, out, macro_f1)
}

/// Micro-averaged F1 over labels `0..n_labels`.
///
/// # Safety
/// As for [`st_macro_f1`].
#[no_mangle]
pub unsafe extern "C" fn st_micro_f1(preds: *const usize, golds: *const usize, n: usize, n_labels: usize, out: *mut f64) -> StStatus {
    classification(preds, golds, n, n_labels, out, micro_f1)
}

/// Mean and standard error of `n` values (n >= 2).
///
/// # Safety
/// `values` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn st_mean_stderr(values: *const f64, n: usize, out_mean: *mut f64, out_stderr: *mut f64) -> StStatus {
    guard(|| {
        let om = out_arg(out_mean, "out_mean")?;
        let os = out_arg(out_stderr, "out_stderr")?;
        let (m, s) = mean_stderr(slice_arg(values, n, "values")?).or_else(|e| fail(StStatus::MetricFailed, e.to_string()))?;
        *om = m;
        *os = s;
        Ok(())
    })
}

/// # Safety
/// `path` must be nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn st_registry_load(path: *const c_char, out: *mut *mut StRegistry) -> StStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let entries = load_registry(str_arg(path, "path")?).or_else(|e| fail(StStatus::RegistryFailed, e.to_string()))?;
        *out = Box::into_raw(Box::new(StRegistry { entries }));
        Ok(())
    })
}

/// # Safety
/// `registry` must be a live handle, or null.
#[no_mangle]
pub unsafe extern "C" fn st_registry_len(registry: *const StRegistry) -> usize {
    registry.as_ref().map_or(0, |r| r.entries.len())
}

/// Entry `index` as a JSON object with its id, dataset, task type, context
/// field and template sources.
///
/// # Safety
/// `registry` must be a live handle; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn st_registry_entry_json(registry: *const StRegistry, index: usize, out_json: *mut *mut c_char) -> StStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let registry = registry.as_ref().map_or_else(|| fail(StStatus::NullArgument, "`registry` is null"), Ok)?;
        let m = registry
            .entries
            .get(index)
            .map_or_else(|| fail(StStatus::OutOfRange, format!("index {index} >= {}", registry.entries.len())), Ok)?;
        let json = serde_json::json!({
            "id": m.id,
            "dataset": m.dataset,
            "task_type": m.task_type.name(),
            "context_field": m.context_field,
            "context_free": m.context_free,
            "input_template": m.input_template.source,
            "output_template": m.output_template.source,
        });
        *out = to_c(json.to_string());
        Ok(())
    })
}

/// # Safety
/// `registry` must come from [`st_registry_load`], or be null.
#[no_mangle]
pub unsafe extern "C" fn st_registry_free(registry: *mut StRegistry) {
    if !registry.is_null() {
        drop(Box::from_raw(registry));
    }
}
