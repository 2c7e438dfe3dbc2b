//! C ABI over the `fedmvc` engine.
//!
//! Every fallible call returns an [`FmvcStatus`]. On failure, a description
//! is kept per thread and can be read with [`fmvc_last_error`]. Datasets and
//! session outcomes are opaque handles released with their `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fedmvc::client::Ablation;
use fedmvc::data::{apply_missing, load_views, synth_blobs, MissingSpec, MultiViewData, SynthSpec, ViewDataset};
use fedmvc::federation::{run_session, PretrainWeights, SessionConfig, SessionOutcome};
use fedmvc::metrics;
use fedmvc::{Error, Matrix};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmvcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Degenerate = 4,
    Protocol = 5,
    Io = 6,
    TrainingAborted = 7,
    Config = 8,
    /// The requested value does not exist, e.g. metrics without labels.
    Unavailable = 9,
    BufferTooSmall = 10,
    Panic = 99,
}

/// Values accepted in [`FmvcConfig::ablation`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmvcAblation {
    Full = 0,
    NoMigration = 1,
    NoFusionModule = 2,
    NoGlobalGuidance = 3,
    NoGlobalHead = 4,
}

/// Session settings. Obtain defaults from [`fmvc_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmvcConfig {
    pub clusters: usize,
    pub rounds: usize,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub k_neighbors: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub learning_rate: f64,
    /// Seeded k-means runs wherever centers are fitted.
    pub kmeans_restarts: usize,
    /// One of [`FmvcAblation`].
    pub ablation: u32,
    /// Non-zero: weight pre-training fusion by sample presence.
    pub pretrain_presence: u8,
    /// Non-zero: train clients on separate threads.
    pub parallel: u8,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FmvcScores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

/// Opaque multi-view dataset.
pub struct FmvcDataset {
    samples: usize,
    views: Vec<ViewDataset>,
    labels: Option<Vec<usize>>,
}

/// Opaque result of a finished session.
pub struct FmvcOutcome {
    inner: SessionOutcome,
}

struct Failure {
    status: FmvcStatus,
    msg: String,
}

impl Failure {
    fn new(status: FmvcStatus, msg: impl Into<String>) -> Self {
        Self { status, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } => FmvcStatus::Shape,
            Error::Parameter(_) | Error::Numeric(_) => FmvcStatus::InvalidArgument,
            Error::DegenerateInput(_)
            | Error::DegenerateCluster { .. }
            | Error::DegenerateClustering(_)
            | Error::DegenerateWeights(_) => FmvcStatus::Degenerate,
            Error::Protocol(_) | Error::Decode(_) => FmvcStatus::Protocol,
            Error::TrainingAborted { .. } | Error::Client { .. } => FmvcStatus::TrainingAborted,
            Error::Load { .. } | Error::Io(_) => FmvcStatus::Io,
            Error::Config(_) => FmvcStatus::Config,
        };
        Self::new(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> FmvcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            FmvcStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.msg);
            fail.status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            FmvcStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::new(FmvcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn labels_from(raw: &[u32]) -> Vec<usize> {
    raw.iter().map(|&l| l as usize).collect()
}

impl FmvcDataset {
    fn to_data(&self) -> MultiViewData {
        MultiViewData {
            views: self.views.clone(),
            labels: self.labels.clone(),
        }
    }

    fn from_data(d: MultiViewData) -> Self {
        Self {
            samples: d.n(),
            views: d.views,
            labels: d.labels,
        }
    }
}

impl FmvcConfig {
    fn to_session(self) -> FfiResult<SessionConfig> {
        let ablation = match self.ablation {
            0 => Ablation::Full,
            1 => Ablation::NoMigration,
            2 => Ablation::NoFusionModule,
            3 => Ablation::NoGlobalGuidance,
            4 => Ablation::NoGlobalHead,
            other => return Err(Failure::new(FmvcStatus::InvalidArgument, format!("unknown ablation code {other}"))),
        };
        Ok(SessionConfig {
            clusters: self.clusters,
            rounds: self.rounds,
            epochs: self.epochs,
            pretrain_epochs: self.pretrain_epochs,
            k_neighbors: self.k_neighbors,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            learning_rate: self.learning_rate,
            kmeans_restarts: self.kmeans_restarts,
            ablation,
            pretrain_weights: if self.pretrain_presence != 0 {
                PretrainWeights::Presence
            } else {
                PretrainWeights::Uniform
            },
            parallel: self.parallel != 0,
            seed: self.seed,
            ..SessionConfig::default()
        })
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fmvc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn fmvc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn fmvc_config_default(clusters: usize, out: *mut FmvcConfig) -> FmvcStatus {
    guard(|| {
        let s = SessionConfig {
            clusters,
            ..SessionConfig::default()
        };
        let cfg = FmvcConfig {
            clusters: s.clusters,
            rounds: s.rounds,
            epochs: s.epochs,
            pretrain_epochs: s.pretrain_epochs,
            k_neighbors: s.k_neighbors,
            gamma1: s.gamma1,
            gamma2: s.gamma2,
            learning_rate: s.learning_rate,
            kmeans_restarts: s.kmeans_restarts,
            ablation: FmvcAblation::Full as u32,
            pretrain_presence: u8::from(s.pretrain_weights == PretrainWeights::Presence),
            parallel: u8::from(s.parallel),
            seed: s.seed,
        };
        write_out(out, cfg, "out")
    })
}

/// Empty dataset for `samples` row-aligned samples; add views next.
#[no_mangle]
pub unsafe extern "C" fn fmvc_dataset_new(samples: usize, out: *mut *mut FmvcDataset) -> FmvcStatus {
    guard(|| {
        if samples == 0 {
            return Err(Failure::new(FmvcStatus::InvalidArgument, "dataset needs at least one sample"));
        }
        let ds = Box::new(FmvcDataset {
            samples,
            views: Vec::new(),
            labels: None,
        });
        write_out(out, Box::into_raw(ds), "out")
    })
}

/// Append one view: `values` is `samples * cols` row-major. `present` holds
/// one flag per sample (non-zero = observed) or is null for all observed.
/// Absent rows are zeroed.
#[no_mangle]
pub unsafe extern "C" fn fmvc_dataset_add_view(
    ds: *mut FmvcDataset,
    values: *const f64,
    cols: usize,
    present: *const u8,
) -> FmvcStatus {
    guard(|| {
        let ds = deref_mut(ds, "dataset")?;
        if cols == 0 {
            return Err(Failure::new(FmvcStatus::InvalidArgument, "view needs at least one column"));
        }
        let n = ds.samples;
        let raw = slice(values, n * cols, "values")?;
        let x = Matrix::from_vec(n, cols, raw.to_vec())?;
        let present = if present.is_null() {
            vec![true; n]
        } else {
            slice(present, n, "present")?.iter().map(|&p| p != 0).collect()
        };
        let mut view = ViewDataset {
            view: ds.views.len(),
            x,
            present,
        };
        view.zero_fill();
        ds.views.push(view);
        Ok(())
    })
}

/// Attach ground-truth labels, one per sample.
#[no_mangle]
pub unsafe extern "C" fn fmvc_dataset_set_labels(ds: *mut FmvcDataset, labels: *const u32) -> FmvcStatus {
    guard(|| {
        let ds = deref_mut(ds, "dataset")?;
        ds.labels = Some(labels_from(slice(labels, ds.samples, "labels")?));
        Ok(())
    })
}

/// Per-view standardization over observed rows.
#[no_mangle]
pub unsafe extern "C" fn fmvc_dataset_standardize(ds: *mut FmvcDataset) -> FmvcStatus {
    guard(|| {
        let ds = deref_mut(ds, "dataset")?;
        ds.views.iter_mut().for_each(ViewDataset::standardize);
        Ok(())
    })
}

/// Load `view_*.csv`, optional `labels.csv` and `mask.csv` from a directory.
#[no_mangle]
pub unsafe extern "C" fn fmvc_dataset_load(dir: *const c_char, out: *mut *mut FmvcDataset) -> FmvcStatus {
    guard(|| {
        if dir.is_null() {
            return Err(null("dir"));
        }
        let dir = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| Failure::new(FmvcStatus::InvalidArgument, "dir is not valid UTF-8"))?;
        let data = load_views(Path::new(dir))?;
        write_out(out, Box::into_raw(Box::new(FmvcDataset::from_data(data))), "out")
    })
}

/// Synthetic Gaussian blobs seen through one random projection per view.
#[no_mangle]
pub unsafe extern "C" fn fmvc_dataset_synth(
    samples: usize,
    clusters: usize,
    dims: *const usize,
    views: usize,
    separation: f64,
    seed: u64,
    out: *mut *mut FmvcDataset,
) -> FmvcStatus {
    guard(|| {
        let dims = slice(dims, views, "dims")?.to_vec();
        let data = synth_blobs(&SynthSpec {
            samples,
            clusters,
            dims,
            separation,
            seed,
        })?;
        write_out(out, Box::into_raw(Box::new(FmvcDataset::from_data(data))), "out")
    })
}

/// Knock views out of a fraction `rate` of samples. `alpha` > 0 skews which
/// views lose samples by a Dirichlet draw; pass 0 for no skew.
#[no_mangle]
pub unsafe extern "C" fn fmvc_dataset_apply_missing(ds: *mut FmvcDataset, rate: f64, seed: u64, alpha: f64) -> FmvcStatus {
    guard(|| {
        let ds = deref_mut(ds, "dataset")?;
        let spec = MissingSpec {
            rate,
            seed,
            alpha: (alpha != 0.0).then_some(alpha),
        };
        let out = apply_missing(&ds.to_data(), &spec)?;
        *ds = FmvcDataset::from_data(out);
        Ok(())
    })
}

/// Sample count, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn fmvc_dataset_samples(ds: *const FmvcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.samples)
}

/// View count, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn fmvc_dataset_views(ds: *const FmvcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.views.len())
}

/// Samples observed in every view, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn fmvc_dataset_complete(ds: *const FmvcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.to_data().complete_count())
}

#[no_mangle]
pub unsafe extern "C" fn fmvc_dataset_free(ds: *mut FmvcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Run a full session. The dataset is not modified.
#[no_mangle]
pub unsafe extern "C" fn fmvc_run(ds: *const FmvcDataset, config: *const FmvcConfig, out: *mut *mut FmvcOutcome) -> FmvcStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let cfg = deref(config, "config")?.to_session()?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = run_session(&cfg, &ds.to_data())?;
        write_out(out, Box::into_raw(Box::new(FmvcOutcome { inner })), "out")
    })
}

/// Copy the final labels into `buf`, which must hold `len` = sample count.
#[no_mangle]
pub unsafe extern "C" fn fmvc_outcome_labels(o: *const FmvcOutcome, buf: *mut u32, len: usize) -> FmvcStatus {
    guard(|| {
        let o = deref(o, "outcome")?;
        let labels = &o.inner.labels;
        if len < labels.len() {
            return Err(Failure::new(
                FmvcStatus::BufferTooSmall,
                format!("buffer holds {len} labels, need {}", labels.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        for (i, &l) in labels.iter().enumerate() {
            buf.add(i).write(l as u32);
        }
        Ok(())
    })
}

/// Number of round records (rounds + 1, counting the pre-training round).
#[no_mangle]
pub unsafe extern "C" fn fmvc_outcome_records(o: *const FmvcOutcome) -> usize {
    o.as_ref().map_or(0, |o| o.inner.records.len())
}

/// Scores after record `index`; `Unavailable` when the dataset had no labels.
#[no_mangle]
pub unsafe extern "C" fn fmvc_outcome_metrics(o: *const FmvcOutcome, index: usize, out: *mut FmvcScores) -> FmvcStatus {
    guard(|| {
        let o = deref(o, "outcome")?;
        let rec = o.inner.records.get(index).ok_or_else(|| {
            Failure::new(
                FmvcStatus::InvalidArgument,
                format!("record {index} out of range ({} records)", o.inner.records.len()),
            )
        })?;
        let s = rec
            .metrics
            .ok_or_else(|| Failure::new(FmvcStatus::Unavailable, "dataset has no labels"))?;
        write_out(
            out,
            FmvcScores {
                acc: s.acc,
                nmi: s.nmi,
                ari: s.ari,
            },
            "out",
        )
    })
}

/// Round records as JSON lines, NUL-terminated. `needed` receives the byte
/// count including the terminator; a short `cap` returns `BufferTooSmall`
/// so the caller can retry.
#[no_mangle]
pub unsafe extern "C" fn fmvc_outcome_records_json(
    o: *const FmvcOutcome,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> FmvcStatus {
    guard(|| {
        let o = deref(o, "outcome")?;
        let mut text = String::new();
        for r in &o.inner.records {
            text.push_str(&serde_json::to_string(r).map_err(|e| Failure::new(FmvcStatus::Io, e.to_string()))?);
            text.push('\n');
        }
        let size = text.len() + 1;
        if !needed.is_null() {
            needed.write(size);
        }
        if cap < size {
            return Err(Failure::new(
                FmvcStatus::BufferTooSmall,
                format!("buffer holds {cap} bytes, need {size}"),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(text.as_ptr().cast::<c_char>(), buf, text.len());
        buf.add(text.len()).write(0);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fmvc_outcome_free(o: *mut FmvcOutcome) {
    if !o.is_null() {
        drop(Box::from_raw(o));
    }
}

/// ACC, NMI and ARI of `pred` against `truth`, both of length `n`.
#[no_mangle]
pub unsafe extern "C" fn fmvc_evaluate(pred: *const u32, truth: *const u32, n: usize, out: *mut FmvcScores) -> FmvcStatus {
    guard(|| {
        let p = labels_from(slice(pred, n, "pred")?);
        let t = labels_from(slice(truth, n, "truth")?);
        let s = metrics::evaluate(&p, &t)?;
        write_out(
            out,
            FmvcScores {
                acc: s.acc,
                nmi: s.nmi,
                ari: s.ari,
            },
            "out",
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn fmvc_accuracy(pred: *const u32, truth: *const u32, n: usize, out: *mut f64) -> FmvcStatus {
    guard(|| {
        let v = metrics::accuracy(&labels_from(slice(pred, n, "pred")?), &labels_from(slice(truth, n, "truth")?))?;
        write_out(out, v, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn fmvc_nmi(pred: *const u32, truth: *const u32, n: usize, out: *mut f64) -> FmvcStatus {
    guard(|| {
        let v = metrics::nmi(&labels_from(slice(pred, n, "pred")?), &labels_from(slice(truth, n, "truth")?))?;
        write_out(out, v, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn fmvc_ari(pred: *const u32, truth: *const u32, n: usize, out: *mut f64) -> FmvcStatus {
    guard(|| {
        let v = metrics::ari(&labels_from(slice(pred, n, "pred")?), &labels_from(slice(truth, n, "truth")?))?;
        write_out(out, v, "out")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_error_kind_maps_to_a_status() {
        let f: Failure = Error::Config("x".into()).into();
        assert_eq!(f.status, FmvcStatus::Config);
        let f: Failure = Error::DegenerateWeights("w".into()).into();
        assert_eq!(f.status, FmvcStatus::Degenerate);
        let f: Failure = Error::Decode("d".into()).into();
        assert_eq!(f.status, FmvcStatus::Protocol);
    }

    #[test]
    fn panic_becomes_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, FmvcStatus::Panic);
        let msg = unsafe { CStr::from_ptr(fmvc_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }

    #[test]
    fn bad_ablation_code() {
        let mut cfg = std::mem::MaybeUninit::uninit();
        assert_eq!(unsafe { fmvc_config_default(3, cfg.as_mut_ptr()) }, FmvcStatus::Ok);
        let mut cfg = unsafe { cfg.assume_init() };
        cfg.ablation = 17;
        assert!(cfg.to_session().is_err());
    }
}
