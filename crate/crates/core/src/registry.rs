//! Name-addressable strategies.
//!
//! Padding of the scan axis and the per-voxel anomaly rule are
//! interchangeable at runtime; configs and CLI flags refer to them by name
//! and resolve them through a [`Registry`].

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::weibull::WeibullParams;

/// Something registered under a stable name.
pub trait Named {
    fn name(&self) -> &'static str;
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Arc<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, entry: Arc<T>) {
        self.entries.insert(entry.name(), entry);
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries.get(name).cloned().ok_or_else(|| Error::UnknownStrategy {
            kind: self.kind,
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

/// Where the padded frames in front of a scan come from.
pub trait PaddingStrategy: Named + Send + Sync {
    /// Source frame for padded slot `slot` (0 is the outermost) when
    /// `width` frames are prepended to a scan of `n_frames` frames.
    /// `None` means an all-zero frame.
    fn source_frame(&self, slot: usize, width: usize, n_frames: usize) -> Result<Option<usize>>;
}

/// Repeats frame 0.
pub struct EdgePadding;

/// Mirrors frames `1..=width` about frame 0, without repeating frame 0.
pub struct ReflectPadding;

/// Inserts zero frames.
pub struct ZeroPadding;

impl Named for EdgePadding {
    fn name(&self) -> &'static str {
        "edge"
    }
}

impl PaddingStrategy for EdgePadding {
    fn source_frame(&self, _slot: usize, _width: usize, _n_frames: usize) -> Result<Option<usize>> {
        Ok(Some(0))
    }
}

impl Named for ReflectPadding {
    fn name(&self) -> &'static str {
        "reflect"
    }
}

impl PaddingStrategy for ReflectPadding {
    fn source_frame(&self, slot: usize, width: usize, n_frames: usize) -> Result<Option<usize>> {
        if width >= n_frames {
            return Err(Error::arg(
                "width",
                format!("reflect padding of {width} frames needs more than {width} frames, got {n_frames}"),
            ));
        }
        Ok(Some(width - slot))
    }
}

impl Named for ZeroPadding {
    fn name(&self) -> &'static str {
        "zero"
    }
}

impl PaddingStrategy for ZeroPadding {
    fn source_frame(&self, _slot: usize, _width: usize, _n_frames: usize) -> Result<Option<usize>> {
        Ok(None)
    }
}

/// Decides whether a measured value is anomalous under a predicted distribution.
pub trait ThresholdRule: Named + Send + Sync {
    fn is_anomalous(&self, measured: f64, predicted: &WeibullParams, confidence: f64) -> bool;
}

/// Flags values above the `confidence` quantile.
pub struct UpperThreshold;

/// Flags values above the `confidence` quantile or below the `1 - confidence` quantile.
pub struct TwoSidedThreshold;

impl Named for UpperThreshold {
    fn name(&self) -> &'static str {
        "upper"
    }
}

impl ThresholdRule for UpperThreshold {
    fn is_anomalous(&self, measured: f64, p: &WeibullParams, c: f64) -> bool {
        measured > p.quantile_unchecked(c)
    }
}

impl Named for TwoSidedThreshold {
    fn name(&self) -> &'static str {
        "two-sided"
    }
}

impl ThresholdRule for TwoSidedThreshold {
    fn is_anomalous(&self, measured: f64, p: &WeibullParams, c: f64) -> bool {
        measured > p.quantile_unchecked(c) || measured < p.quantile_unchecked(1.0 - c)
    }
}

pub fn paddings() -> &'static Registry<dyn PaddingStrategy> {
    static REG: OnceLock<Registry<dyn PaddingStrategy>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn PaddingStrategy> = Registry::new("padding mode");
        r.register(Arc::new(EdgePadding));
        r.register(Arc::new(ReflectPadding));
        r.register(Arc::new(ZeroPadding));
        r
    })
}

pub fn thresholds() -> &'static Registry<dyn ThresholdRule> {
    static REG: OnceLock<Registry<dyn ThresholdRule>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn ThresholdRule> = Registry::new("threshold rule");
        r.register(Arc::new(UpperThreshold));
        r.register(Arc::new(TwoSidedThreshold));
        r
    })
}
