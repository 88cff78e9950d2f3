//! Sampled signals and their cycled (block-sparse) counterparts.

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Time series stored as an `N x q` matrix, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    samples: Mat,
    labels: Vec<String>,
}

impl SignalRecord {
    pub fn new(samples: Mat, labels: Vec<String>) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::InvalidConfig("signal must have at least one sample".into()));
        }
        if labels.len() != samples.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} channels",
                labels.len(),
                samples.ncols()
            )));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite entry at sample {}",
                pos % samples.nrows()
            )));
        }
        Ok(Self { samples, labels })
    }

    /// Record with default channel labels `ch0, ch1, ...`.
    pub fn from_matrix(samples: Mat) -> Result<Self> {
        let labels = (0..samples.ncols()).map(|i| format!("ch{i}")).collect();
        Self::new(samples, labels)
    }

    pub fn zeros(n: usize, q: usize) -> Self {
        Self::from_matrix(Mat::zeros(n, q)).expect("zero signal is valid")
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> &Mat {
        &self.samples
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn with_labels(mut self, prefix: &str) -> Self {
        self.labels = (0..self.dim()).map(|i| format!("{prefix}{i}")).collect();
        self
    }

    /// Sample `k` as a column vector.
    pub fn at(&self, k: usize) -> nalgebra::DVector<f64> {
        self.samples.row(k).transpose()
    }

    /// Leading `n` samples.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            samples: self.samples.rows(0, n).into_owned(),
            labels: self.labels.clone(),
        }
    }

    /// Channels side by side: `[self, other]`.
    pub fn concat_channels(&self, other: &SignalRecord) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot join signals of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        let samples = crate::linalg::hstack(&self.samples, &other.samples);
        let labels = self.labels.iter().chain(&other.labels).cloned().collect();
        Self::new(samples, labels)
    }
}

/// Block-sparse cycled signal.
///
/// Each sample has length `M * base_dim`. For a plain cycled signal the
/// sample at time `k` is nonzero only in block `(k - phase_origin) mod M`.
/// A stacked signal (such as `[y̌; ǔ]`) concatenates several cycled
/// segments; each segment obeys the pattern on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct CycledSignal {
    period: usize,
    phase_origin: i64,
    segments: Vec<usize>,
    samples: Mat,
}

impl CycledSignal {
    /// Build from raw samples, checking the block pattern to within `tol`.
    pub fn from_samples(
        samples: Mat,
        period: usize,
        phase_origin: i64,
        segments: Vec<usize>,
        tol: f64,
    ) -> Result<Self> {
        let width: usize = segments.iter().sum::<usize>() * period;
        if period == 0 || samples.ncols() != width {
            return Err(Error::DimensionMismatch(format!(
                "cycled samples have {} columns, layout needs {}",
                samples.ncols(),
                width
            )));
        }
        let cs = Self {
            period,
            phase_origin,
            segments,
            samples,
        };
        cs.check_pattern(tol)?;
        Ok(cs)
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn phase_origin(&self) -> i64 {
        self.phase_origin
    }

    /// Sum of the base dimensions of all segments.
    pub fn base_dim(&self) -> usize {
        self.segments.iter().sum()
    }

    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> &Mat {
        &self.samples
    }

    /// The raw `N x (M * base_dim)` samples as an ordinary record, e.g. to
    /// drive the cycled LTI system.
    pub fn as_record(&self) -> SignalRecord {
        SignalRecord::from_matrix(self.samples.clone()).expect("cycled samples are finite")
    }

    /// Active block position at time `k`.
    pub fn position(&self, k: usize) -> usize {
        (k as i64 - self.phase_origin).rem_euclid(self.period as i64) as usize
    }

    fn segment_offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.segments
            .iter()
            .map(|&q| {
                let o = off;
                off += q * self.period;
                o
            })
            .collect()
    }

    fn off_pattern_norm(&self, k: usize) -> f64 {
        let pos = self.position(k);
        let mut sq = 0.0;
        for (&q, off) in self.segments.iter().zip(self.segment_offsets()) {
            for blk in (0..self.period).filter(|&b| b != pos) {
                for j in 0..q {
                    sq += self.samples[(k, off + blk * q + j)].powi(2);
                }
            }
        }
        sq.sqrt()
    }

    fn check_pattern(&self, tol: f64) -> Result<()> {
        for k in 0..self.len() {
            let off = self.off_pattern_norm(k);
            if off > tol {
                return Err(Error::SparsityViolation {
                    sample: k,
                    off_norm: off,
                    tol,
                });
            }
        }
        Ok(())
    }

    /// Stack cycled signals vertically (per sample) into one labeled layout.
    pub fn stack(parts: &[&CycledSignal]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidConfig("nothing to stack".into()))?;
        for p in parts {
            if p.period != first.period || p.phase_origin != first.phase_origin || p.len() != first.len() {
                return Err(Error::DimensionMismatch(
                    "stacked cycled signals must share period, phase and length".into(),
                ));
            }
        }
        let width = parts.iter().map(|p| p.dim()).sum();
        let mut samples = Mat::zeros(first.len(), width);
        let mut col = 0;
        let mut segments = Vec::new();
        for p in parts {
            samples.view_mut((0, col), (p.len(), p.dim())).copy_from(&p.samples);
            col += p.dim();
            segments.extend_from_slice(&p.segments);
        }
        Ok(Self {
            period: first.period,
            phase_origin: first.phase_origin,
            segments,
            samples,
        })
    }

    /// Split a stacked signal back into its segments.
    pub fn split(&self) -> Vec<CycledSignal> {
        self.segments
            .iter()
            .zip(self.segment_offsets())
            .map(|(&q, off)| CycledSignal {
                period: self.period,
                phase_origin: self.phase_origin,
                segments: vec![q],
                samples: self.samples.columns(off, q * self.period).into_owned(),
            })
            .collect()
    }
}

/// Place `sig(k)` into block `(k - phase_origin) mod M` of an otherwise
/// zero vector of length `M * q`.
pub fn cycle_signal(sig: &SignalRecord, period: usize, phase_origin: i64) -> CycledSignal {
    assert!(period >= 1, "period must be positive");
    let q = sig.dim();
    let mut samples = Mat::zeros(sig.len(), period * q);
    for k in 0..sig.len() {
        let pos = (k as i64 - phase_origin).rem_euclid(period as i64) as usize;
        for j in 0..q {
            samples[(k, pos * q + j)] = sig.samples()[(k, j)];
        }
    }
    CycledSignal {
        period,
        phase_origin,
        segments: vec![q],
        samples,
    }
}

/// Extract the active block of every sample. Fails with
/// [`Error::SparsityViolation`] when the off-pattern energy of any sample
/// exceeds `tol`, which usually means the phase origin is wrong.
pub fn uncycle_signal(cs: &CycledSignal, tol: f64) -> Result<SignalRecord> {
    cs.check_pattern(tol)?;
    let q = cs.base_dim();
    let mut out = Mat::zeros(cs.len(), q);
    for k in 0..cs.len() {
        let pos = cs.position(k);
        let mut col = 0;
        for (&sq, off) in cs.segments.iter().zip(cs.segment_offsets()) {
            for j in 0..sq {
                out[(k, col + j)] = cs.samples[(k, off + pos * sq + j)];
            }
            col += sq;
        }
    }
    SignalRecord::from_matrix(out)
}
