//! Fit percentages, Markov-parameter errors and the validation report.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extraction::ExtractedPlant;
use crate::linalg::{spectral_radius, Mat};
use crate::markov::markov_parameters;
use crate::recovery::{build_recovery_transform, RecoveredPlant, StructureResidual};
use crate::reduction::ReducedPlant;
use crate::signal::{cycle_signal, uncycle_signal, CycledSignal, SignalRecord};
use crate::simulate::{simulate_lptv, Disturbances};
use crate::simulator::{generate_reference, run_closed_loop_experiment, ExperimentDataset, ExperimentOptions, NoiseConfig};
use crate::subspace::IdentificationResult;
use crate::system::{LtiStateSpace, PeriodicStateSpace};

pub const DEFAULT_H_MAX: usize = 15;
pub const DEFAULT_VALIDATION_HORIZON: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub per_channel: Vec<f64>,
    pub mean: f64,
}

/// `100 (1 - |z - ẑ| / |z - mean(z)|)` per channel.
pub fn fit_percent(measured: &SignalRecord, predicted: &SignalRecord) -> Result<FitReport> {
    if measured.len() != predicted.len() || measured.dim() != predicted.dim() {
        return Err(Error::DimensionMismatch(format!(
            "fit: {}x{} against {}x{}",
            measured.len(),
            measured.dim(),
            predicted.len(),
            predicted.dim()
        )));
    }
    let (z, zh) = (measured.samples(), predicted.samples());
    let mut per_channel = Vec::with_capacity(z.ncols());
    for j in 0..z.ncols() {
        let col = z.column(j);
        let mean = col.mean();
        let spread = col.map(|v| v - mean).norm();
        if spread == 0.0 {
            return Err(Error::DegenerateSignal { channel: j });
        }
        per_channel.push(100.0 * (1.0 - (col - zh.column(j)).norm() / spread));
    }
    let mean = per_channel.iter().sum::<f64>() / per_channel.len().max(1) as f64;
    Ok(FitReport { per_channel, mean })
}

/// `|H(h) - Ĥ(h)|_F` for `h = 0..=h_max`.
pub fn markov_error_curve(truth: &LtiStateSpace, est: &LtiStateSpace, h_max: usize) -> Result<Vec<f64>> {
    if truth.n_inputs() != est.n_inputs() || truth.n_outputs() != est.n_outputs() {
        return Err(Error::DimensionMismatch(format!(
            "Markov comparison of {}x{} and {}x{} systems",
            truth.n_outputs(),
            truth.n_inputs(),
            est.n_outputs(),
            est.n_inputs()
        )));
    }
    let (ht, he) = (markov_parameters(truth, h_max), markov_parameters(est, h_max));
    Ok(ht.iter().zip(&he).map(|(a, b)| (a - b).norm()).collect())
}

pub fn max_markov_error(truth: &LtiStateSpace, est: &LtiStateSpace, h_max: usize) -> Result<f64> {
    Ok(markov_error_curve(truth, est, h_max)?.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseErrors {
    pub phase: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Entrywise errors per phase. Only meaningful when both models share
/// coordinates.
pub fn phase_errors(truth: &PeriodicStateSpace, est: &PeriodicStateSpace) -> Vec<PhaseErrors> {
    (0..truth.period())
        .map(|k| {
            let k64 = k as i64;
            PhaseErrors {
                phase: k,
                a: (truth.a(k64) - est.a(k64)).norm(),
                b: (truth.b(k64) - est.b(k64)).norm(),
                c: (truth.c(k64) - est.c(k64)).norm(),
            }
        })
        .collect()
}

/// True when the recovery transform built with `selection` leaves the
/// cyclic form of `truth` unchanged, so recovered and true matrices are
/// directly comparable.
pub fn canonically_aligned(truth: &PeriodicStateSpace, selection: &[Mat]) -> bool {
    let cyc = truth.cyclic_reformulate();
    match build_recovery_transform(&cyc, truth.period(), selection) {
        Ok((t_inv, _)) => (t_inv - Mat::identity(cyc.order(), cyc.order())).amax() < 1e-9,
        Err(_) => false,
    }
}

/// Everything the validation step looks at.
pub struct ValidationInput<'a> {
    pub truth: &'a PeriodicStateSpace,
    pub controller: &'a PeriodicStateSpace,
    pub dataset: &'a ExperimentDataset,
    pub identified: &'a IdentificationResult,
    pub extracted: &'a ExtractedPlant,
    pub reduced: &'a ReducedPlant,
    pub recovered: &'a RecoveredPlant,
    pub h_max: usize,
    pub validation_horizon: usize,
    pub validation_seed: u64,
    /// `cond(Λ)` above this is flagged in the report.
    pub lambda_warn_cond: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub h_max: usize,
    pub cl_fit: FitReport,
    /// `None` when the true plant is unstable: open-loop simulation over
    /// the validation horizon is then meaningless.
    pub ol_fit: Option<FitReport>,
    pub max_markov_error: f64,
    pub markov_error_curve: Vec<f64>,
    /// Markov error of the extracted (unreduced) plant.
    pub extracted_markov_error: f64,
    pub phase_errors: Option<Vec<PhaseErrors>>,
    pub identification_spectrum: Vec<f64>,
    pub reduction_spectrum: Vec<f64>,
    pub reduction_cut: usize,
    pub reduction_gap_ratio: Option<f64>,
    pub lambda_cond: f64,
    pub lambda_ill_conditioned: bool,
    pub extracted_feedthrough_norm: f64,
    pub extracted_spectral_radius: f64,
    pub transform_cond: f64,
    pub structure_residual: StructureResidual,
    pub n_unstable: usize,
    pub warnings: Vec<String>,
}

/// Closed-loop prediction of the identified joint model on the recorded
/// reference, compared with the recorded `[y u]`.
pub fn closed_loop_fit(dataset: &ExperimentDataset, identified: &IdentificationResult) -> Result<FitReport> {
    let m = dataset.period();
    let phase = dataset.phase_origin();
    let r = cycle_signal(&dataset.r, m, phase);
    let sim = identified.simulate(&r)?;
    let z = dataset.z();
    let segs = vec![dataset.y.dim(), dataset.u.dim()];
    let cycled = CycledSignal::from_samples(sim, m, phase, segs, f64::INFINITY)?;
    let predicted = uncycle_signal(&cycled, f64::INFINITY)?;
    fit_percent(&z, &predicted)
}

/// Open-loop fit of the recovered plant on a fresh noise-free closed-loop
/// run: the recorded input drives the model, its output is compared with
/// the true plant output.
pub fn open_loop_fit(
    truth: &PeriodicStateSpace,
    controller: &PeriodicStateSpace,
    recovered: &PeriodicStateSpace,
    horizon: usize,
    seed: u64,
) -> Result<Option<FitReport>> {
    if spectral_radius(&truth.monodromy())? >= 1.0 {
        return Ok(None);
    }
    let r = generate_reference(horizon, truth.n_outputs(), seed)?;
    let data = run_closed_loop_experiment(truth, controller, &r, &NoiseConfig::noise_free(seed), &ExperimentOptions::default())?;
    let y_hat = simulate_lptv(recovered, &data.u, None, Disturbances::default())?;
    fit_percent(&data.y, &y_hat).map(Some)
}

pub fn validate_pipeline(input: &ValidationInput<'_>) -> Result<ValidationReport> {
    let truth_cyc = input.truth.cyclic_reformulate();
    let recovered_cyc = input.recovered.periodic.cyclic_reformulate();
    let curve = markov_error_curve(&truth_cyc, &recovered_cyc, input.h_max)?;
    let max_err = curve.iter().copied().fold(0.0, f64::max);
    let extracted_err = max_markov_error(&truth_cyc, &input.extracted.with_zero_feedthrough(), input.h_max)?;
    let cl_fit = closed_loop_fit(input.dataset, input.identified)?;
    let ol_fit = open_loop_fit(
        input.truth,
        input.controller,
        &input.recovered.periodic,
        input.validation_horizon,
        input.validation_seed,
    )?;
    let phase_errors = (input.truth.n_outputs() == 1 && canonically_aligned(input.truth, &input.recovered.selection))
        .then(|| phase_errors(input.truth, &input.recovered.periodic));
    let spec = &input.reduced.spectrum;
    let warnings = input.extracted.warnings.clone();
    let lambda_ill_conditioned = input.extracted.lambda_cond > input.lambda_warn_cond;
    Ok(ValidationReport {
        h_max: input.h_max,
        cl_fit,
        ol_fit,
        max_markov_error: max_err,
        markov_error_curve: curve,
        extracted_markov_error: extracted_err,
        phase_errors,
        identification_spectrum: input.identified.singular_values.clone(),
        reduction_spectrum: spec.values.clone(),
        reduction_cut: input.reduced.cut,
        reduction_gap_ratio: spec.ratio_at(input.reduced.cut),
        lambda_cond: input.extracted.lambda_cond,
        lambda_ill_conditioned,
        extracted_feedthrough_norm: input.extracted.feedthrough_norm(),
        extracted_spectral_radius: input.extracted.spectral_radius,
        transform_cond: input.recovered.transform_cond,
        structure_residual: input.recovered.residual.clone(),
        n_unstable: input.reduced.n_unstable,
        warnings,
    })
}

impl ValidationReport {
    pub fn markov_error_csv(&self) -> String {
        let mut out = String::from("h,error\n");
        for (h, e) in self.markov_error_curve.iter().enumerate() {
            let _ = writeln!(out, "{h},{e:e}");
        }
        out
    }

    pub fn spectrum_csv(&self) -> String {
        let mut out = String::from("index,identification,reduction\n");
        let n = self.identification_spectrum.len().max(self.reduction_spectrum.len());
        let cell = |v: &[f64], i: usize| v.get(i).map(|x| format!("{x:e}")).unwrap_or_default();
        for i in 0..n {
            let _ = writeln!(
                out,
                "{},{},{}",
                i + 1,
                cell(&self.identification_spectrum, i),
                cell(&self.reduction_spectrum, i)
            );
        }
        out
    }

    pub fn fit_csv(&self) -> String {
        let mut out = String::from("kind,channel,fit_percent\n");
        for (j, f) in self.cl_fit.per_channel.iter().enumerate() {
            let _ = writeln!(out, "closed_loop,{j},{f}");
        }
        if let Some(ol) = &self.ol_fit {
            for (j, f) in ol.per_channel.iter().enumerate() {
                let _ = writeln!(out, "open_loop,{j},{f}");
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn record(data: &[f64], dim: usize) -> SignalRecord {
        SignalRecord::from_matrix(Mat::from_row_slice(data.len() / dim, dim, data)).unwrap()
    }

    #[test]
    fn perfect_prediction_is_hundred() {
        let z = record(&[1.0, 2.0, 3.0, -1.0, 0.5, 4.0], 2);
        let f = fit_percent(&z, &z).unwrap();
        assert_eq!(f.per_channel, vec![100.0, 100.0]);
        assert_eq!(f.mean, 100.0);
    }

    #[test]
    fn mean_prediction_is_zero() {
        let z = record(&[1.0, 2.0, 3.0, 6.0], 1);
        let zbar = record(&[3.0; 4], 1);
        assert!(fit_percent(&z, &zbar).unwrap().mean.abs() < 1e-12);
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let z = record(&[1.0, 5.0, 1.0, 6.0, 1.0, 7.0], 2);
        assert!(matches!(fit_percent(&z, &z), Err(Error::DegenerateSignal { channel: 0 })));
    }

    #[test]
    fn markov_error_of_identical_systems_is_zero() {
        let sys = presets::example2().plant.cyclic_reformulate();
        assert_eq!(max_markov_error(&sys, &sys, DEFAULT_H_MAX).unwrap(), 0.0);
        assert_eq!(markov_error_curve(&sys, &sys, 15).unwrap().len(), 16);
    }

    #[test]
    fn markov_error_rejects_mismatched_dimensions() {
        let a = presets::example1().plant.cyclic_reformulate();
        let b = presets::example3().plant.cyclic_reformulate();
        assert!(matches!(max_markov_error(&a, &b, 5), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn siso_presets_are_canonically_aligned() {
        for p in [presets::example1(), presets::example2()] {
            assert!(canonically_aligned(&p.plant, &crate::recovery::unit_selection(2)));
        }
    }

    #[test]
    fn open_loop_fit_of_true_plant() {
        let p = presets::example1();
        let f = open_loop_fit(&p.plant, &p.controller, &p.plant, 500, 9).unwrap().unwrap();
        assert!((f.mean - 100.0).abs() < 1e-9);
        let q = presets::example2();
        assert!(open_loop_fit(&q.plant, &q.controller, &q.plant, 500, 9).unwrap().is_none());
    }
}
