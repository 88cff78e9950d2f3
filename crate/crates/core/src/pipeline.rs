//! End-to-end identification: data collection, cycling, subspace
//! identification, plant extraction, reduction, recovery and validation,
//! each labeled with its step so failures name where they happened.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::closed_loop::{check_assumptions, AssumptionReport};
use crate::error::{Error, Result, Stage};
use crate::extraction::{extract_plant_with, ExtractedPlant, ExtractionConfig};
use crate::io;
use crate::metrics::{validate_pipeline, ValidationInput, ValidationReport, DEFAULT_H_MAX, DEFAULT_VALIDATION_HORIZON};
use crate::presets;
use crate::recovery::{recover_lptv, RecoveredPlant, RecoveryConfig, DEFAULT_STRUCTURE_TOL, NOISY_STRUCTURE_TOL};
use crate::reduction::{reduce_to_plant_order, ReducedPlant, ReductionConfig, ReductionMethod, DEFAULT_GAP_FACTOR};
use crate::signal::{cycle_signal, CycledSignal};
use crate::simulator::{generate_reference, run_closed_loop_experiment, ExperimentDataset, ExperimentOptions, NoiseConfig};
use crate::subspace::{identify_cycled_closed_loop, IdentificationResult, SpectrumReport, SubspaceConfig, ORDER_GAP_FACTOR};
use crate::system::PeriodicStateSpace;

/// Offset between the training seed and the seed of the fresh validation run.
pub const VALIDATION_SEED_OFFSET: u64 = 1_000_003;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubspaceSection {
    pub horizon: Option<usize>,
    pub rank_tol: Option<f64>,
    pub auto_order: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    pub warn_cond: f64,
    pub max_cond: f64,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        let d = ExtractionConfig::default();
        Self { warn_cond: d.warn_cond, max_cond: d.max_cond }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionSection {
    pub method: ReductionMethod,
    pub markov_depth: Option<usize>,
    pub gap_factor: f64,
}

impl Default for ReductionSection {
    fn default() -> Self {
        Self { method: ReductionMethod::Era, markov_depth: None, gap_factor: DEFAULT_GAP_FACTOR }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverySection {
    /// `None` picks 1e-6 for noise-free data and 1e-2 otherwise.
    pub structure_tol: Option<f64>,
    /// Selection blocks `F_j`, each given as nested rows.
    pub selection: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    pub h_max: usize,
    pub horizon: usize,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self { h_max: DEFAULT_H_MAX, horizon: DEFAULT_VALIDATION_HORIZON }
    }
}

/// Run configuration. Unset fields fall back to the preset.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Option<String>,
    pub plant_file: Option<PathBuf>,
    pub controller_file: Option<PathBuf>,
    pub n_p: Option<usize>,
    pub n_c: Option<usize>,
    pub n_samples: Option<usize>,
    /// Signal-to-noise ratio in dB; `inf` means noise-free.
    pub snr_db: Option<f64>,
    pub seed: Option<u64>,
    pub relative_degree: Option<usize>,
    pub out: Option<PathBuf>,
    pub subspace: SubspaceSection,
    pub extraction: ExtractionSection,
    pub reduction: ReductionSection,
    pub recovery: RecoverySection,
    pub validation: ValidationSection,
}

impl PipelineConfig {
    pub fn from_preset(name: &str) -> Self {
        Self { preset: Some(name.to_string()), ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Fill every field from the preset and the model files.
    pub fn resolve(&self) -> Result<Setup> {
        let preset = match &self.preset {
            Some(name) => Some(presets::by_name(name).ok_or_else(|| {
                Error::InvalidConfig(format!("unknown preset '{name}' (expected one of {:?})", presets::PRESET_NAMES))
            })?),
            None => None,
        };
        let plant = match (&self.plant_file, &preset) {
            (Some(p), _) => io::read_periodic(p)?,
            (None, Some(p)) => p.plant.clone(),
            (None, None) => return Err(Error::InvalidConfig("no plant: give a preset or a plant file".into())),
        };
        let controller = match (&self.controller_file, &preset) {
            (Some(p), _) => io::read_periodic(p)?,
            (None, Some(p)) => p.controller.clone(),
            (None, None) => return Err(Error::InvalidConfig("no controller: give a preset or a controller file".into())),
        };
        let n_p = self.n_p.or(preset.as_ref().map(|p| p.n_p)).unwrap_or(plant.n_states());
        let n_c = self.n_c.or(preset.as_ref().map(|p| p.n_c)).unwrap_or(controller.n_states());
        let n_samples = self
            .n_samples
            .or(preset.as_ref().map(|p| p.n_samples))
            .ok_or_else(|| Error::InvalidConfig("number of samples not set".into()))?;
        let snr_db = self.snr_db.or(preset.as_ref().map(|p| p.snr_db)).unwrap_or(f64::INFINITY);
        let seed = self.seed.or(preset.as_ref().map(|p| p.seed)).unwrap_or(0);
        if n_p == 0 || n_samples == 0 {
            return Err(Error::InvalidConfig("plant order and sample count must be positive".into()));
        }
        if snr_db.is_nan() {
            return Err(Error::InvalidConfig("SNR must be a number or inf".into()));
        }
        let selection = match &self.recovery.selection {
            Some(blocks) => Some(
                blocks
                    .iter()
                    .map(|rows| {
                        let cols = rows.first().map_or(0, Vec::len);
                        if rows.iter().any(|r| r.len() != cols) {
                            return Err(Error::InvalidConfig("ragged selection block".into()));
                        }
                        Ok(crate::linalg::Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Ok(Setup {
            name: preset.as_ref().map_or("custom", |p| p.name).to_string(),
            plant,
            controller,
            n_p,
            n_c,
            n_samples,
            snr_db,
            seed,
            relative_degree: self.relative_degree.unwrap_or(1),
            selection,
            cfg: self.clone(),
        })
    }
}

/// Fully resolved run parameters.
#[derive(Debug, Clone)]
pub struct Setup {
    pub name: String,
    pub plant: PeriodicStateSpace,
    pub controller: PeriodicStateSpace,
    pub n_p: usize,
    pub n_c: usize,
    pub n_samples: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub relative_degree: usize,
    pub selection: Option<Vec<crate::linalg::Mat>>,
    pub cfg: PipelineConfig,
}

impl Setup {
    pub fn period(&self) -> usize {
        self.plant.period()
    }

    pub fn is_noise_free(&self) -> bool {
        !self.snr_db.is_finite()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageEntry {
    pub step: usize,
    pub stage: Stage,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StageLog {
    pub entries: Vec<StageEntry>,
}

impl StageLog {
    /// Run `f` as `stage`, recording the outcome and labeling any error.
    pub fn run<T>(&mut self, stage: Stage, f: impl FnOnce() -> Result<T>, describe: impl FnOnce(&T) -> String) -> Result<T> {
        match f() {
            Ok(v) => {
                let detail = describe(&v);
                log::info!("{stage}: {detail}");
                self.entries.push(StageEntry { step: stage.step(), stage, ok: true, detail });
                Ok(v)
            }
            Err(e) => {
                let e = e.at(stage);
                let detail = e.root().to_string();
                log::error!("{stage}: {detail}");
                self.entries.push(StageEntry { step: stage.step(), stage, ok: false, detail });
                Err(e)
            }
        }
    }

    /// Record a failure of `stage` and return the labeled error.
    pub fn fail(&mut self, stage: Stage, e: Error) -> Error {
        self.run(stage, || Err::<(), _>(e), |_| String::new()).unwrap_err()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(
                out,
                "[{}] step {:>2} {:<28} {}",
                if e.ok { " ok " } else { "FAIL" },
                e.step,
                e.stage.name(),
                e.detail
            );
        }
        out
    }
}

/// Step 1: simulate the closed loop.
pub fn collect_data(setup: &Setup, log: &mut StageLog) -> Result<ExperimentDataset> {
    log.run(
        Stage::CollectData,
        || {
            let r = generate_reference(setup.n_samples, setup.plant.n_outputs(), setup.seed)?;
            let noise = if setup.is_noise_free() {
                NoiseConfig::noise_free(setup.seed)
            } else {
                NoiseConfig::with_snr(setup.snr_db, setup.seed)
            };
            let mut data = run_closed_loop_experiment(&setup.plant, &setup.controller, &r, &noise, &ExperimentOptions::default())?;
            data.metadata.plant = setup.name.clone();
            data.metadata.controller = setup.name.clone();
            Ok(data)
        },
        |d| format!("{} samples, SNR {}", d.len(), d.metadata.snr_db.map_or("none".into(), |s| format!("{s} dB"))),
    )
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub identified: IdentificationResult,
    pub extracted: ExtractedPlant,
    pub reduced: ReducedPlant,
    pub recovered: RecoveredPlant,
    pub report: ValidationReport,
}

/// Steps 2 to 9 plus validation on a recorded dataset.
pub fn identify(setup: &Setup, data: &ExperimentDataset, log: &mut StageLog) -> Result<PipelineOutput> {
    let m = setup.period();
    if data.period() != m {
        let e = Error::InvalidConfig(format!("dataset period {} differs from model period {m}", data.period()));
        return Err(log.fail(Stage::CycleSignals, e));
    }
    let phase = data.phase_origin();
    let (r, z) = log.run(
        Stage::CycleSignals,
        || {
            let r = cycle_signal(&data.r, m, phase);
            let y = cycle_signal(&data.y, m, phase);
            let u = cycle_signal(&data.u, m, phase);
            Ok((r, CycledSignal::stack(&[&y, &u])?))
        },
        |(r, z): &(CycledSignal, CycledSignal)| format!("r: {} channels, z: {} channels", r.dim(), z.dim()),
    )?;

    let order = m * (setup.n_p + setup.n_c);
    let sub = &setup.cfg.subspace;
    let sub_cfg = SubspaceConfig {
        model_order: order,
        horizon: sub.horizon,
        rank_tol: sub.rank_tol,
        estimate_x0: true,
        auto_order: sub.auto_order,
    };
    let identified = log.run(
        Stage::SubspaceIdentification,
        || {
            let id = identify_cycled_closed_loop(&r, &z, &sub_cfg)?;
            if data.metadata.snr_db.is_none() && data.metadata.process_noise_dim == 0 {
                check_order_not_too_low(&id)?;
            }
            Ok(id)
        },
        |id| format!("order {} with horizon {}", id.order, id.horizon),
    )?;
    let sr = log.run(
        Stage::PartitionOutput,
        || Ok(identified.realization.clone()),
        |sr| format!("C_y {} rows, C_u {} rows", sr.c_y.nrows(), sr.c_u.nrows()),
    )?;

    let ex_cfg = ExtractionConfig { warn_cond: setup.cfg.extraction.warn_cond, max_cond: setup.cfg.extraction.max_cond };
    let d = setup.relative_degree;
    let extracted = match extract_plant_with(&sr, d, &ex_cfg) {
        Err(e @ Error::SingularControllerPath { .. }) => return Err(log.fail(Stage::ControllerPath, e)),
        Err(e) => return Err(log.fail(Stage::PlantExtraction, e)),
        Ok(ex) => {
            log.run(Stage::ControllerPath, || Ok(()), |_| format!("cond = {:.4}", ex.lambda_cond))?;
            log.run(
                Stage::PlantExtraction,
                || Ok(ex),
                |ex| format!("order {}, spectral radius {:.4}", ex.order(), ex.spectral_radius),
            )?
        }
    };

    let red = &setup.cfg.reduction;
    let red_cfg = ReductionConfig {
        target_order: m * setup.n_p,
        method: red.method,
        markov_depth: red.markov_depth,
        gap_factor: red.gap_factor,
    };
    let reduced = log.run(
        Stage::Reduction,
        || reduce_to_plant_order(&extracted.realization, &red_cfg),
        |r| {
            format!(
                "order {} ({:?}), gap ratio {:.3e}, {} unstable modes kept",
                r.sys.order(),
                r.method,
                r.spectrum.ratio_at(r.cut).unwrap_or(f64::NAN),
                r.n_unstable
            )
        },
    )?;

    let rec_cfg = RecoveryConfig {
        period: m,
        n_states: setup.n_p,
        selection: setup.selection.clone(),
        structure_tol: setup.cfg.recovery.structure_tol.unwrap_or(if setup.is_noise_free() {
            DEFAULT_STRUCTURE_TOL
        } else {
            NOISY_STRUCTURE_TOL
        }),
        phase_origin: phase.rem_euclid(m as i64) as usize,
        seed: setup.seed,
    };
    let recovered = match recover_lptv(&reduced.sys, &rec_cfg) {
        Err(e @ (Error::SingularTransform { .. } | Error::DimensionMismatch(_))) => {
            return Err(log.fail(Stage::RecoveryTransform, e));
        }
        Err(e) => return Err(log.fail(Stage::ParameterReadout, e)),
        Ok(rec) => {
            log.run(Stage::RecoveryTransform, || Ok(()), |_| format!("cond(T) = {:.4e}", rec.transform_cond))?;
            log.run(
                Stage::ParameterReadout,
                || Ok(rec),
                |rec| {
                    format!(
                        "structure residual {:.3e}, discarded feedthrough {:.3e}",
                        rec.residual.total, rec.discarded_feedthrough
                    )
                },
            )?
        }
    };

    let val = &setup.cfg.validation;
    let report = log.run(
        Stage::Validation,
        || {
            validate_pipeline(&ValidationInput {
                truth: &setup.plant,
                controller: &setup.controller,
                dataset: data,
                identified: &identified,
                extracted: &extracted,
                reduced: &reduced,
                recovered: &recovered,
                h_max: val.h_max,
                validation_horizon: val.horizon,
                validation_seed: setup.seed.wrapping_add(VALIDATION_SEED_OFFSET),
                lambda_warn_cond: ex_cfg.warn_cond,
            })
        },
        |rep| {
            format!(
                "CL fit {:.3}%, OL fit {}, max Markov error {:.3e}",
                rep.cl_fit.mean,
                rep.ol_fit.as_ref().map_or("n/a".into(), |f| format!("{:.4}%", f.mean)),
                rep.max_markov_error
            )
        },
    )?;

    Ok(PipelineOutput { identified, extracted, reduced, recovered, report })
}

/// On noise-free data, a clean spectral gap above the requested order
/// means the data carry more dynamics than the given orders allow. Noisy
/// spectra end in a structural roundoff tail, so the test is skipped there.
fn check_order_not_too_low(id: &IdentificationResult) -> Result<()> {
    let spectrum = SpectrumReport::from_values(id.singular_values.clone());
    if let (Some(g), Some(ratio)) = (spectrum.gap_index, spectrum.gap_ratio) {
        if g > id.order && ratio >= ORDER_GAP_FACTOR {
            return Err(Error::GapNotFound {
                index: id.order,
                ratio: spectrum.ratio_at(id.order).unwrap_or(f64::NAN),
                factor: ORDER_GAP_FACTOR,
                spectrum: spectrum.values,
            });
        }
    }
    Ok(())
}

/// Simulate, then identify.
pub fn run(setup: &Setup, log: &mut StageLog) -> Result<(ExperimentDataset, PipelineOutput)> {
    let data = collect_data(setup, log)?;
    let out = identify(setup, &data, log)?;
    Ok((data, out))
}

/// Write models, report and plot-ready tables into `dir`.
pub fn write_outputs(dir: &Path, out: &PipelineOutput, log: &StageLog) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::write_periodic(&dir.join("recovered_plant.json"), &out.recovered.periodic)?;
    io::write_lti(&dir.join("cyclic_realization.json"), &out.recovered.cyclic)?;
    io::write_lti(&dir.join("extracted_plant.json"), &out.extracted.realization)?;
    io::write_lti(&dir.join("reduced_plant.json"), &out.reduced.sys)?;
    io::write_lti(&dir.join("identified_closed_loop.json"), &out.identified.realization.joint())?;
    fs::write(dir.join("report.json"), out.report.to_json()?)?;
    fs::write(dir.join("markov_error.csv"), out.report.markov_error_csv())?;
    fs::write(dir.join("singular_spectrum.csv"), out.report.spectrum_csv())?;
    fs::write(dir.join("fit.csv"), out.report.fit_csv())?;
    write_stage_log(dir, log)?;
    Ok(())
}

pub fn write_stage_log(dir: &Path, log: &StageLog) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("stages.txt"), log.to_text())?;
    Ok(())
}

pub fn assumption_report(setup: &Setup) -> AssumptionReport {
    check_assumptions(&setup.plant, &setup.controller)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_free(name: &str) -> Setup {
        let mut cfg = PipelineConfig::from_preset(name);
        cfg.snr_db = Some(f64::INFINITY);
        cfg.validation.horizon = 300;
        cfg.resolve().unwrap()
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = PipelineConfig::from_preset("ex2");
        cfg.snr_db = Some(30.0);
        cfg.reduction.method = ReductionMethod::Bt;
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back.preset.as_deref(), Some("ex2"));
        assert_eq!(back.snr_db, Some(30.0));
        assert_eq!(back.reduction.method, ReductionMethod::Bt);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(PipelineConfig::from_toml("presett = \"ex1\""), Err(Error::Parse(_))));
    }

    #[test]
    fn preset_fills_everything() {
        let s = PipelineConfig::from_preset("ex3").resolve().unwrap();
        assert_eq!((s.n_p, s.n_c, s.n_samples, s.seed), (3, 2, 9000, 3));
        assert_eq!(s.snr_db, 40.0);
    }

    #[test]
    fn noise_free_example1_runs_every_step() {
        let setup = noise_free("ex1");
        let mut log = StageLog::default();
        let (_, out) = run(&setup, &mut log).unwrap();
        let steps: Vec<usize> = log.entries.iter().map(|e| e.step).collect();
        assert_eq!(steps, (1..=10).collect::<Vec<_>>());
        assert!(out.report.max_markov_error < 1e-10, "{}", out.report.max_markov_error);
    }

    #[test]
    fn too_high_plant_order_fails_at_reduction() {
        let mut setup = noise_free("ex1");
        setup.n_p = 3;
        let mut log = StageLog::default();
        let err = run(&setup, &mut log).map(|_| ()).unwrap_err();
        assert_eq!(err.stage(), Some(Stage::Reduction), "{err}");
        assert!(matches!(err.root(), Error::GapNotFound { index: 9, .. }));
        assert!(!log.entries.last().unwrap().ok);
        assert!(err.to_string().contains("step 7"));
    }

    #[test]
    fn too_low_plant_order_fails_at_identification() {
        let mut setup = noise_free("ex1");
        setup.n_p = 1;
        let err = run(&setup, &mut StageLog::default()).map(|_| ()).unwrap_err();
        assert_eq!(err.stage(), Some(Stage::SubspaceIdentification), "{err}");
        match err.root() {
            Error::GapNotFound { spectrum, .. } => assert!(spectrum.len() > 9),
            e => panic!("unexpected {e}"),
        }
    }
}
