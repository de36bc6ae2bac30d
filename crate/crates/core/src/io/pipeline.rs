//! Running configured experiments stage by stage, persisting everything under the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::discovery::{
    build_predictors, dataset_loss, discover_cosets, discover_generators, filter_duplicate_cosets, select_basis_dimension, stage_rng, summarize,
    DiscoveryResult, Problem, Stage, TrainReport,
};
use crate::error::{Error, Result};
use crate::geometry::{ActionMode, Atlas};
use crate::io::config::{RunConfig, TaskSpec};
use crate::io::dataset::{load_dataset, Dataset, StoredDataset};
use crate::io::heatmap::export_heatmap;
use crate::io::manifest::*;
use crate::lie::{component_distance, invariant_metric, LieBasis};
use crate::linalg;
use crate::tasks::{gen_arctan_dataset, gen_heat_dataset, gen_l1_dataset, gen_quadratic_invariant_dataset, Predictor, PredictorKind};

/// Runs a built-in generator; `seed` replaces any seed in the spec.
pub fn generate_task(spec: &TaskSpec, seed: u64) -> Result<StoredDataset> {
    let data = match spec {
        TaskSpec::Heat(h) => {
            let h = crate::tasks::HeatConfig { seed, ..h.clone() };
            Dataset::Field(gen_heat_dataset(&h)?)
        }
        TaskSpec::L1 { n, range } => Dataset::Vector(gen_l1_dataset(*n, *range, seed)?),
        TaskSpec::Arctan { n } => Dataset::Vector(gen_arctan_dataset(*n, seed)?),
        TaskSpec::Quadratic { n, m } => Dataset::Vector(gen_quadratic_invariant_dataset(*n, *m, seed)?),
        TaskSpec::Dataset { .. } => return Err(Error::Config("a dataset file is not a generator".into())),
    };
    let mut generator = toml::Table::try_from(spec).map_err(|e| Error::Format(e.to_string()))?;
    if let Some(toml::Value::Integer(_)) = generator.get("seed") {
        generator.remove("seed");
    }
    Ok(StoredDataset {
        data,
        seed: Some(seed),
        generator: Some(generator),
    })
}

/// The assembled discovery problem for a run.
pub struct Prepared {
    pub problem: Problem,
    pub atlas: Option<Atlas>,
    pub kind: PredictorKind,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (data, mode) = match &cfg.task {
        TaskSpec::Dataset { path, mode } => (load_dataset(path)?.data, *mode),
        spec => (generate_task(spec, cfg.seed)?.data, None),
    };
    match data {
        Dataset::Field(ds) => {
            if mode.is_some_and(|m| m != ActionMode::FieldWarp) {
                return Err(Error::Config("field data only supports the field_warp action".into()));
            }
            let spec = cfg
                .atlas
                .as_ref()
                .ok_or_else(|| Error::Config("field data needs an atlas".into()))?;
            let atlas = spec.resolve(ds.grid())?;
            let problem = Problem::from_field(&ds, &atlas)?;
            let kind = match (&cfg.predictor, &cfg.task) {
                (Some(k), _) => k.clone(),
                (None, TaskSpec::Heat(h)) => PredictorKind::HeatOracle {
                    courant: h.courant(),
                    n_steps: h.n_steps,
                },
                (None, _) => PredictorKind::default_cnn(),
            };
            Ok(Prepared {
                problem,
                atlas: Some(atlas),
                kind,
            })
        }
        Dataset::Vector(ds) => {
            let mode = match (&cfg.task, mode) {
                (TaskSpec::Dataset { .. }, None) => {
                    return Err(Error::Config("vector datasets need `mode` (vector_linear_invariant or vector_linear_equivariant)".into()))
                }
                (_, Some(m)) => m,
                (_, None) => ActionMode::VectorLinearInvariant,
            };
            Ok(Prepared {
                problem: Problem::from_vector(&ds, mode)?,
                atlas: None,
                kind: cfg.predictor.clone().unwrap_or_else(PredictorKind::default_mlp),
            })
        }
    }
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output)?;
    Ok(cfg.output.clone())
}

fn train(prep: &Prepared, predictors: &mut [Predictor], cfg: &RunConfig) -> Result<TrainReport> {
    let d = &cfg.discovery;
    if d.interleave {
        // Tandem mode trains during generator discovery; only the starting fit is recorded.
        let losses = (0..predictors.len())
            .map(|c| dataset_loss(&prep.problem, &predictors[c], c, d.loss))
            .collect::<Result<Vec<_>>>()?;
        return Ok(TrainReport {
            traces: vec![Vec::new(); predictors.len()],
            final_loss: losses,
        });
    }
    crate::discovery::train_predictors(&prep.problem, predictors, d, &mut stage_rng(d.seed, Stage::Predictors))
}

fn predictor_rows(traces: &[Vec<f64>]) -> Vec<TraceRow> {
    traces
        .iter()
        .enumerate()
        .flat_map(|(c, t)| trace_rows(Stage::Predictors.name(), c, t))
        .collect()
}

fn save_predictors(dir: &Path, predictors: &[Predictor], report: &TrainReport) -> Result<()> {
    write_json(
        &PredictorsFile {
            version: PREDICTORS_VERSION.into(),
            predictors: predictors.to_vec(),
            losses: report.final_loss.clone(),
            traces: report.traces.clone(),
        },
        &dir.join(PREDICTORS_FILE),
    )
}

fn load_predictors(dir: &Path, problem: &Problem) -> Result<PredictorsFile> {
    let path = dir.join(PREDICTORS_FILE);
    if !path.is_file() {
        return Err(Error::Config(format!("{} not found; run train-predictors first", path.display())));
    }
    let f: PredictorsFile = read_json(&path, PREDICTORS_VERSION)?;
    if f.predictors.len() != problem.n_charts() {
        return Err(Error::Config(format!(
            "{} holds {} predictors but the run has {} charts",
            path.display(),
            f.predictors.len(),
            problem.n_charts()
        )));
    }
    Ok(f)
}

/// Trains the chart predictors and writes `predictors.json`, the atlas and the loss traces.
pub fn run_train(cfg: &RunConfig) -> Result<PredictorsFile> {
    cfg.validate()?;
    let dir = output_dir(cfg)?;
    let prep = prepare(cfg)?;
    if let Some(a) = &prep.atlas {
        save_atlas(a, &dir.join(ATLAS_FILE))?;
    }
    let mut predictors = build_predictors(&prep.problem, &prep.kind, cfg.seed)?;
    let d = crate::discovery::DiscoveryConfig {
        interleave: false,
        ..cfg.discovery.clone()
    };
    let report = crate::discovery::train_predictors(&prep.problem, &mut predictors, &d, &mut stage_rng(d.seed, Stage::Predictors))
        .map_err(|e| e.in_stage(Stage::Predictors.name()))?;
    save_predictors(&dir, &predictors, &report)?;
    write_traces(&predictor_rows(&report.traces), &dir.join(TRACES_FILE))?;
    load_predictors(&dir, &prep.problem)
}

/// Learns generators with the saved predictors and writes `generators.json`.
pub fn run_generators(cfg: &RunConfig) -> Result<GeneratorsFile> {
    cfg.validate()?;
    let dir = output_dir(cfg)?;
    let prep = prepare(cfg)?;
    let saved = load_predictors(&dir, &prep.problem)?;
    let mut predictors = saved.predictors.clone();
    let gens = discover_generators(&prep.problem, &mut predictors, &cfg.discovery, &mut stage_rng(cfg.seed, Stage::Generators))
        .map_err(|e| e.in_stage(Stage::Generators.name()))?;
    if cfg.discovery.interleave {
        let report = TrainReport {
            traces: saved.traces.clone(),
            final_loss: (0..predictors.len())
                .map(|c| dataset_loss(&prep.problem, &predictors[c], c, cfg.discovery.loss))
                .collect::<Result<_>>()?,
        };
        save_predictors(&dir, &predictors, &report)?;
    }
    let file = GeneratorsFile {
        version: GENERATORS_VERSION.into(),
        basis: gens.basis,
        trace: gens.trace,
    };
    write_json(&file, &dir.join(GENERATORS_FILE))?;
    let mut rows = predictor_rows(&saved.traces);
    rows.extend(trace_rows(Stage::Generators.name(), 0, &file.trace));
    write_traces(&rows, &dir.join(TRACES_FILE))?;
    Ok(file)
}

/// Trains and filters cosets against the saved predictors and generators; writes the manifest.
pub fn run_cosets(cfg: &RunConfig) -> Result<ResultsManifest> {
    cfg.validate()?;
    let dir = output_dir(cfg)?;
    let prep = prepare(cfg)?;
    let saved = load_predictors(&dir, &prep.problem)?;
    let gpath = dir.join(GENERATORS_FILE);
    let gens = if gpath.is_file() {
        read_json::<GeneratorsFile>(&gpath, GENERATORS_VERSION)?
    } else if cfg.discovery.k == 0 {
        GeneratorsFile {
            version: GENERATORS_VERSION.into(),
            basis: LieBasis::empty(prep.problem.m()),
            trace: Vec::new(),
        }
    } else {
        return Err(Error::Config(format!("{} not found; run discover-gen first", gpath.display())));
    };
    let mut manifest = ResultsManifest::new(cfg.clone());
    manifest.predictor_losses = saved.losses.clone();
    let cos = discover_cosets(&prep.problem, &saved.predictors, &cfg.discovery, &mut stage_rng(cfg.seed, Stage::Cosets))
        .map_err(|e| e.in_stage(Stage::Cosets.name()))?;
    let unique = filter_duplicate_cosets(&cos.bank, &gens.basis, cfg.discovery.top_q, cfg.discovery.epsilon).map_err(|e| e.in_stage("filter-cosets"))?;
    manifest.cosets = summarize(&cos.bank, &unique)?;
    manifest.bank = Some((&cos.bank).into());
    if cfg.metric && gens.basis.k() > 0 {
        manifest.metric = Some(invariant_metric(&gens.basis)?);
    }
    manifest.generators = Some(gens.basis);
    let mut rows = predictor_rows(&saved.traces);
    rows.extend(trace_rows(Stage::Generators.name(), 0, &gens.trace));
    rows.extend(trace_rows(Stage::Cosets.name(), 0, &cos.trace));
    write_traces(&rows, &dir.join(TRACES_FILE))?;
    save_manifest(&manifest, &dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Repeats generator discovery over `k` and seeds with the saved predictors; writes `dimension.json`.
pub fn run_select(cfg: &RunConfig) -> Result<crate::discovery::DimensionReport> {
    cfg.validate()?;
    let sel = cfg
        .select
        .as_ref()
        .ok_or_else(|| Error::Config("select-k needs a [select] table with k_max and runs".into()))?;
    let dir = output_dir(cfg)?;
    let prep = prepare(cfg)?;
    let mut predictors = load_predictors(&dir, &prep.problem)?.predictors;
    let seeds: Vec<u64> = (0..sel.runs as u64).map(|i| cfg.seed + i).collect();
    let report = select_basis_dimension(&prep.problem, &mut predictors, sel.k_max, &seeds, &cfg.discovery).map_err(|e| e.in_stage("select-k"))?;
    write_json(
        &DimensionFile {
            version: DIMENSION_VERSION.into(),
            report: report.clone(),
        },
        &dir.join(DIMENSION_FILE),
    )?;
    Ok(report)
}

struct Recorder {
    dir: PathBuf,
    manifest: ResultsManifest,
    rows: Vec<TraceRow>,
    timing: Timing,
    start: Instant,
}

impl Recorder {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.timing.stages.push((stage.to_string(), t.elapsed().as_secs_f64()));
        out.or_else(|e| {
            let e = e.in_stage(stage);
            self.manifest.status = RunStatus::Failed {
                stage: stage.to_string(),
                error: e.to_string(),
            };
            self.flush()?;
            Err(e)
        })
    }

    fn flush(&mut self) -> Result<()> {
        self.timing.total_seconds = self.start.elapsed().as_secs_f64();
        write_traces(&self.rows, &self.dir.join(TRACES_FILE))?;
        write_json(&self.timing, &self.dir.join(TIMING_FILE))?;
        save_manifest(&self.manifest, &self.dir.join(MANIFEST_FILE))
    }
}

/// Every stage in order. A failing stage still leaves a manifest naming it, plus whatever finished.
pub fn run_pipeline(cfg: &RunConfig) -> Result<DiscoveryResult> {
    cfg.validate()?;
    let dir = output_dir(cfg)?;
    let mut rec = Recorder {
        dir: dir.clone(),
        manifest: ResultsManifest::new(cfg.clone()),
        rows: Vec::new(),
        timing: Timing::default(),
        start: Instant::now(),
    };
    let d = &cfg.discovery;
    let prep = rec.time("prepare", || prepare(cfg))?;
    if let Some(a) = &prep.atlas {
        save_atlas(a, &dir.join(ATLAS_FILE))?;
    }
    let mut predictors = rec.time("build-predictors", || build_predictors(&prep.problem, &prep.kind, cfg.seed))?;
    let report = rec.time(Stage::Predictors.name(), || train(&prep, &mut predictors, cfg))?;
    rec.manifest.predictor_losses = report.final_loss.clone();
    rec.rows.extend(predictor_rows(&report.traces));
    save_predictors(&dir, &predictors, &report)?;

    if let Some(sel) = &cfg.select {
        let seeds: Vec<u64> = (0..sel.runs as u64).map(|i| cfg.seed + i).collect();
        let dim = rec.time("select-k", || select_basis_dimension(&prep.problem, &mut predictors, sel.k_max, &seeds, d))?;
        rec.manifest.dimension = Some(dim);
    }

    let gens = rec.time(Stage::Generators.name(), || {
        discover_generators(&prep.problem, &mut predictors, d, &mut stage_rng(d.seed, Stage::Generators))
    })?;
    rec.rows.extend(trace_rows(Stage::Generators.name(), 0, &gens.trace));
    rec.manifest.generators = Some(gens.basis.clone());

    let cos = rec.time(Stage::Cosets.name(), || discover_cosets(&prep.problem, &predictors, d, &mut stage_rng(d.seed, Stage::Cosets)))?;
    rec.rows.extend(trace_rows(Stage::Cosets.name(), 0, &cos.trace));
    rec.manifest.bank = Some((&cos.bank).into());
    let unique = rec.time("filter-cosets", || filter_duplicate_cosets(&cos.bank, &gens.basis, d.top_q, d.epsilon))?;
    rec.manifest.cosets = summarize(&cos.bank, &unique)?;

    if cfg.metric && gens.basis.k() > 0 {
        let basis = gens.basis.clone();
        rec.manifest.metric = Some(rec.time("metric", || invariant_metric(&basis))?);
    }
    rec.flush()?;
    Ok(DiscoveryResult {
        basis: gens.basis,
        cosets: rec.manifest.cosets.clone(),
        bank: cos.bank,
        predictor_losses: report.final_loss,
        predictor_traces: report.traces,
        generator_trace: gens.trace,
        coset_trace: cos.trace,
        metric: rec.manifest.metric.clone(),
        dimension: rec.manifest.dimension.clone(),
        config: d.clone(),
    })
}

/// Result of re-checking a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    /// Largest `||det| - 1|` over unique cosets.
    pub max_det_error: f64,
    /// Largest disagreement between stored and recomputed determinants.
    pub max_det_mismatch: f64,
    /// Smallest pairwise identity-component distance between unique cosets.
    pub min_pair_distance: Option<f64>,
    /// Stored and recomputed metric residual.
    pub metric_residual: Option<(f64, f64)>,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn metric_residual(basis: &LieBasis, j: &crate::tensor::Tensor) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for b in &basis.matrices {
        let r = b.transpose().matmul(j)?.add(&j.matmul(b)?);
        worst = worst.max(r.norm());
    }
    Ok(worst)
}

/// Recomputes determinants, pairwise coset distances and the metric residual.
pub fn verify_manifest(m: &ResultsManifest) -> Result<VerifyReport> {
    let d = &m.config.discovery;
    let mut failures = Vec::new();
    if let RunStatus::Failed { stage, error } = &m.status {
        failures.push(format!("run failed in {stage}: {error}"));
    }
    let basis = m.generators.clone().unwrap_or_else(|| LieBasis::empty(m.cosets.first().map_or(0, |c| c.matrix.shape()[0])));
    let mut max_det_error: f64 = 0.0;
    let mut max_det_mismatch: f64 = 0.0;
    for c in &m.cosets {
        let det = linalg::det(&c.matrix)?;
        max_det_mismatch = max_det_mismatch.max((det - c.det).abs());
        max_det_error = max_det_error.max((det.abs() - 1.0).abs());
    }
    if d.normalize_cosets && max_det_error > 1e-6 {
        failures.push(format!("| |det| - 1 | reaches {max_det_error:e}"));
    }
    if max_det_mismatch > 1e-9 {
        failures.push(format!("stored determinants differ from recomputed by {max_det_mismatch:e}"));
    }
    let mut min_pair: Option<f64> = None;
    for (i, a) in m.cosets.iter().enumerate() {
        for b in &m.cosets[i + 1..] {
            let dist = component_distance(&a.matrix.matmul(&linalg::inverse(&b.matrix)?)?, &basis)?;
            min_pair = Some(min_pair.map_or(dist, |v: f64| v.min(dist)));
            if dist <= d.epsilon {
                failures.push(format!("cosets {} and {} are {dist:.4} apart (epsilon {})", a.index, b.index, d.epsilon));
            }
        }
    }
    let metric_residual = match &m.metric {
        Some(metric) => {
            let r = metric_residual(&basis, &metric.j)?;
            if (r - metric.residual).abs() > 1e-9 * (1.0 + r.abs()) {
                failures.push(format!("metric residual stored {} but recomputed {r}", metric.residual));
            }
            let sym = metric.j.sub(&metric.j.transpose()).max_abs();
            if sym > 1e-12 || (metric.j.norm() - 1.0).abs() > 1e-9 {
                failures.push("metric is not a unit-norm symmetric matrix".into());
            }
            Some((metric.residual, r))
        }
        None => None,
    };
    Ok(VerifyReport {
        max_det_error,
        max_det_mismatch,
        min_pair_distance: min_pair,
        metric_residual,
        failures,
    })
}

/// Writes `generator_{i}.pgm`, `coset_{i}.pgm` and `metric.pgm` into `dir`.
pub fn export_manifest_heatmaps(m: &ResultsManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    let mut emit = |name: String, t: &crate::tensor::Tensor| -> Result<()> {
        let p = dir.join(name);
        export_heatmap(t, &p)?;
        out.push(p);
        Ok(())
    };
    if let Some(b) = &m.generators {
        for (i, g) in b.matrices.iter().enumerate() {
            emit(format!("generator_{i}.pgm"), g)?;
        }
    }
    for (i, c) in m.cosets.iter().enumerate() {
        emit(format!("coset_{i}.pgm"), &c.matrix)?;
    }
    if let Some(metric) = &m.metric {
        emit("metric.pgm".into(), &metric.j)?;
    }
    Ok(out)
}
