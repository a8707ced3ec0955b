//! The pipeline stages behind each subcommand.
//!
//! Every stage reads its inputs from the output directory, writes its
//! artifacts below it and finishes with a `run.json` manifest holding the
//! resolved config and the content hash of every input and output.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use humancal_core::behavior::{fit_behavior, integration_heatmap, partial_dependence, BehaviorModel, Heatmap};
use humancal_core::data::{split_by_participant, advice_accuracy, DatasetSplit, InteractionRecord};
use humancal_core::math::{linspace, symmetric_unit_grid};
use humancal_core::metrics::{
    advice_ece, binned_by, binned_metrics, calibration_bins, histogram, performance, BinnedQuantity,
    ResponseSelector, RESPONSE_BINS,
};
use humancal_core::optimizer::{fit_sensitivity, optimize, transform_curve};
use humancal_core::oracle::{delta_heatmap, open_unit_grid};
use humancal_core::simulator::{compare, record_outcome, sample_standard_errors, simulate, SimulationMode};
use humancal_core::synth;
use humancal_core::transform::TransformParams;
use serde_json::json;

use crate::artifact::{sha256_file, write_json, Artifact, Outputs, RunManifest, Table, RUN_FORMAT, RUN_VERSION};
use crate::config::RunConfig;
use crate::dataset::{read_records_path, write_records_path};
use crate::model_io::{load_bundle, save_bundle, BundleInfo, BundleManifest, BUNDLE_MANIFEST};

pub const DATASET_FILE: &str = "dataset.csv";
pub const RUN_FILE: &str = "run.json";
pub const SYNTHETIC_TASK: &str = "synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    FitBehavior,
    Optimize,
    Simulate,
    Sensitivity,
    Oracle,
    Metrics,
    ExportFigures,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ingest => "ingest",
            Self::FitBehavior => "fit-behavior",
            Self::Optimize => "optimize",
            Self::Simulate => "simulate",
            Self::Sensitivity => "sensitivity",
            Self::Oracle => "oracle",
            Self::Metrics => "metrics",
            Self::ExportFigures => "export-figures",
        }
    }

    /// Directory below the output root holding this stage's artifacts.
    pub fn dir(self) -> &'static str {
        match self {
            Self::FitBehavior => "behavior",
            Self::ExportFigures => "figures",
            other => other.name(),
        }
    }

    pub const ALL: [Stage; 8] = [
        Self::Ingest,
        Self::FitBehavior,
        Self::Optimize,
        Self::Simulate,
        Self::Sensitivity,
        Self::Oracle,
        Self::Metrics,
        Self::ExportFigures,
    ];
}

pub fn run(stage: Stage, cfg: &RunConfig) -> Result<RunManifest> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let ctx = StageContext { cfg, out: cfg.out_dir.clone(), stage };
    match stage {
        Stage::Ingest => ingest(&ctx),
        Stage::FitBehavior => fit(&ctx),
        Stage::Optimize => optimize_stage(&ctx),
        Stage::Simulate => simulate_stage(&ctx),
        Stage::Sensitivity => sensitivity_stage(&ctx),
        Stage::Oracle => oracle_stage(&ctx),
        Stage::Metrics => metrics_stage(&ctx),
        Stage::ExportFigures => figures_stage(&ctx),
    }
}

struct StageContext<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    stage: Stage,
}

impl StageContext<'_> {
    fn outputs(&self) -> Outputs {
        Outputs::new(&self.out)
    }

    fn rel(&self, file: &str) -> String {
        format!("{}/{file}", self.stage.dir())
    }

    fn finish(&self, inputs: Vec<Artifact>, outputs: Outputs, results: serde_json::Value) -> Result<RunManifest> {
        let manifest = RunManifest {
            format: RUN_FORMAT.into(),
            version: RUN_VERSION,
            command: self.stage.name().into(),
            config: serde_json::to_value(self.cfg)?,
            inputs,
            outputs: outputs.artifacts,
            results,
        };
        write_json(&self.out.join(self.rel(RUN_FILE)), &manifest)?;
        Ok(manifest)
    }

    fn dataset(&self) -> Result<(Vec<InteractionRecord>, Artifact)> {
        let path = self.out.join(DATASET_FILE);
        if !path.exists() {
            bail!("{} not found; run `humancal ingest` first", path.display());
        }
        let records = read_records_path(&path, &Default::default())
            .with_context(|| format!("reading {}", path.display()))?;
        if records.is_empty() {
            bail!("{} holds no records", path.display());
        }
        Ok((records, Artifact::of("dataset", &path, &self.out)?))
    }

    fn bundle(&self, dataset: &Artifact) -> Result<(BehaviorModel, BundleManifest, Artifact)> {
        let dir = self.out.join(Stage::FitBehavior.dir());
        let (model, manifest) = load_bundle(&dir)?;
        if manifest.dataset_sha256 != dataset.sha256 {
            bail!("behaviour bundle was fitted on a different dataset; rerun `humancal fit-behavior`");
        }
        Ok((model, manifest.clone(), Artifact::of("behavior_bundle", &dir.join(BUNDLE_MANIFEST), &self.out)?))
    }

    fn split(&self, records: &[InteractionRecord], bundle: &BundleManifest) -> Result<DatasetSplit> {
        Ok(split_by_participant(records, bundle.split_fractions, bundle.split_seed)?)
    }
}

fn read_run(out: &Path, stage: Stage) -> Result<(RunManifest, Artifact)> {
    let path = out.join(stage.dir()).join(RUN_FILE);
    if !path.exists() {
        bail!("{} not found; run `humancal {}` first", path.display(), stage.name());
    }
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(&path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    for a in &manifest.outputs {
        let p = out.join(&a.path);
        if !p.exists() || sha256_file(&p)? != a.sha256 {
            bail!("{} changed since `humancal {}` wrote it; rerun that stage", p.display(), stage.name());
        }
    }
    Ok((manifest, Artifact::of(&format!("{}_run", stage.dir()), &path, out)?))
}

/// Best transform of the last `optimize` run, checked against the current
/// dataset and bundle.
pub fn fitted_transform(out: &Path, dataset: Option<&Artifact>, bundle: Option<&Artifact>) -> Result<(TransformParams, Artifact)> {
    let (run, art) = read_run(out, Stage::Optimize)?;
    for want in [dataset, bundle].into_iter().flatten() {
        match run.input(&want.role) {
            Some(a) if a.sha256 == want.sha256 => {}
            _ => bail!("optimize run used a different {}; rerun `humancal optimize`", want.role),
        }
    }
    let t: TransformParams = serde_json::from_value(run.results["transform"].clone())
        .map_err(|e| anyhow!("optimize run has no transform: {e}"))?;
    Ok((t, art))
}

fn f(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, f)
}

fn participants(records: &[InteractionRecord]) -> usize {
    records.iter().map(|r| r.participant_id.as_str()).collect::<BTreeSet<_>>().len()
}

fn by_task(records: &[InteractionRecord]) -> Vec<(String, Vec<InteractionRecord>)> {
    let tasks: BTreeSet<&str> = records.iter().map(|r| r.task_id.as_str()).collect();
    let mut out: Vec<(String, Vec<InteractionRecord>)> = tasks
        .iter()
        .map(|t| ((*t).to_string(), records.iter().filter(|r| r.task_id == *t).cloned().collect()))
        .collect();
    if out.len() > 1 {
        out.push(("all".into(), records.to_vec()));
    }
    out
}

fn heatmap_table(h: &Heatmap) -> Table {
    let mut t = Table::new(std::iter::once(format!("{}\\{}", h.y_label, h.x_label)).chain(h.x.iter().map(|v| f(*v))));
    for (y, row) in h.y.iter().zip(&h.values) {
        t.push(std::iter::once(f(*y)).chain(row.iter().map(|v| f(*v))));
    }
    t
}

fn ingest(ctx: &StageContext<'_>) -> Result<RunManifest> {
    let ds = &ctx.cfg.dataset;
    let mut inputs = Vec::new();
    let mut records = match (&ds.path, &ds.synthetic) {
        (Some(path), None) => {
            let recs = read_records_path(path, &ds.schema).with_context(|| format!("ingesting {}", path.display()))?;
            inputs.push(Artifact::of("source", path, &ctx.out)?);
            recs
        }
        (None, Some(s)) => synth::generate(s, SYNTHETIC_TASK)?,
        (None, None) => bail!("no dataset configured: set `dataset.path` or add `[dataset.synthetic]`"),
        (Some(_), Some(_)) => bail!("dataset: give either `path` or `[dataset.synthetic]`, not both"),
    };
    if let Some(task) = &ds.task {
        records.retain(|r| &r.task_id == task);
    }
    let mut outputs = ctx.outputs();
    let path = ctx.out.join(DATASET_FILE);
    write_records_path(&path, &records)?;
    outputs.record("dataset", &path)?;

    let mut summary = Table::new(["task", "records", "participants", "questions", "advice_accuracy", "advice_ece"]);
    for (task, recs) in by_task(&records) {
        let questions = recs.iter().map(|r| r.question_id.as_str()).collect::<BTreeSet<_>>().len();
        summary.push([
            task,
            recs.len().to_string(),
            participants(&recs).to_string(),
            questions.to_string(),
            f(advice_accuracy(&recs)),
            f(advice_ece(&recs, ctx.cfg.metrics.ece_bins)?),
        ]);
    }
    outputs.table("summary", &ctx.rel("summary.csv"), &summary)?;
    ctx.finish(inputs, outputs, json!({ "records": records.len(), "participants": participants(&records) }))
}

fn fit(ctx: &StageContext<'_>) -> Result<RunManifest> {
    let cfg = ctx.cfg;
    let (records, dataset) = ctx.dataset()?;
    let split = split_by_participant(&records, cfg.split.fractions(), cfg.split.seed)?;
    let (model, report) = fit_behavior(&split, &cfg.behavior)?;
    let dir = ctx.out.join(Stage::FitBehavior.dir());
    let info = BundleInfo {
        split_seed: cfg.split.seed,
        split_fractions: cfg.split.fractions(),
        dataset_sha256: dataset.sha256.clone(),
        init_seed: cfg.behavior.init_seed,
        train: &cfg.behavior.train,
        report: &report,
    };
    let manifest = save_bundle(&dir, &model, &info)?;
    let mut outputs = ctx.outputs();
    for file in [crate::model_io::ACTIVATION_FILE, crate::model_io::INTEGRATION_FILE, BUNDLE_MANIFEST] {
        outputs.record(file.trim_end_matches(".json"), &dir.join(file))?;
    }
    let mut history = Table::new(["network", "epoch", "train_loss", "val_loss"]);
    for (name, h) in [("activation", &report.activation_history), ("integration", &report.integration_history)] {
        for (e, (t, v)) in h.train_loss.iter().zip(&h.val_loss).enumerate() {
            history.push([name.to_string(), e.to_string(), f(*t), f(*v)]);
        }
    }
    outputs.table("training_history", &ctx.rel("history.csv"), &history)?;
    let m = &manifest.metrics;
    let mut fit_table = Table::new(["metric", "value"]);
    fit_table.push(["activation_auc".to_string(), opt(m.activation_auc)]);
    fit_table.push(["integration_rmse".to_string(), opt(m.integration_rmse)]);
    fit_table.push(["integration_r2".to_string(), opt(m.integration_r2)]);
    fit_table.push(["train_records".to_string(), m.train_records.to_string()]);
    fit_table.push(["val_records".to_string(), m.val_records.to_string()]);
    fit_table.push(["test_records".to_string(), m.test_records.to_string()]);
    outputs.table("fit_report", &ctx.rel("fit.csv"), &fit_table)?;
    let results = json!({ "bundle_id": manifest.bundle_id(), "metrics": serde_json::to_value(m)? });
    ctx.finish(vec![dataset], outputs, results)
}

fn optimize_stage(ctx: &StageContext<'_>) -> Result<RunManifest> {
    let (records, dataset) = ctx.dataset()?;
    let (model, bundle, bundle_art) = ctx.bundle(&dataset)?;
    let run = optimize(&model, &records, &ctx.cfg.optimizer)?;
    let best = run.best_params();
    let mut outputs = ctx.outputs();
    let mut traj = Table::new(["epoch", "alpha", "beta", "objective"]);
    for p in &run.trajectory {
        traj.push([p.epoch.to_string(), f(p.alpha), f(p.beta), f(p.objective)]);
    }
    outputs.table("trajectory", &ctx.rel("trajectory.csv"), &traj)?;
    let grid = open_unit_grid(ctx.cfg.figures.curve_points);
    let mut curve = Table::new(["advice_prob", "baseline", "fitted"]);
    for ((u, b), (_, m)) in transform_curve(&TransformParams::BASELINE, &grid).into_iter().zip(transform_curve(&best, &grid)) {
        curve.push([f(u), f(b), f(m)]);
    }
    outputs.table("transform_curve", &ctx.rel("transform_curve.csv"), &curve)?;
    let results = json!({
        "transform": serde_json::to_value(best)?,
        "best": serde_json::to_value(run.best)?,
        "initial_objective": run.trajectory[0].objective,
        "bundle_id": bundle.bundle_id(),
    });
    ctx.finish(vec![dataset, bundle_art], outputs, results)
}

fn simulate_stage(ctx: &StageContext<'_>) -> Result<RunManifest> {
    let (records, dataset) = ctx.dataset()?;
    let (model, _, bundle_art) = ctx.bundle(&dataset)?;
    let (fitted, run_art) = fitted_transform(&ctx.out, Some(&dataset), Some(&bundle_art))?;
    let mut arms = vec![("fitted".to_string(), fitted)];
    for &l in &ctx.cfg.simulate.step_lambdas {
        arms.push((format!("step_{l}"), TransformParams::step(l)?));
    }
    let base = TransformParams::BASELINE;
    let mut report = Table::new([
        "arm",
        "transform",
        "accuracy",
        "correct_confidence",
        "activation_rate",
        "expected_loss",
        "delta_accuracy",
        "delta_correct_confidence",
        "delta_activation_rate",
    ]);
    let mut binned = Table::new(["arm", "binned_accuracy", "binned_correct_confidence", "binned_activation_rate"]);
    let mut results = serde_json::Map::new();
    let mut baseline_done = false;
    for (name, t) in &arms {
        let rep = compare(&model, &base, t, &records)?;
        if !baseline_done {
            let b = rep.baseline;
            report.push([
                "baseline".to_string(),
                base.to_string(),
                f(b.accuracy),
                f(b.correct_confidence),
                f(b.activation_rate),
                f(b.expected_loss),
                f(0.0),
                f(0.0),
                f(0.0),
            ]);
            binned_row(&mut binned, "baseline", &model, &base, &records)?;
            baseline_done = true;
        }
        let (m, d) = (rep.modified, rep.delta);
        report.push([
            name.clone(),
            t.to_string(),
            f(m.accuracy),
            f(m.correct_confidence),
            f(m.activation_rate),
            f(m.expected_loss),
            f(d.accuracy),
            f(d.correct_confidence),
            f(d.activation_rate),
        ]);
        binned_row(&mut binned, name, &model, t, &records)?;
        results.insert(name.clone(), serde_json::to_value(&rep)?);
    }
    let mut outputs = ctx.outputs();
    outputs.table("report", &ctx.rel("report.csv"), &report)?;
    outputs.table("binned_report", &ctx.rel("binned.csv"), &binned)?;
    if let Some(draws) = ctx.cfg.simulate.sample_draws {
        let mut sampled = Table::new(["arm", "mode", "accuracy", "correct_confidence", "activation_rate", "se_accuracy", "se_correct_confidence", "se_activation_rate"]);
        for (name, t) in std::iter::once(("baseline".to_string(), base)).chain(arms.iter().cloned()) {
            let e = simulate(&model, &t, &records, SimulationMode::Expectation)?;
            let s = simulate(&model, &t, &records, SimulationMode::Sample { seed: ctx.cfg.simulate.sample_seed, draws })?;
            let se = sample_standard_errors(&model, &t, &records, draws);
            sampled.push([name.clone(), "expectation".into(), f(e.accuracy), f(e.correct_confidence), f(e.activation_rate), String::new(), String::new(), String::new()]);
            sampled.push([name, "sample".into(), f(s.accuracy), f(s.correct_confidence), f(s.activation_rate), f(se[0]), f(se[1]), f(se[2])]);
        }
        outputs.table("sample_check", &ctx.rel("sample_check.csv"), &sampled)?;
    }
    ctx.finish(vec![dataset, bundle_art, run_art], outputs, serde_json::Value::Object(results))
}

fn binned_row(
    table: &mut Table,
    name: &str,
    model: &BehaviorModel,
    t: &TransformParams,
    records: &[InteractionRecord],
) -> Result<()> {
    let correct = |v: f64| if v > 0.0 { 1.0 } else { 0.0 };
    let acc = binned_by(records, RESPONSE_BINS, |r| {
        let o = record_outcome(model, t, r);
        (1.0 - o.p_activate) * correct(r.r1.value()) + o.p_activate * correct(o.r2_if_activated.value())
    })?;
    let conf = binned_by(records, RESPONSE_BINS, |r| {
        let o = record_outcome(model, t, r);
        (1.0 - o.p_activate) * r.r1.value() + o.p_activate * o.r2_if_activated.value()
    })?;
    let act = binned_by(records, RESPONSE_BINS, |r| record_outcome(model, t, r).p_activate)?;
    table.push([name.to_string(), f(acc.mean), f(conf.mean), f(act.mean)]);
    Ok(())
}

fn sensitivity_stage(ctx: &StageContext<'_>) -> Result<RunManifest> {
    let (records, dataset) = ctx.dataset()?;
    let (model, _, bundle_art) = ctx.bundle(&dataset)?;
    let s = &ctx.cfg.sensitivity;
    let results = fit_sensitivity(&model, &records, &s.targets, &ctx.cfg.optimizer, s.shift_seed)?;
    let mut table = Table::new([
        "target_accuracy",
        "advice_accuracy",
        "alpha",
        "beta",
        "baseline_accuracy",
        "modified_accuracy",
        "delta_accuracy",
        "delta_correct_confidence",
        "delta_activation_rate",
    ]);
    for r in &results {
        let d = r.report.delta;
        table.push([
            r.target_accuracy.map_or_else(|| "observed".to_string(), f),
            f(r.achieved_accuracy),
            f(r.run.best.alpha),
            f(r.run.best.beta),
            f(r.report.baseline.accuracy),
            f(r.report.modified.accuracy),
            f(d.accuracy),
            f(d.correct_confidence),
            f(d.activation_rate),
        ]);
    }
    let mut outputs = ctx.outputs();
    outputs.table("report", &ctx.rel("report.csv"), &table)?;
    let mut curves = Table::new(
        std::iter::once("advice_prob".to_string())
            .chain(results.iter().map(|r| format!("accuracy_{}", r.target_accuracy.map_or_else(|| "observed".into(), f)))),
    );
    let grid = open_unit_grid(ctx.cfg.figures.curve_points);
    let cols: Vec<Vec<(f64, f64)>> = results.iter().map(|r| transform_curve(&r.run.best_params(), &grid)).collect();
    for (i, u) in grid.iter().enumerate() {
        curves.push(std::iter::once(f(*u)).chain(cols.iter().map(|c| f(c[i].1))));
    }
    outputs.table("transform_curves", &ctx.rel("transform_curves.csv"), &curves)?;
    let summary: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            json!({
                "target_accuracy": r.target_accuracy,
                "advice_accuracy": r.achieved_accuracy,
                "transform": r.run.best_params(),
                "delta": r.report.delta,
            })
        })
        .collect();
    ctx.finish(vec![dataset, bundle_art], outputs, json!({ "rows": summary }))
}

fn oracle_stage(ctx: &StageContext<'_>) -> Result<RunManifest> {
    let grid = open_unit_grid(ctx.cfg.oracle.grid);
    let mut outputs = ctx.outputs();
    let mut summary = Table::new(["setting", "cells", "more_confident", "less_confident", "unchanged"]);
    let mut results = serde_json::Map::new();
    for (name, setting) in &ctx.cfg.oracle.settings {
        let h = delta_heatmap(setting, &grid, &grid)?;
        outputs.table(&format!("heatmap_{name}"), &ctx.rel(&format!("{name}.csv")), &heatmap_table(&h))?;
        let mut counts = [0usize; 3];
        // Presented minus calibrated advice, read toward the advised label.
        for (row, _) in h.values.iter().zip(&h.y) {
            for (v, a) in row.iter().zip(&h.x) {
                let toward = if setting.advice_calibration.apply(*a) >= 0.5 { *v } else { -*v };
                counts[if toward > 0.0 { 0 } else if toward < 0.0 { 1 } else { 2 }] += 1;
            }
        }
        let cells = grid.len() * grid.len();
        summary.push([name.clone(), cells.to_string(), counts[0].to_string(), counts[1].to_string(), counts[2].to_string()]);
        results.insert(name.clone(), json!({ "setting": setting, "more_confident": counts[0], "less_confident": counts[1], "unchanged": counts[2] }));
    }
    outputs.table("summary", &ctx.rel("summary.csv"), &summary)?;
    ctx.finish(Vec::new(), outputs, serde_json::Value::Object(results))
}

fn metrics_stage(ctx: &StageContext<'_>) -> Result<RunManifest> {
    let (records, dataset) = ctx.dataset()?;
    let delta = ctx.cfg.behavior.delta;
    let bins = ctx.cfg.metrics.ece_bins;
    let mut summary = Table::new([
        "task",
        "records",
        "participants",
        "advice_accuracy",
        "advice_ece",
        "accuracy_r1",
        "accuracy_r2",
        "correct_confidence_r1",
        "correct_confidence_r2",
        "activation_rate",
        "binned_activation_rate",
        "binned_accuracy_delta",
        "binned_confidence_delta",
    ]);
    let mut results = serde_json::Map::new();
    for (task, recs) in by_task(&records) {
        let p1 = performance(&recs, ResponseSelector::R1, delta)?;
        let p2 = performance(&recs, ResponseSelector::R2, delta)?;
        let ece = advice_ece(&recs, bins)?;
        let b_act = binned_metrics(&recs, BinnedQuantity::ActivationRate { delta })?;
        let b_acc = binned_metrics(&recs, BinnedQuantity::AccuracyDelta)?;
        let b_conf = binned_metrics(&recs, BinnedQuantity::ConfidenceDelta)?;
        summary.push([
            task.clone(),
            recs.len().to_string(),
            participants(&recs).to_string(),
            f(advice_accuracy(&recs)),
            f(ece),
            f(p1.accuracy),
            f(p2.accuracy),
            f(p1.correct_confidence),
            f(p2.correct_confidence),
            f(p2.activation_rate),
            f(b_act.mean),
            f(b_acc.mean),
            f(b_conf.mean),
        ]);
        results.insert(task, json!({ "advice_ece": ece, "r1": p1, "r2": p2 }));
    }
    let mut outputs = ctx.outputs();
    outputs.table("summary", &ctx.rel("summary.csv"), &summary)?;

    let probs: Vec<f64> = records.iter().map(|r| r.advice.prob()).collect();
    let cal = calibration_bins(&probs, &vec![1u8; probs.len()], bins)?;
    let mut cal_table = Table::new(["bin_lo", "bin_hi", "count", "mean_confidence", "accuracy"]);
    for (i, b) in cal.bins.iter().enumerate() {
        cal_table.push([f(cal.edges[i]), f(cal.edges[i + 1]), b.count.to_string(), f(b.mean_confidence), f(b.accuracy)]);
    }
    outputs.table("advice_calibration", &ctx.rel("advice_calibration.csv"), &cal_table)?;

    let quantities = [
        ("activation_rate", BinnedQuantity::ActivationRate { delta }),
        ("accuracy_r1", BinnedQuantity::Accuracy { response: ResponseSelector::R1 }),
        ("accuracy_r2", BinnedQuantity::Accuracy { response: ResponseSelector::R2 }),
        ("accuracy_delta", BinnedQuantity::AccuracyDelta),
        ("confidence_delta", BinnedQuantity::ConfidenceDelta),
    ];
    let metrics: Vec<_> = quantities.iter().map(|(_, q)| binned_metrics(&records, *q)).collect::<Result<_, _>>()?;
    let mut binned = Table::new(["bin_lo", "bin_hi", "count"].into_iter().map(String::from).chain(quantities.iter().map(|(n, _)| n.to_string())));
    for i in 0..RESPONSE_BINS {
        binned.push([f(metrics[0].edges[i]), f(metrics[0].edges[i + 1]), metrics[0].counts[i].to_string()].into_iter().chain(
            metrics.iter().map(|m| opt(m.values[i])),
        ));
    }
    outputs.table("binned", &ctx.rel("binned.csv"), &binned)?;
    ctx.finish(vec![dataset], outputs, serde_json::Value::Object(results))
}

fn figures_stage(ctx: &StageContext<'_>) -> Result<RunManifest> {
    let (records, dataset) = ctx.dataset()?;
    let (model, bundle, bundle_art) = ctx.bundle(&dataset)?;
    let (fitted, run_art) = fitted_transform(&ctx.out, Some(&dataset), Some(&bundle_art))?;
    let fig = ctx.cfg.figures;
    let split = ctx.split(&records, &bundle)?;
    let eval = if split.test.is_empty() { &records } else { &split.test };
    let mut outputs = ctx.outputs();

    let grid = symmetric_unit_grid(fig.grid_points);
    let mut pdp = Table::new(["advice", "activation"]);
    for (s, v) in partial_dependence(&model, eval, &grid)? {
        pdp.push([f(s), f(v)]);
    }
    outputs.table("activation_pdp", &ctx.rel("activation_pdp.csv"), &pdp)?;
    let heat = integration_heatmap(&model, eval, &grid, &grid)?;
    outputs.table("integration_heatmap", &ctx.rel("integration_heatmap.csv"), &heatmap_table(&heat))?;

    let curve_grid = open_unit_grid(fig.curve_points);
    let mut arms = vec![("baseline".to_string(), TransformParams::BASELINE), ("fitted".to_string(), fitted)];
    for &l in &ctx.cfg.simulate.step_lambdas {
        arms.push((format!("step_{l}"), TransformParams::step(l)?));
    }
    let cols: Vec<Vec<(f64, f64)>> = arms.iter().map(|(_, t)| transform_curve(t, &curve_grid)).collect();
    let mut curves = Table::new(std::iter::once("advice_prob".to_string()).chain(arms.iter().map(|(n, _)| n.clone())));
    for (i, u) in curve_grid.iter().enumerate() {
        curves.push(std::iter::once(f(*u)).chain(cols.iter().map(|c| f(c[i].1))));
    }
    outputs.table("transform_curves", &ctx.rel("transform_curves.csv"), &curves)?;

    let tasks = by_task(&records);
    let mut density = Table::new(std::iter::once("signed_advice".to_string()).chain(tasks.iter().map(|(t, _)| t.clone())));
    let hists: Vec<(Vec<f64>, Vec<usize>)> = tasks
        .iter()
        .map(|(_, recs)| {
            let mut seen = BTreeSet::new();
            let vals: Vec<f64> = recs
                .iter()
                .filter(|r| seen.insert(r.question_id.clone()))
                .map(|r| r.advice.signed())
                .collect();
            histogram(&vals, -1.0, 1.0, fig.density_bins)
        })
        .collect();
    let width = 2.0 / fig.density_bins as f64;
    for b in 0..fig.density_bins {
        let centre = 0.5 * (hists[0].0[b] + hists[0].0[b + 1]);
        density.push(std::iter::once(f(centre)).chain(hists.iter().map(|(_, c)| {
            let n: usize = c.iter().sum();
            f(c[b] as f64 / (n as f64 * width))
        })));
    }
    outputs.table("advice_density", &ctx.rel("advice_density.csv"), &density)?;

    let mut ladder = Table::new(["ses", "participants"]);
    let mut per: std::collections::BTreeMap<&str, f64> = std::collections::BTreeMap::new();
    for r in &records {
        per.insert(r.participant_id.as_str(), r.demographics.ses);
    }
    for step in linspace(1.0, 10.0, 10) {
        ladder.push([f(step), per.values().filter(|v| **v == step).count().to_string()]);
    }
    outputs.table("ses_ladder", &ctx.rel("ses_ladder.csv"), &ladder)?;

    let mut binned = Table::new(["arm", "binned_accuracy", "binned_correct_confidence", "binned_activation_rate"]);
    for (name, t) in &arms {
        binned_row(&mut binned, name, &model, t, &records)?;
    }
    outputs.table("step_transforms", &ctx.rel("step_transforms.csv"), &binned)?;
    ctx.finish(vec![dataset, bundle_art, run_art], outputs, json!({ "eval_records": eval.len() }))
}
