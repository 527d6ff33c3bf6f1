use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{SecondsFormat, Timelike};
use parkcast_core::evaltune::{
    compare_models, cv_table_csv, default_space, grid_search, random_search, split_dataset,
    CompareOptions, SearchOptions, SearchResult, Strategy,
};
use parkcast_core::features::{
    aggregate_hourly, clean, correlate, read_rows_csv, write_rows_csv, AggregationOptions,
    DatasetSidecar, SectionOccupancy, StudyWindow,
};
use parkcast_core::fingerprint::{of_json, sha256_hex};
use parkcast_core::geodata::{campus_to_geojson, load_campus};
use parkcast_core::models::{fit, Family};
use parkcast_core::spatial::{
    read_joined_csv, read_observations_csv, spatial_join, write_joined_csv, write_observations_csv,
};
use parkcast_core::synth::{generate, write_truth_csv, SynthSpec};
use parkcast_core::{fixtures, Campus, Dataset, FeatureRow};
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::manifest::{pretty, read_input, StageWriter, Workspace, TOOL_VERSION};
use crate::{
    AnalyzeArgs, BuildArgs, Cli, CliError, EvaluateArgs, Format, IngestArgs, JoinArgs, ServeArgs,
    SynthArgs, TrainArgs, TuneArgs,
};

pub struct Context {
    pub ws: Workspace,
    pub cfg: PipelineConfig,
    pub config_hash: String,
    pub format: Format,
}

impl Context {
    pub fn new(cli: &Cli, cfg: PipelineConfig) -> Result<Self, CliError> {
        Ok(Self {
            ws: Workspace::new(cli.out.clone())?,
            config_hash: of_json(&cfg),
            cfg,
            format: cli.format,
        })
    }

    fn stage(&self, name: &str) -> StageWriter<'_> {
        StageWriter::new(&self.ws, name, &self.config_hash, self.cfg.seed)
    }

    fn emit(&self, text: String, summary: Value) -> Result<String, CliError> {
        match self.format {
            Format::Text => Ok(text),
            Format::Json => pretty(&summary),
        }
    }
}

fn csv_bytes<F>(write: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> parkcast_core::Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn campus_bytes(campus: &Campus) -> Result<Vec<u8>, CliError> {
    Ok(pretty(&campus_to_geojson(campus))?.into_bytes())
}

fn occupancy_csv(rows: &[SectionOccupancy]) -> Vec<u8> {
    let mut s = String::from("timestamp,section_id,capacity,occupied\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            r.section_id,
            r.capacity,
            r.occupied
        );
    }
    s.into_bytes()
}

fn display(p: &std::path::Path) -> String {
    p.display().to_string()
}

pub fn synth(ctx: &Context, args: &SynthArgs) -> Result<String, CliError> {
    let mut stage = ctx.stage("synth");
    let campus = match &args.campus {
        Some(p) => {
            let bytes = read_input(p)?;
            stage.input(display(p), sha256_hex(&bytes));
            load_campus(&bytes)?
        }
        None => fixtures::campus(),
    };
    let mut spec = ctx.cfg.synth.clone().unwrap_or_else(|| {
        let gates: Vec<u32> = campus.gates.iter().map(|g| g.id).collect();
        let mut s = SynthSpec::benchmark(&gates);
        s.snap_threshold_m = ctx.cfg.snap_threshold_m;
        s
    });
    if let Some(d) = args.days {
        spec.days = d;
    }
    if let Some(s) = args.sigma {
        spec.noise_sigma_m = s;
    }
    let out = generate(&spec, &campus, ctx.cfg.seed)?;
    stage.write("synth-campus.geojson", &campus_bytes(&campus)?)?;
    stage.write(
        "synth-observations.csv",
        &csv_bytes(|b| write_observations_csv(b, &out.observations))?,
    )?;
    stage.write(
        "synth-truth.csv",
        &csv_bytes(|b| write_truth_csv(b, &out.truth))?,
    )?;
    stage.write("synth-occupancy.csv", &occupancy_csv(&out.occupancy))?;
    let summary = json!({
        "observations": out.observations.len(),
        "truth_rows": out.truth.len(),
        "suppressed_departures": out.suppressed_departures,
        "spec": spec,
    });
    stage.finish(summary.clone())?;
    ctx.emit(
        format!(
            "synth: {} observations, {} ground-truth rows ({} departures suppressed) in {}\n",
            out.observations.len(),
            out.truth.len(),
            out.suppressed_departures,
            ctx.ws.dir.display()
        ),
        summary,
    )
}

pub fn ingest(ctx: &Context, args: &IngestArgs) -> Result<String, CliError> {
    let mut stage = ctx.stage("ingest");
    let campus_raw = read_input(&args.campus)?;
    let obs_raw = read_input(&args.observations)?;
    stage.input(display(&args.campus), sha256_hex(&campus_raw));
    stage.input(display(&args.observations), sha256_hex(&obs_raw));
    let campus = load_campus(&campus_raw)?;
    let mut obs = read_observations_csv(obs_raw.as_slice())?;
    let bad: Vec<String> = obs
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.check().err().map(|e| format!("row {}: {e}", i + 1)))
        .collect();
    if !bad.is_empty() {
        return Err(CliError::Validation(format!(
            "{} invalid observation(s): {}",
            bad.len(),
            bad.join("; ")
        )));
    }
    obs.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.vehicle_key.cmp(&b.vehicle_key))
    });
    stage.write("campus.geojson", &campus_bytes(&campus)?)?;
    stage.write(
        "observations.csv",
        &csv_bytes(|b| write_observations_csv(b, &obs))?,
    )?;
    let summary = json!({
        "sections": campus.sections.len(),
        "gates": campus.gates.len(),
        "total_capacity": campus.total_capacity(),
        "observations": obs.len(),
    });
    stage.finish(summary.clone())?;
    ctx.emit(
        format!(
            "ingest: campus with {} sections, {} gates, capacity {}; {} observations\n",
            campus.sections.len(),
            campus.gates.len(),
            campus.total_capacity(),
            obs.len()
        ),
        summary,
    )
}

pub fn join(ctx: &Context, args: &JoinArgs) -> Result<String, CliError> {
    let mut stage = ctx.stage("join");
    let campus_raw = match &args.campus {
        Some(p) => {
            let b = read_input(p)?;
            stage.input(display(p), sha256_hex(&b));
            b
        }
        None => {
            let (b, sha) = ctx.ws.read_verified("ingest", "campus.geojson")?;
            stage.input("ingest:campus.geojson", sha);
            b
        }
    };
    let obs_raw = match &args.observations {
        Some(p) => {
            let b = read_input(p)?;
            stage.input(display(p), sha256_hex(&b));
            b
        }
        None => {
            let (b, sha) = ctx.ws.read_verified("ingest", "observations.csv")?;
            stage.input("ingest:observations.csv", sha);
            b
        }
    };
    let campus = load_campus(&campus_raw)?;
    let obs = read_observations_csv(obs_raw.as_slice())?;
    let threshold = args.snap_threshold_m.unwrap_or(ctx.cfg.snap_threshold_m);
    if !(threshold > 0.0) {
        return Err(CliError::Validation(format!(
            "snap threshold must be positive, got {threshold}"
        )));
    }
    let joined = spatial_join(&obs, &campus, threshold)?;
    let snapped = joined.iter().filter(|j| j.segment_id.is_some()).count();
    let in_section = joined.iter().filter(|j| j.section_id.is_some()).count();
    stage.write("join-campus.geojson", &campus_bytes(&campus)?)?;
    stage.write("joined.csv", &csv_bytes(|b| write_joined_csv(b, &joined))?)?;
    let summary = json!({
        "observations": joined.len(),
        "snapped": snapped,
        "in_section": in_section,
        "snap_threshold_m": threshold,
    });
    stage.finish(summary.clone())?;
    ctx.emit(
        format!(
            "join: {} observations, {snapped} snapped to a segment, {in_section} inside a section\n",
            joined.len()
        ),
        summary,
    )
}

fn study_window(
    ctx: &Context,
    joined: &[parkcast_core::JoinedObservation],
) -> Result<StudyWindow, CliError> {
    let cfg = &ctx.cfg;
    if let Some(w) = &cfg.window {
        return Ok(StudyWindow::days(
            w.first_day,
            w.days,
            w.start_hour,
            w.end_hour,
        )?);
    }
    let days: Vec<_> = joined
        .iter()
        .map(|j| j.observation.timestamp.date_naive())
        .collect();
    let (Some(first), Some(last)) = (days.iter().min(), days.iter().max()) else {
        return Err(CliError::Validation(
            "no observations to derive a study window from".into(),
        ));
    };
    let n = (*last - *first).num_days() as u32 + 1;
    Ok(StudyWindow::days(
        *first,
        n,
        cfg.daily_start_hour,
        cfg.daily_end_hour,
    )?)
}

pub fn build_dataset(ctx: &Context, args: &BuildArgs) -> Result<String, CliError> {
    let mut stage = ctx.stage("build-dataset");
    let (joined_raw, sha) = ctx.ws.read_verified("join", "joined.csv")?;
    stage.input("join:joined.csv", sha);
    let (campus_raw, sha) = ctx.ws.read_verified("join", "join-campus.geojson")?;
    stage.input("join:join-campus.geojson", sha);
    let campus = load_campus(&campus_raw)?;
    let joined = read_joined_csv(joined_raw.as_slice())?;
    let window = study_window(ctx, &joined)?;
    let options = AggregationOptions {
        initial_occupancy: ctx.cfg.initial_map(),
    };
    let agg = aggregate_hourly(&joined, &campus, &window, &options)?;
    let (rows, report) = clean(&agg.rows);
    let train_ratio = args.train_ratio.unwrap_or(ctx.cfg.split.train_ratio);
    let (ds, plan) = split_dataset(&rows, train_ratio, ctx.cfg.split_mode())?;

    let mut provenance = BTreeMap::new();
    provenance.insert("tool_version".to_string(), TOOL_VERSION.to_string());
    provenance.insert("config_hash".to_string(), ctx.config_hash.clone());
    provenance.insert("seed".to_string(), ctx.cfg.seed.to_string());
    for (k, v) in stage.inputs() {
        provenance.insert(format!("input {k}"), v.clone());
    }
    let sidecar = DatasetSidecar::new(&ds, provenance);

    stage.write(
        "features.csv",
        &csv_bytes(|b| write_rows_csv(b, &agg.rows))?,
    )?;
    stage.write("occupancy.csv", &occupancy_csv(&agg.occupancy))?;
    stage.write("dataset.csv", &csv_bytes(|b| write_rows_csv(b, &rows))?)?;
    stage.write("dataset.json", pretty(&sidecar)?.as_bytes())?;
    let summary = json!({
        "window": window,
        "rows": agg.rows.len(),
        "clamp_events": agg.clamp_events,
        "clean": report,
        "split": { "train_ratio": train_ratio, "mode": ctx.cfg.split_mode() },
        "train_rows": plan.train.len(),
        "test_rows": plan.test.len(),
        "layout_hash": sidecar.layout_hash,
    });
    stage.finish(summary.clone())?;
    ctx.emit(
        format!(
            "build-dataset: {} hourly rows, {} after cleaning ({} train / {} test), {} clamp events\n",
            agg.rows.len(),
            rows.len(),
            plan.train.len(),
            plan.test.len(),
            agg.clamp_events
        ),
        summary,
    )
}

/// The built dataset, re-split exactly as recorded by `build-dataset`.
fn load_dataset(ctx: &Context, stage: &mut StageWriter<'_>) -> Result<Dataset, CliError> {
    let manifest = ctx.ws.read_manifest("build-dataset")?;
    let (rows_raw, sha) = ctx.ws.read_verified("build-dataset", "dataset.csv")?;
    stage.input("build-dataset:dataset.csv", sha);
    let (sidecar_raw, sha) = ctx.ws.read_verified("build-dataset", "dataset.json")?;
    stage.input("build-dataset:dataset.json", sha);
    let sidecar: DatasetSidecar = serde_json::from_slice(&sidecar_raw)
        .map_err(|e| CliError::Validation(format!("dataset.json: {e}")))?;
    let split = &manifest.details["split"];
    let ratio = split["train_ratio"].as_f64().ok_or_else(|| {
        CliError::Validation("build-dataset manifest lacks split.train_ratio".into())
    })?;
    let mode = serde_json::from_value(split["mode"].clone())
        .map_err(|e| CliError::Validation(format!("build-dataset manifest split mode: {e}")))?;
    let rows = read_rows_csv(rows_raw.as_slice())?;
    let (ds, _) = split_dataset(&rows, ratio, mode)?;
    let rebuilt = ds.encoder.layout.hash();
    if rebuilt != sidecar.layout_hash {
        return Err(CliError::Validation(format!(
            "dataset layout fingerprint mismatch: expected {}, actual {rebuilt}",
            sidecar.layout_hash
        )));
    }
    Ok(ds)
}

fn attribute(name: &str, r: &FeatureRow) -> f64 {
    match name {
        "distance_m" => r.distance_m,
        "hour_of_day" => f64::from(r.timestamp.hour()),
        "travel_speed_kmh" => r.travel_speed_kmh,
        "n_vehicles" => f64::from(r.n_vehicles),
        "n_vehicles_exit" => f64::from(r.n_vehicles_exit),
        "segment_no" => f64::from(r.segment_no),
        _ => f64::from(r.total_parking_space),
    }
}

const ATTRIBUTES: [&str; 7] = [
    "distance_m",
    "hour_of_day",
    "travel_speed_kmh",
    "n_vehicles",
    "n_vehicles_exit",
    "segment_no",
    "total_parking_space",
];

pub fn analyze(ctx: &Context, args: &AnalyzeArgs) -> Result<String, CliError> {
    let mut stage = ctx.stage("analyze");
    let raw = match &args.rows {
        Some(p) => {
            let b = read_input(p)?;
            stage.input(display(p), sha256_hex(&b));
            b
        }
        None => {
            let (b, sha) = ctx.ws.read_verified("build-dataset", "dataset.csv")?;
            stage.input("build-dataset:dataset.csv", sha);
            b
        }
    };
    let rows: Vec<FeatureRow> = read_rows_csv(raw.as_slice())?
        .into_iter()
        .filter(|r| r.availability.is_finite())
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| r.availability).collect();
    let mut results = Vec::new();
    let mut text = String::from("Variable            |   n |       r |     rho |   p-value\n");
    text.push_str("--------------------+-----+---------+---------+----------\n");
    for name in ATTRIBUTES {
        let x: Vec<f64> = rows.iter().map(|r| attribute(name, r)).collect();
        match correlate(name, &x, "availability", &y) {
            Ok(c) => {
                let _ = writeln!(
                    text,
                    "{name:<20}| {:>3} | {:>7.3} | {:>7.3} | {:>9.3e}",
                    c.n, c.r, c.rho, c.p_value
                );
                results
                    .push(serde_json::to_value(&c).map_err(|e| CliError::Runtime(e.to_string()))?);
            }
            Err(e) => {
                let _ = writeln!(text, "{name:<20}| {:>3} | undefined: {e}", x.len());
                results.push(json!({ "variable_pair": [name, "availability"], "n": x.len(), "error": e.to_string() }));
            }
        }
    }

    // Mean traffic and availability per (hour of day, segment) for plotting.
    let mut profile: BTreeMap<(u32, u32), (f64, f64, f64, usize)> = BTreeMap::new();
    for r in &rows {
        let e = profile
            .entry((r.timestamp.hour(), r.segment_no))
            .or_default();
        e.0 += f64::from(r.n_vehicles);
        e.1 += f64::from(r.n_vehicles_exit);
        e.2 += r.availability;
        e.3 += 1;
    }
    let mut csv = String::from(
        "hour_of_day,segment_no,mean_n_vehicles,mean_n_vehicles_exit,mean_availability,rows\n",
    );
    for ((h, s), (a, b, c, n)) in &profile {
        let n_f = *n as f64;
        let _ = writeln!(csv, "{h},{s},{},{},{},{n}", a / n_f, b / n_f, c / n_f);
    }

    let summary = json!({ "rows": rows.len(), "correlations": results });
    stage.write("analysis.json", pretty(&summary)?.as_bytes())?;
    stage.write("profile.csv", csv.as_bytes())?;
    stage.finish(json!({ "rows": rows.len() }))?;
    ctx.emit(text, summary)
}

fn search_options(ctx: &Context) -> SearchOptions {
    SearchOptions {
        cv_k: ctx.cfg.search.cv_k,
        mode: ctx.cfg.cv_mode(),
        seed: ctx.cfg.seed,
    }
}

pub fn train(ctx: &Context, args: &TrainArgs) -> Result<String, CliError> {
    let name = format!("train-{}", args.family);
    let mut stage = ctx.stage(&name);
    let ds = load_dataset(ctx, &mut stage)?;
    let hp = if args.tuned {
        let file = format!("tune-{}.json", args.family);
        let (raw, sha) = ctx.ws.read_verified("tune", &file)?;
        stage.input(format!("tune:{file}"), sha);
        let found: SearchResult = serde_json::from_slice(&raw)
            .map_err(|e| CliError::Validation(format!("{file}: {e}")))?;
        found.best_hyperparameters
    } else {
        ctx.cfg.base(args.family)
    };
    let model = fit(&ds.train.design, &ds.train.target, &hp, ctx.cfg.seed)?
        .with_layout_hash(ds.encoder.layout.hash());
    let pred = model.predict(&ds.train.design)?;
    let train_rmse = parkcast_core::evaltune::rmse(&ds.train.target, &pred)?;
    let file = format!("model-{}.json", args.family);
    stage.write(&file, model.to_json()?.as_bytes())?;
    let summary = json!({
        "family": args.family,
        "model": file,
        "model_fingerprint": model.fingerprint(),
        "train_rows": ds.train.target.len(),
        "train_rmse": train_rmse,
        "hyperparameters": hp,
    });
    stage.finish(summary.clone())?;
    ctx.emit(
        format!(
            "train: {} on {} rows, training RMSE {train_rmse:.4}, wrote {file}\n",
            args.family.label(),
            ds.train.target.len()
        ),
        summary,
    )
}

fn families(requested: &[Family], ctx: &Context) -> Vec<Family> {
    if requested.is_empty() {
        ctx.cfg.families.clone()
    } else {
        requested.to_vec()
    }
}

pub fn tune(ctx: &Context, args: &TuneArgs) -> Result<String, CliError> {
    let mut stage = ctx.stage("tune");
    let ds = load_dataset(ctx, &mut stage)?;
    let strategy = match args.budget {
        Some(budget) => Strategy::Random { budget },
        None => ctx.cfg.strategy(),
    };
    let opts = search_options(ctx);
    let mut text = String::new();
    let mut results = Vec::new();
    for family in families(&args.family, ctx) {
        let space = ctx
            .cfg
            .search
            .spaces
            .get(&family)
            .cloned()
            .unwrap_or_else(|| default_space(family));
        let base = ctx.cfg.base(family);
        let (x, y) = (&ds.train.design, &ds.train.target);
        let found = match strategy {
            Strategy::Grid => grid_search(&space, &base, x, y, &opts)?,
            Strategy::Random { budget } => random_search(&space, &base, budget, x, y, &opts)?,
        };
        stage.write(&format!("tune-{family}.json"), pretty(&found)?.as_bytes())?;
        stage.write(
            &format!("cv-{family}.csv"),
            cv_table_csv(&found)?.as_bytes(),
        )?;
        let chosen: Vec<String> = found
            .best_params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        let _ = writeln!(
            text,
            "tune: {} best CV RMSE {:.4} over {} cells with {}",
            family.label(),
            found.best_score,
            found.table.len(),
            chosen.join(", ")
        );
        results.push(json!({
            "family": family,
            "best_score": found.best_score,
            "best_params": found.best_params,
            "cells": found.table.len(),
        }));
    }
    let summary = json!({ "strategy": strategy, "cv_k": opts.cv_k, "results": results });
    stage.finish(summary.clone())?;
    ctx.emit(text, summary)
}

pub fn evaluate(ctx: &Context, args: &EvaluateArgs) -> Result<String, CliError> {
    let mut stage = ctx.stage("evaluate");
    let ds = load_dataset(ctx, &mut stage)?;
    let opts = CompareOptions {
        families: families(&args.family, ctx),
        spaces: ctx.cfg.search.spaces.clone(),
        base: ctx.cfg.models.clone(),
        strategy: ctx.cfg.strategy(),
        search: search_options(ctx),
        vehicle_scale: args.vehicle_scale.or(ctx.cfg.vehicle_scale),
    };
    if let Some(s) = opts.vehicle_scale {
        if !(s > 0.0 && s.is_finite()) {
            return Err(CliError::Validation(format!(
                "vehicle scale must be positive, got {s}"
            )));
        }
    }
    let cmp = compare_models(&ds, &opts);
    for f in &cmp.report.failures {
        tracing::error!("{} failed: {}", f.family.label(), f.error);
    }
    if cmp.report.entries.is_empty() {
        let why: Vec<String> = cmp
            .report
            .failures
            .iter()
            .map(|f| format!("{}: {}", f.family, f.error))
            .collect();
        return Err(CliError::Runtime(format!(
            "every model family failed: {}",
            why.join("; ")
        )));
    }
    let text = cmp.report.render_text();
    let report_json = cmp.report.render_json()?;
    stage.write("report.txt", text.as_bytes())?;
    stage.write("report.json", report_json.as_bytes())?;
    for m in &cmp.models {
        stage.write(
            &format!("evaluated-{}.json", m.family),
            m.to_json()?.as_bytes(),
        )?;
    }
    stage.finish(json!({
        "dataset_fingerprint": cmp.report.dataset_fingerprint,
        "families": opts.families,
        "failures": cmp.report.failures.len(),
    }))?;
    let mut out = text;
    for f in &cmp.report.failures {
        let _ = writeln!(out, "failed: {} ({})", f.family.label(), f.error);
    }
    let summary: Value =
        serde_json::from_str(&report_json).map_err(|e| CliError::Runtime(e.to_string()))?;
    ctx.emit(out, summary)
}

pub fn serve(ctx: &Context, args: &ServeArgs) -> Result<String, CliError> {
    let mut config = ctx.cfg.service.clone();
    let pick = |arg: &Option<PathBuf>, configured: &PathBuf, fallback: &str| {
        arg.clone().unwrap_or_else(|| {
            if configured.as_os_str().is_empty() {
                ctx.ws.path(fallback)
            } else {
                configured.clone()
            }
        })
    };
    config.model_path = pick(&args.model, &config.model_path, "model-rfr.json");
    config.sidecar_path = pick(&args.sidecar, &config.sidecar_path, "dataset.json");
    config.campus_path = pick(&args.campus, &config.campus_path, "join-campus.geojson");
    if let Some(h) = &args.host {
        config.host = h.clone();
    }
    if let Some(p) = args.port {
        config.port = p;
    }
    if config.initial_occupancy.is_empty() {
        config.initial_occupancy = ctx.cfg.initial_occupancy.clone();
    }
    let app = Arc::new(parkcast_service::AppState::load(config)?);
    eprintln!(
        "serving {} model {} on {}:{}",
        app.model.family.label(),
        app.model_fingerprint,
        app.config.host,
        app.config.port
    );
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(parkcast_service::serve(app))?;
    Ok(String::new())
}
