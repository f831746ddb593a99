use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use meshrag_core::editing::{edit_incremental, EditRequest};
use meshrag_core::geometry::{PointCloud, TriMesh};
use meshrag_core::io::{self, PlyEncoding};
use meshrag_core::metrics::{aggregate, csv_row, evaluate_all, AggregateMetrics, MetricsReport, CSV_HEADER};
use meshrag_core::orchestration::wire::{serve_ndjson, HttpServer, WireService};
use meshrag_core::orchestration::{
    generate_parallel, run_pipeline, Jitter, MatchMode, MockOracleBackend, PartStatus, PipelineReport,
};
use meshrag_core::segmentation::{segment_auto, GeometricSegmenter, SegmentLabels};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    BackendArgs, CommonArgs, EditArgs, EvalArgs, GenerateArgs, IcpArgs, MatchArg, MockBackendArgs, RunArgs,
    SegmentArgs, SegmentationArgs,
};
use crate::backend::{Remote, Segmenter};
use crate::config::{Config, SegmenterChoice};
use crate::error::{CliError, CliResult};

struct Layers<'a> {
    common: &'a CommonArgs,
    segmentation: Option<&'a SegmentationArgs>,
    icp: Option<&'a IcpArgs>,
    backend: Option<&'a BackendArgs>,
}

fn resolve(layers: Layers) -> CliResult<Config> {
    let mut cfg = Config::load(layers.common.config.as_deref())?;
    if let Some(s) = layers.segmentation {
        cfg.apply_segmentation(s);
    }
    if let Some(i) = layers.icp {
        cfg.apply_icp(i);
    }
    if let Some(b) = layers.backend {
        cfg.apply_backend(b);
    }
    cfg.apply_seed(layers.common.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn read_cloud_with_normals(path: &Path) -> CliResult<PointCloud> {
    let cloud = io::read_cloud(path).map_err(CliError::file(path))?;
    cloud.require_normals().map_err(CliError::file(path))?;
    Ok(cloud)
}

fn read_mesh(path: &Path) -> CliResult<TriMesh> {
    io::read_mesh(path).map_err(CliError::file(path))
}

fn write_obj(path: &Path, mesh: &TriMesh) -> CliResult<()> {
    io::write_obj(path, mesh).map_err(CliError::file(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    io::write_json(path, value).map_err(CliError::file(path))
}

fn read_labels(path: &Path) -> CliResult<SegmentLabels> {
    let is_ply = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    let labels = if is_ply {
        io::read_ply(path).and_then(|ply| {
            let ids = ply
                .part_ids()
                .ok_or_else(|| meshrag_core::Error::InvalidGeometry("PLY has no part_id property".into()))?;
            Ok(SegmentLabels::compact(ids))
        })
    } else {
        io::read_labels(path)
    };
    labels.map_err(CliError::file(path))
}

/// The pipeline report with the four ablation-table timings keyed by row label.
fn report_json(report: &PipelineReport) -> CliResult<Value> {
    let mut value = serde_json::to_value(report).map_err(meshrag_core::Error::from)?;
    let table: serde_json::Map<String, Value> = report
        .stages
        .table_rows()
        .iter()
        .map(|(label, t)| (label.to_string(), json!(t)))
        .collect();
    value["stage_table"] = Value::Object(table);
    Ok(value)
}

fn summarize(report: &PipelineReport) {
    for part in &report.parts {
        if let PartStatus::Failed { reason } = &part.status {
            eprintln!("part {} failed: {reason}", part.part_id);
        }
    }
    println!(
        "{}/{} parts generated, {} faces, {:.3}s",
        report.parts_succeeded, report.parts_submitted, report.total_faces, report.total_time
    );
}

pub fn segment(a: &SegmentArgs) -> CliResult<()> {
    let cfg = resolve(Layers {
        common: &a.common,
        segmentation: Some(&a.segmentation),
        icp: None,
        backend: Some(&a.backend),
    })?;
    let cloud = read_cloud_with_normals(&a.input)?;
    let remote = match cfg.segmenter {
        SegmenterChoice::Backend => Some(Remote::connect(&cfg)?),
        SegmenterChoice::Builtin => None,
    };
    let segmenter = Segmenter::select(&cfg, remote.as_ref())?;
    let seg = segment_auto(&cloud, segmenter.get(), &cfg.segmentation)?;
    write_json(&a.output, &seg.labels)?;
    let colored = a.colored.clone().unwrap_or_else(|| colored_path(&a.output));
    io::write_labeled_ply(&colored, &cloud, &seg.labels, PlyEncoding::BinaryLittleEndian)
        .map_err(CliError::file(&colored))?;
    println!("{} parts", seg.labels.n_parts());
    Ok(())
}

fn colored_path(labels: &Path) -> PathBuf {
    let ply = labels.with_extension("ply");
    if ply == labels {
        labels.with_extension("colored.ply")
    } else {
        ply
    }
}

pub fn generate(a: &GenerateArgs) -> CliResult<()> {
    let cfg = resolve(Layers {
        common: &a.common,
        segmentation: Some(&a.segmentation),
        icp: Some(&a.icp),
        backend: Some(&a.backend),
    })?;
    let cloud = read_cloud_with_normals(&a.input)?;
    let labels = a.labels.as_deref().map(read_labels).transpose()?;
    let remote = Remote::connect(&cfg)?;
    let (mesh, report) = match labels {
        Some(labels) => generate_parallel(&cloud, &labels, remote.generator(), &cfg.pipeline())?,
        None => {
            let segmenter = Segmenter::select(&cfg, Some(&remote))?;
            run_pipeline(&cloud, segmenter.get(), &cfg.segmentation, remote.generator(), &cfg.pipeline())?
        }
    };
    write_obj(&a.output, &mesh)?;
    if let Some(path) = &a.report {
        write_json(path, &report_json(&report)?)?;
    }
    summarize(&report);
    Ok(())
}

pub fn edit(a: &EditArgs) -> CliResult<()> {
    let mut cfg = resolve(Layers {
        common: &a.common,
        segmentation: Some(&a.segmentation),
        icp: Some(&a.icp),
        backend: Some(&a.backend),
    })?;
    if a.residual_threshold.is_some() {
        cfg.residual_threshold = a.residual_threshold;
        cfg.validate()?;
    }
    let request = EditRequest {
        initial_mesh: read_mesh(&a.initial)?,
        edited_cloud: read_cloud_with_normals(&a.edited)?,
        residual_threshold: cfg.residual_threshold,
        icp: cfg.icp,
    };
    let remote = Remote::connect(&cfg)?;
    let segmenter = Segmenter::select(&cfg, Some(&remote))?;
    let (mesh, report) = edit_incremental(
        &request,
        segmenter.get(),
        &cfg.segmentation,
        remote.generator(),
        &cfg.pipeline(),
    )?;
    write_obj(&a.output, &mesh)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    if report.no_changes {
        println!("no changes");
    } else {
        if let Some(pipeline) = &report.pipeline {
            summarize(pipeline);
        }
        println!(
            "{} residual points, {} new parts",
            report.residual_points, report.generated_parts
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    object: String,
    t: Option<f64>,
    #[serde(flatten)]
    metrics: MetricsReport,
}

#[derive(Serialize)]
struct EvalFailure {
    object: String,
    error: String,
}

#[derive(Serialize)]
struct EvalOutput {
    rows: Vec<EvalRow>,
    aggregate: Option<AggregateMetrics>,
    failures: Vec<EvalFailure>,
}

struct Pair {
    name: String,
    pred: PathBuf,
    gt: Option<PathBuf>,
}

const MESH_EXTENSIONS: [&str; 2] = ["obj", "ply"];

fn is_mesh(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| MESH_EXTENSIONS.iter().any(|m| e.eq_ignore_ascii_case(m)))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn eval_pairs(a: &EvalArgs) -> CliResult<Vec<Pair>> {
    if let (Some(pred), Some(gt)) = (&a.pred, &a.gt) {
        return Ok(vec![Pair {
            name: stem(pred),
            pred: pred.clone(),
            gt: Some(gt.clone()),
        }]);
    }
    let (Some(pred_dir), Some(gt_dir)) = (&a.pred_dir, &a.gt_dir) else {
        return Err(CliError::usage("give PRED GT or --pred-dir with --gt-dir"));
    };
    let mut preds: Vec<PathBuf> = fs::read_dir(pred_dir)
        .map_err(|e| CliError::file(pred_dir)(e.into()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_mesh(p))
        .collect();
    preds.sort();
    Ok(preds
        .into_iter()
        .map(|pred| {
            let name = stem(&pred);
            let gt = MESH_EXTENSIONS
                .iter()
                .map(|ext| gt_dir.join(format!("{name}.{ext}")))
                .find(|p| p.is_file());
            Pair { name, pred, gt }
        })
        .collect())
}

fn aggregate_csv_row(agg: &AggregateMetrics) -> String {
    let mut row = format!(
        "mean,{},{},{},{},{},{},{},",
        agg.cd_l1, agg.cd_l2, agg.hd, agg.nc, agg.f1, agg.ecd, agg.ef1
    );
    if let Some(t) = agg.t {
        row.push_str(&t.to_string());
    }
    row
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let mut cfg = resolve(Layers {
        common: &a.common,
        segmentation: None,
        icp: None,
        backend: None,
    })?;
    if let Some(n) = a.samples {
        cfg.metrics.sample_count = n;
    }
    if let Some(tau) = a.tau_f1 {
        cfg.metrics.tau_f1 = tau;
    }
    cfg.validate()?;
    let times: HashMap<String, f64> = match &a.times {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::file(path)(e.into()))?;
            serde_json::from_str(&text).map_err(|e| CliError::file(path)(e.into()))?
        }
        None => HashMap::new(),
    };

    let pairs = eval_pairs(a)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for pair in &pairs {
        let scored = pair
            .gt
            .as_deref()
            .ok_or_else(|| CliError::usage("no ground-truth mesh with a matching name"))
            .and_then(|gt| {
                let (pred, gt) = (read_mesh(&pair.pred)?, read_mesh(gt)?);
                Ok(evaluate_all(&pred, &gt, &cfg.metrics)?)
            });
        match scored {
            Ok(metrics) => rows.push(EvalRow {
                object: pair.name.clone(),
                t: times.get(&pair.name).copied(),
                metrics,
            }),
            Err(e) => {
                eprintln!("{}: {e}", pair.name);
                failures.push(EvalFailure {
                    object: pair.name.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    let summary: Vec<(MetricsReport, Option<f64>)> = rows.iter().map(|r| (r.metrics.clone(), r.t)).collect();
    let agg = aggregate(&summary);
    let mut csv = vec![CSV_HEADER.to_string()];
    csv.extend(rows.iter().map(|r| csv_row(&r.object, &r.metrics, r.t)));
    csv.extend(agg.as_ref().map(aggregate_csv_row));
    let csv = csv.join("\n") + "\n";
    let (failed, total) = (failures.len(), pairs.len());
    if a.csv.is_none() && a.json.is_none() {
        std::io::stdout().write_all(csv.as_bytes()).map_err(meshrag_core::Error::from)?;
    }
    if let Some(path) = &a.csv {
        fs::write(path, &csv).map_err(|e| CliError::file(path)(e.into()))?;
    }
    if let Some(path) = &a.json {
        let output = EvalOutput {
            rows,
            aggregate: agg,
            failures,
        };
        write_json(path, &output)?;
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::PartialEval { failed, total })
    }
}

pub fn run(a: &RunArgs) -> CliResult<()> {
    let cfg = resolve(Layers {
        common: &a.common,
        segmentation: Some(&a.segmentation),
        icp: Some(&a.icp),
        backend: Some(&a.backend),
    })?;
    let cloud = read_cloud_with_normals(&a.input)?;
    let gt = a.gt.as_deref().map(read_mesh).transpose()?;
    let remote = Remote::connect(&cfg)?;
    let segmenter = Segmenter::select(&cfg, Some(&remote))?;
    let (mesh, report) = run_pipeline(&cloud, segmenter.get(), &cfg.segmentation, remote.generator(), &cfg.pipeline())?;
    write_obj(&a.output, &mesh)?;
    let metrics = gt.map(|gt| evaluate_all(&mesh, &gt, &cfg.metrics)).transpose()?;
    if let Some(path) = &a.report {
        let mut value = report_json(&report)?;
        if let Some(m) = &metrics {
            value["metrics"] = serde_json::to_value(m).map_err(meshrag_core::Error::from)?;
        }
        write_json(path, &value)?;
    }
    summarize(&report);
    if let Some(m) = metrics {
        println!("cd_l1 {:.6} cd_l2 {:.6} hd {:.6} nc {:.4} f1 {:.4}", m.cd_l1, m.cd_l2, m.hd, m.nc, m.f1);
    }
    Ok(())
}

pub fn mock_backend(a: &MockBackendArgs) -> CliResult<()> {
    let parts = a.parts.iter().map(|p| read_mesh(p)).collect::<CliResult<Vec<_>>>()?;
    let mode = match a.match_mode {
        MatchArg::ById => MatchMode::ById,
        MatchArg::ByShape => MatchMode::ByShape,
    };
    let oracle = MockOracleBackend::from_parts(&parts)?
        .with_mode(mode)
        .with_jitter(a.jitter.then(Jitter::default))
        .with_failures(a.failures.iter().copied())
        .with_latency(Duration::from_millis(a.latency_ms));
    let service = WireService::new(Arc::new(oracle)).with_segmenter(Arc::new(GeometricSegmenter::default()));
    match &a.listen {
        Some(addr) => {
            let server = HttpServer::bind(addr, service)?;
            println!("{}", server.url());
            std::io::stdout().flush().map_err(meshrag_core::Error::from)?;
            server.join();
        }
        None => serve_ndjson(std::io::stdin().lock(), std::io::stdout(), &service)?,
    }
    Ok(())
}
