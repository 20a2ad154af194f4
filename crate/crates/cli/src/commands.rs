use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use slisemap::data::{
    apply_normalization_rows, generate_rsynth, load_csv, subsample, write_matrix_csv, ColumnScale, Dataset, RsynthSpec,
    TargetSpec,
};
use slisemap::metrics::MetricReport;
use slisemap::persist::SavedSolution;
use slisemap::plot::{coefficient_clusters_svg, scatter_svg, ColorBy};
use slisemap::{add_new, add_new_one_by_one, Hyperparams, Solution, SolverConfig, TaskKind};

use crate::error::Failure;
use crate::manifest::{self, manifest_path, Recorder};
use crate::{
    AddArgs, Cli, DataArgs, ExportArgs, FitArgs, GenerateArgs, MetricsArgs, PlotArgs, ReplayArgs, SolverArgs, SweepArgs, Task,
    What,
};

type Result<T> = std::result::Result<T, Failure>;

/// Embeddings with every point this close to the origin are reported as collapsed.
const COLLAPSE_RADIUS: f64 = 0.1;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let spec = RsynthSpec {
        n: a.n,
        m: a.m,
        k_clusters: a.k,
        s: a.s,
        noise_std: a.noise,
        seed: a.seed,
    };
    let mut rec = Recorder::new("generate", &spec, Some(a.seed));
    let (mut ds, betas) = generate_rsynth(&spec)?;
    create_dir(&a.out_dir)?;
    let labels = ds.labels.take().expect("generator assigns labels");

    let data = a.out_dir.join("data.csv");
    ds.write_csv(&data)?;
    let labels_path = a.out_dir.join("labels.csv");
    let column = Array2::from_shape_fn((labels.len(), 1), |(i, _)| labels[i] as f64);
    write_matrix_csv(&labels_path, &["label".into()], column.view())?;
    let coefficients = a.out_dir.join("coefficients.csv");
    write_matrix_csv(&coefficients, &ds.column_names, betas.view())?;
    for path in [data.clone(), slisemap::data::normalization_sidecar(&data), labels_path, coefficients] {
        rec.output(&path);
    }
    rec.finish(&a.out_dir.join("manifest.json"))?;
    println!("wrote {} items with {} covariates to {}", a.n, a.m, a.out_dir.display());
    Ok(())
}

fn task_kind(a: &DataArgs) -> Result<TaskKind> {
    Ok(match a.task {
        Task::Regression => TaskKind::Regression,
        Task::BinaryLogit => TaskKind::BinaryLogit,
        Task::Classification => {
            let classes = match (&a.one_hot, a.classes) {
                (Some(_), Some(c)) => c,
                (Some(_), None) => return Err(Failure::usage("--one-hot needs --classes")),
                (None, _) => a.target.len(),
            };
            TaskKind::Classification { classes }
        }
    })
}

fn load_data(a: &DataArgs, seed: u64) -> Result<(Dataset, TaskKind)> {
    let task = task_kind(a)?;
    let target = match &a.one_hot {
        Some(column) => TargetSpec::OneHot(column.clone()),
        None => TargetSpec::Columns(a.target.clone()),
    };
    let mut ds = load_csv(&a.data, &target, a.label_column.as_deref(), task)?;
    if let Some(n0) = a.subsample {
        ds = subsample(&ds, n0, seed)?;
    }
    Ok((ds, task))
}

fn solver_config(s: &SolverArgs, seed: u64) -> SolverConfig {
    SolverConfig {
        max_outer_iters: s.max_outer_iters,
        lbfgs_history: s.lbfgs_history,
        lbfgs_max_iters: s.lbfgs_max_iters,
        rel_tol: s.rel_tol,
        lbfgs_rel_tol: s.lbfgs_rel_tol,
        seed,
        escape: !s.no_escape,
    }
}

fn fit_dataset(ds: &Dataset, task: TaskKind, lambda_z: f64, s: &SolverArgs, seed: u64) -> Result<SavedSolution> {
    let y = task.prepare_responses(&ds.y)?;
    let hp = Hyperparams::new(lambda_z, s.d).with_lasso(s.lambda_lasso);
    hp.validate()?;
    let solution = slisemap::fit(ds.x.view(), y.view(), hp, task, &solver_config(s, seed))?;
    let target_names = match task {
        TaskKind::BinaryLogit => ds.target_names[..1].to_vec(),
        _ => ds.target_names.clone(),
    };
    Ok(SavedSolution {
        solution,
        column_names: ds.feature_names(),
        target_names,
        normalization: Some(ds.normalization.clone()),
    })
}

fn max_radius(z: &Array2<f64>) -> f64 {
    z.rows().into_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max)
}

fn warn_if_collapsed(sol: &Solution) {
    let radius = max_radius(&sol.z);
    if radius < COLLAPSE_RADIUS {
        warn!(
            "embedding collapsed: max |Z_i| = {radius:.3e} < {COLLAPSE_RADIUS}; lambda_z = {} is probably too large",
            sol.hyperparams.lambda_z
        );
    }
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let seed = a.solver.seed;
    let mut rec = Recorder::new("fit", a, Some(seed));
    rec.input(&a.data.data);
    let (ds, task) = load_data(&a.data, seed)?;
    let saved = fit_dataset(&ds, task, a.lambda_z, &a.solver, seed)?;
    warn_if_collapsed(&saved.solution);
    saved.save(&a.out)?;
    rec.output(&a.out);
    let m = rec.finish(&manifest_path(&a.out))?;
    let sol = &saved.solution;
    println!(
        "final loss {:.6} after {} outer iterations ({:.1} s)",
        sol.final_loss, sol.outer_iters_used, m.duration_secs
    );
    Ok(())
}

fn has_rows(path: &Path) -> Result<bool> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    Ok(reader.records().next().is_some())
}

fn coefficient_header(saved: &SavedSolution) -> Vec<String> {
    let d = saved.solution.z.ncols();
    let mut header = vec!["index".to_string()];
    header.extend((1..=d).map(|j| format!("z{j}")));
    header.extend(saved.coefficient_names());
    header
}

pub fn add(a: &AddArgs) -> Result<()> {
    let mut rec = Recorder::new("add", a, None);
    rec.input(&a.solution);
    rec.input(&a.data);
    let saved = SavedSolution::load(&a.solution)?;
    let sol = &saved.solution;
    let mut header = coefficient_header(&saved);
    header.push("loss".into());

    if !has_rows(&a.data)? {
        warn!("{} has no data rows; nothing added", a.data.display());
        write_text(&a.out, &format!("{}\n", header.join(",")))?;
        rec.output(&a.out);
        rec.finish(&manifest_path(&a.out))?;
        return Ok(());
    }

    let target = match &a.one_hot {
        Some(column) => TargetSpec::OneHot(column.clone()),
        None => TargetSpec::Columns(saved.target_names.clone()),
    };
    let ds = load_csv(&a.data, &target, None, sol.task)?;
    let covariates = &saved.column_names[..saved.column_names.len() - 1];
    if ds.column_names != covariates {
        return Err(Failure::data(format!(
            "{}: columns {:?} do not match the solution's covariates {:?}",
            a.data.display(),
            ds.column_names,
            covariates
        )));
    }
    let identity = vec![ColumnScale { mean: 0.0, std: 1.0 }; covariates.len()];
    let x = apply_normalization_rows(ds.x_raw.view(), saved.normalization.as_deref().unwrap_or(&identity))?;
    let y = sol.task.prepare_responses(&ds.y)?;
    let config = SolverConfig {
        lbfgs_max_iters: a.lbfgs_max_iters,
        lbfgs_rel_tol: a.lbfgs_rel_tol,
        ..SolverConfig::default()
    };
    let added = if a.one_by_one {
        add_new_one_by_one(sol, x.view(), y.view(), &config)?
    } else {
        add_new(sol, x.view(), y.view(), &config)?
    };

    let t = x.nrows();
    let index = Array2::from_shape_fn((t, 1), |(i, _)| (sol.n() + i) as f64);
    let losses = Array2::from_shape_vec((t, 1), added.losses.clone()).expect("one loss per item");
    let table = concatenate![Axis(1), index, added.z, added.b, losses];
    write_matrix_csv(&a.out, &header, table.view())?;
    rec.output(&a.out);

    if let Some(path) = &a.augmented {
        let mut solution = Solution::from_parts(
            concatenate![Axis(0), sol.x, x],
            concatenate![Axis(0), sol.y, y],
            concatenate![Axis(0), sol.b, added.b],
            concatenate![Axis(0), sol.z, added.z],
            sol.hyperparams,
            sol.task,
        )?;
        solution.seed = sol.seed;
        solution.loss_history = vec![solution.final_loss];
        let enlarged = SavedSolution { solution, ..saved.clone() };
        enlarged.save(path)?;
        rec.output(path);
    }
    rec.finish(&manifest_path(&a.out))?;
    let mean = added.losses.iter().sum::<f64>() / t as f64;
    println!("added {t} items; mean loss {mean:.6}");
    Ok(())
}

/// Reads integer labels from the `label` column, or from the only column.
fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let fail = |reason: String| Failure::data(format!("{}: {reason}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| fail(e.to_string()))?;
    let header = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    let column = match header.iter().position(|h| h.trim() == "label") {
        Some(c) => c,
        None if header.len() == 1 => 0,
        None => return Err(fail("no \"label\" column".into())),
    };
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fail(e.to_string()))?;
        let raw = record.get(column).unwrap_or("").trim();
        let value: f64 = raw.parse().map_err(|_| fail(format!("row {}: label {raw:?} is not a number", r + 1)))?;
        if value.fract() != 0.0 {
            return Err(fail(format!("row {}: label {raw} is not an integer", r + 1)));
        }
        labels.push(value as i64);
    }
    Ok(labels)
}

fn checked_labels(path: &Path, n: usize) -> Result<Vec<i64>> {
    let labels = read_labels(path)?;
    if labels.len() != n {
        return Err(Failure::data(format!(
            "{}: {} labels for a solution with {n} items",
            path.display(),
            labels.len()
        )));
    }
    Ok(labels)
}

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_os_string();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

pub fn metrics(a: &MetricsArgs) -> Result<()> {
    let mut rec = Recorder::new("metrics", a, None);
    rec.input(&a.solution);
    let saved = SavedSolution::load(&a.solution)?;
    let labels = match &a.labels {
        Some(path) => {
            rec.input(path);
            Some(checked_labels(path, saved.solution.n())?)
        }
        None => None,
    };
    let report = MetricReport::compute(&saved.solution, &a.k, labels.as_deref(), a.quantile)?;
    let (json, csv) = (with_extension(&a.out, "json"), with_extension(&a.out, "csv"));
    report.write_json(&json)?;
    report.write_csv(&csv)?;
    rec.output(&json);
    rec.output(&csv);
    rec.finish(&with_extension(&a.out, "manifest.json"))?;
    for (metric, k, value) in report.rows() {
        match k {
            Some(k) => println!("{metric}[k={k}] = {value:.6}"),
            None => println!("{metric} = {value:.6}"),
        }
    }
    Ok(())
}

/// Caps rayon's worker count with `SLISEMAP_THREADS` when set.
fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("SLISEMAP_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t >= 1 => t,
            _ => return Err(Failure::usage(format!("SLISEMAP_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::usage(e.to_string()))
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let mut rec = Recorder::new("sweep", a, Some(a.solver.seed));
    rec.input(&a.data.data);
    if a.k.is_empty() {
        return Err(Failure::usage("--k needs at least one value"));
    }
    let (mut ds, task) = load_data(&a.data, a.solver.seed)?;
    if let Some(path) = &a.labels {
        if a.data.subsample.is_some() {
            return Err(Failure::usage("--labels cannot be combined with --subsample; use --label-column"));
        }
        rec.input(path);
        ds.labels = Some(checked_labels(path, ds.n())?);
    }
    if let Some(dir) = &a.save_solutions {
        create_dir(dir)?;
    }
    let pool = thread_pool()?;
    let results: Vec<Result<(SavedSolution, MetricReport)>> = pool.install(|| {
        a.lambda_z
            .par_iter()
            .enumerate()
            .map(|(i, &lambda_z)| {
                let seed = a.solver.seed.wrapping_add(i as u64);
                let saved = fit_dataset(&ds, task, lambda_z, &a.solver, seed)?;
                warn_if_collapsed(&saved.solution);
                let report = MetricReport::compute(&saved.solution, &a.k, ds.labels.as_deref(), a.quantile)?;
                Ok((saved, report))
            })
            .collect()
    });

    let mut w = BufWriter::new(fs::File::create(&a.out).map_err(|e| Failure::io(&a.out, e))?);
    writeln!(w, "lambda_z,seed,metric,k,value").map_err(|e| Failure::io(&a.out, e))?;
    for (i, result) in results.into_iter().enumerate() {
        let (saved, report) = result?;
        let sol = &saved.solution;
        let mut rows = vec![("final_loss", None, sol.final_loss)];
        rows.extend(report.rows());
        for (metric, k, value) in rows {
            let k = k.map(|k| k.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{metric},{k},{value}", a.lambda_z[i], sol.seed).map_err(|e| Failure::io(&a.out, e))?;
        }
        if let Some(dir) = &a.save_solutions {
            let path = dir.join(format!("solution_{i}.json"));
            saved.save(&path)?;
            rec.output(&path);
        }
    }
    w.flush().map_err(|e| Failure::io(&a.out, e))?;
    drop(w);
    rec.output(&a.out);
    rec.finish(&manifest_path(&a.out))?;
    println!("{} fits written to {}", a.lambda_z.len(), a.out.display());
    Ok(())
}

pub fn plot(a: &PlotArgs) -> Result<()> {
    let mut rec = Recorder::new("plot", a, Some(a.seed));
    rec.input(&a.solution);
    let saved = SavedSolution::load(&a.solution)?;
    let color_by: ColorBy = a.color_by.parse()?;
    let labels = match &a.labels {
        Some(path) => {
            rec.input(path);
            Some(checked_labels(path, saved.solution.n())?)
        }
        None => None,
    };
    write_text(&a.out, &scatter_svg(&saved, &color_by, labels.as_deref())?)?;
    rec.output(&a.out);
    if let Some(path) = &a.clusters_out {
        write_text(path, &coefficient_clusters_svg(&saved, a.clusters, a.seed)?)?;
        rec.output(path);
    }
    rec.finish(&manifest_path(&a.out))?;
    Ok(())
}

pub fn export(a: &ExportArgs) -> Result<()> {
    let mut rec = Recorder::new("export", a, None);
    rec.input(&a.solution);
    let saved = SavedSolution::load(&a.solution)?;
    let sol = &saved.solution;
    let d = sol.z.ncols();
    let full = coefficient_header(&saved);
    let index = Array2::from_shape_fn((sol.n(), 1), |(i, _)| i as f64);
    let (header, table): (Vec<String>, Array2<f64>) = match a.what {
        What::Z => ([&full[..1], &full[1..=d]].concat(), concatenate![Axis(1), index, sol.z]),
        What::B => ([&full[..1], &full[d + 1..]].concat(), concatenate![Axis(1), index, sol.b]),
        What::Both => (full, concatenate![Axis(1), index, sol.z, sol.b]),
    };
    write_matrix_csv(&a.out, &header, table.view())?;
    rec.output(&a.out);
    rec.finish(&manifest_path(&a.out))?;
    Ok(())
}

pub fn replay(a: &ReplayArgs) -> Result<()> {
    let recorded = manifest::load(&a.manifest)?;
    let cli = <Cli as clap::Parser>::try_parse_from(&recorded.argv)
        .map_err(|e| Failure::data(format!("{}: recorded command line does not parse: {e}", a.manifest.display())))?;
    if matches!(cli.command, crate::Command::Replay(_)) {
        return Err(Failure::usage("a replay manifest cannot be replayed"));
    }
    manifest::set_argv(recorded.argv.clone());
    crate::run(cli)?;
    let mut mismatched = Vec::new();
    for artifact in &recorded.outputs {
        if manifest::sha256_file(&artifact.path)? != artifact.sha256 {
            mismatched.push(artifact.path.display().to_string());
        }
    }
    if !mismatched.is_empty() {
        return Err(Failure::data(format!("outputs differ from the manifest: {}", mismatched.join(", "))));
    }
    println!("replayed {}: {} outputs identical", recorded.command, recorded.outputs.len());
    Ok(())
}
