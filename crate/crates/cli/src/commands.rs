//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gpcn_core::ensemble::{build_from_table, Hierarchy, MODEL_NAMES};
use gpcn_core::gdd::gdd_report;
use gpcn_core::gdd::{coarse_search, distance_rows_csv, limit_curve, search_rows_csv};
use gpcn_core::graph::{make_grid, make_tube, Graph};
use gpcn_core::sim::{generate_dataset, Dataset};
use gpcn_core::train::{self, flops, model_flops, summary_csv, TrainData};
use gpcn_core::{checkpoint, Error, Matrix};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{ExperimentConfig, Format, LoadedConfig};
use crate::{CliError, Command, Common};

/// Config with command-line overrides applied.
pub struct Resolved {
    pub loaded: LoadedConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub format: Format,
    pub threads: Option<usize>,
}

impl Resolved {
    pub fn new(common: &Common) -> Result<Self, CliError> {
        let loaded = LoadedConfig::load(common.config.as_deref())?;
        let c = &loaded.config;
        let threads = common.threads.or(c.threads);
        if threads == Some(0) {
            return Err(CliError::Usage("threads must be positive".into()));
        }
        Ok(Self {
            seed: common.seed.or(c.seed).unwrap_or(0),
            out: common
                .out
                .clone()
                .or_else(|| c.out.clone())
                .unwrap_or_else(|| PathBuf::from("out")),
            format: common.format.or(c.format).unwrap_or_default(),
            threads,
            loaded,
        })
    }

    fn config(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    /// Everything needed to rerun the command.
    fn echo(&self, command: &str) -> serde_json::Value {
        json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "format": self.format,
            "config_text": self.loaded.text,
            "config": self.loaded.config,
        })
    }

    fn prepare_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", self.out.display())))
    }

    fn write_manifest(&self, command: &str, results: serde_json::Value) -> Result<(), CliError> {
        let mut m = self.echo(command);
        m["results"] = results;
        fs::write(
            self.out.join("manifest.json"),
            serde_json::to_string_pretty(&m)? + "\n",
        )?;
        Ok(())
    }

    fn install<T: Send>(
        &self,
        f: impl FnOnce() -> Result<T, CliError> + Send,
    ) -> Result<T, CliError> {
        match self.threads {
            None => f(),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?
                .install(f),
        }
    }
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(c) => {
            let r = Resolved::new(&c)?;
            r.install(|| cmd_generate(&r).map(|_| ()))
        }
        Command::Gdd {
            coarse,
            fine,
            alpha,
            common,
        } => {
            let r = Resolved::new(&common)?;
            r.install(|| cmd_gdd(&r, &coarse, &fine, alpha))
        }
        Command::CoarseSearch(c) => {
            let r = Resolved::new(&c)?;
            r.install(|| cmd_coarse_search(&r))
        }
        Command::LimitCurve(c) => {
            let r = Resolved::new(&c)?;
            r.install(|| cmd_limit_curve(&r))
        }
        Command::Train(c) => {
            let r = Resolved::new(&c)?;
            r.install(|| cmd_train(&r))
        }
        Command::Flops {
            model,
            rings,
            in_features,
            common,
        } => {
            let r = Resolved::new(&common)?;
            let table = cmd_flops(&model, rings, in_features)?;
            print!("{table}");
            if common.out.is_some() {
                r.prepare_out()?;
                fs::write(r.out.join("flops.csv"), &table)?;
            }
            Ok(())
        }
    }
}

fn simulate(r: &Resolved) -> Result<Dataset, CliError> {
    let g = &r.config().generate;
    let sim = g.sim_config()?;
    let grid = g.param_grid()?;
    Ok(generate_dataset(&grid, &sim, r.seed)?)
}

pub fn cmd_generate(r: &Resolved) -> Result<Dataset, CliError> {
    let ds = simulate(r)?;
    r.prepare_out()?;
    let extra = r.echo("generate");
    match r.format {
        Format::Csv => ds.write_csv(&r.out, extra)?,
        Format::Bin => ds.write_bin(&r.out, extra)?,
    }
    println!(
        "{} runs, {} frames ({} failed) -> {}",
        ds.runs.len(),
        ds.frames.len(),
        ds.failed_runs(),
        r.out.display()
    );
    let max_failed = r.config().generate.max_failed;
    if ds.failed_runs() > max_failed {
        let first = ds
            .runs
            .iter()
            .find_map(|x| x.error.as_deref())
            .unwrap_or_default();
        return Err(CliError::Numerical(format!(
            "{} runs failed (allowed {max_failed}); first: {first}",
            ds.failed_runs()
        )));
    }
    Ok(ds)
}

/// An edge-list path, `tube:n,k,p[,w]` or `grid:r,c`.
pub fn parse_graph(s: &str) -> Result<Graph, CliError> {
    let nums = |body: &str| -> Result<Vec<f64>, CliError> {
        body.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::Usage(format!("graph `{s}`: {e}")))
            })
            .collect()
    };
    let int = |v: f64| -> Result<usize, CliError> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(CliError::Usage(format!("graph `{s}`: {v} is not a count")))
        }
    };
    if let Some(body) = s.strip_prefix("tube:") {
        let v = nums(body)?;
        return match v.as_slice() {
            [n, k, p] => Ok(make_tube(int(*n)?, int(*k)?, int(*p)?, 1.0)?),
            [n, k, p, w] => Ok(make_tube(int(*n)?, int(*k)?, int(*p)?, *w)?),
            _ => Err(CliError::Usage(format!(
                "graph `{s}`: expected tube:n,k,p[,w]"
            ))),
        };
    }
    if let Some(body) = s.strip_prefix("grid:") {
        let v = nums(body)?;
        return match v.as_slice() {
            [a, b] => Ok(make_grid(int(*a)?, int(*b)?)?),
            _ => Err(CliError::Usage(format!("graph `{s}`: expected grid:r,c"))),
        };
    }
    let path = Path::new(s);
    if !path.exists() {
        return Err(CliError::Usage(format!("graph file {s} not found")));
    }
    Ok(Graph::read(path)?)
}

fn matrix_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn cmd_gdd(r: &Resolved, coarse: &str, fine: &str, alpha: f64) -> Result<(), CliError> {
    let gc = parse_graph(coarse)?;
    let gf = parse_graph(fine)?;
    if gc.n() > gf.n() {
        return Err(CliError::Usage(format!(
            "first graph must not be larger than the second ({} > {} nodes)",
            gc.n(),
            gf.n()
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CliError::Usage(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let report = gdd_report(&gc, &gf, alpha)?;
    let d = report.distance();
    println!("{d:e}");
    r.prepare_out()?;
    fs::write(
        r.out.join("prolongation.csv"),
        matrix_csv(&report.prolongation.p),
    )?;
    r.write_manifest(
        "gdd",
        json!({
            "coarse": coarse,
            "fine": fine,
            "coarse_nodes": gc.n(),
            "fine_nodes": gf.n(),
            "alpha": alpha,
            "distance": d,
            "warm_objective": report.warm_objective,
            "rlap_cost": report.assignment.total_cost,
            "orthonormality_defect": report.prolongation.p.orthonormality_defect(),
        }),
    )
}

pub fn cmd_coarse_search(r: &Resolved) -> Result<(), CliError> {
    let s = &r.config().search;
    let fine = make_tube(s.fine.rings, s.fine.k, s.fine.offset, 1.0)?;
    let mut rows = coarse_search(&fine, s.coarse_rings, &s.k, &s.p, &s.seam_weights)?;
    if rows.is_empty() {
        return Err(CliError::Usage("search has no candidates".into()));
    }
    r.prepare_out()?;
    fs::write(r.out.join("coarse_search.csv"), search_rows_csv(&rows))?;
    rows.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    let best = &rows[0];
    println!(
        "best: k={} p={} w={} distance={:e}",
        best.k, best.p, best.seam_weight, best.distance
    );
    r.write_manifest("coarse-search", json!({ "best": best }))
}

pub fn cmd_limit_curve(r: &Resolved) -> Result<(), CliError> {
    let s = &r.config().limit;
    if s.n.is_empty() || s.families.is_empty() {
        return Err(CliError::Usage(
            "limit.n and limit.families must be non-empty".into(),
        ));
    }
    let rows = limit_curve(&s.n, &s.families)?;
    r.prepare_out()?;
    let csv = distance_rows_csv(&rows);
    fs::write(r.out.join("limit_curve.csv"), &csv)?;
    print!("{csv}");
    r.write_manifest("limit-curve", json!({ "rows": rows.len() }))
}

fn hierarchy_for(ds: &Dataset) -> Result<Hierarchy, CliError> {
    let shape = ds.config.shape;
    if shape.k != 13 || shape.offset != 3 {
        return Err(CliError::Usage(format!(
            "model hierarchy expects a 13-protofilament lattice with offset 3, dataset has {shape:?}"
        )));
    }
    Ok(Hierarchy::tube(shape.n_rings)?)
}

fn check_models(models: &[String]) -> Result<(), CliError> {
    if models.is_empty() {
        return Err(CliError::Usage("train.models is empty".into()));
    }
    for m in models {
        if !MODEL_NAMES.contains(&m.as_str()) {
            return Err(Error::UnknownModel {
                name: m.clone(),
                valid: MODEL_NAMES.join(", "),
            }
            .into());
        }
    }
    Ok(())
}

pub fn cmd_train(r: &Resolved) -> Result<(), CliError> {
    let t = &r.config().train;
    check_models(&t.models)?;
    if t.seeds.is_empty() {
        return Err(CliError::Usage("train.seeds is empty".into()));
    }
    let ds = match &t.dataset {
        Some(dir) => Dataset::read(dir)
            .map_err(|e| CliError::Usage(format!("dataset {}: {e}", dir.display())))?,
        None => simulate(r)?,
    };
    let data = TrainData::from_dataset(&ds, t.split_seed, t.normalization)?;
    let h = hierarchy_for(&ds)?;
    let specs = t
        .models
        .iter()
        .map(|m| build_from_table(m, &h, ds.f()))
        .collect::<Result<Vec<_>, _>>()?;
    for s in &specs {
        t.schedule.validate(s.n_levels())?;
    }
    let cells: Vec<(usize, u64)> = (0..specs.len())
        .flat_map(|m| t.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let outcomes = cells
        .par_iter()
        .map(|&(m, seed)| train::train(&specs[m], &data, &t.schedule, seed))
        .collect::<Result<Vec<_>, _>>()?;
    r.prepare_out()?;
    let mut results = Vec::new();
    for o in &outcomes {
        let rec = &o.record;
        let stem = format!("{}_seed{}", rec.model, rec.seed);
        fs::write(r.out.join(format!("{stem}.csv")), rec.to_csv())?;
        checkpoint::save(
            &r.out,
            &stem,
            &rec.model,
            &o.best_params,
            json!({ "best_val_nmse": rec.best_val_nmse() }),
        )?;
        results.push(json!({
            "model": rec.model,
            "seed": rec.seed,
            "best_val_nmse": rec.best_val_nmse(),
            "epochs": rec.points.last().map_or(0, |p| p.epoch),
            "flops": rec.ledger,
            "stage_starts": rec.stage_starts,
            "epoch_levels": rec.epoch_levels,
            "aborted": rec.aborted,
        }));
    }
    let records: Vec<_> = outcomes.iter().map(|o| o.record.clone()).collect();
    let summary = summary_csv(&records);
    fs::write(r.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    r.write_manifest(
        "train",
        json!({
            "frames": ds.frames.len(),
            "train_frames": data.train.len(),
            "val_frames": data.val.len(),
            "runs": results,
        }),
    )?;
    if let Some(rec) = records.iter().find(|r| r.aborted.is_some()) {
        return Err(CliError::Numerical(format!(
            "{} seed {}: {}",
            rec.model,
            rec.seed,
            rec.aborted.as_deref().unwrap_or_default()
        )));
    }
    Ok(())
}

/// `level,layer,category,flops` per layer for one sample, then the total.
pub fn cmd_flops(model: &str, rings: usize, in_features: usize) -> Result<String, CliError> {
    check_models(&[model.to_string()])?;
    let h = Hierarchy::tube(rings)?;
    let spec = build_from_table(model, &h, in_features)?;
    let costs = model_flops(&spec, &vec![true; spec.n_levels()]);
    let mut s = String::from("level,layer,category,flops\n");
    for c in &costs {
        let cat = serde_json::to_value(c.category)?;
        writeln!(
            s,
            "{},{},{},{}",
            c.level,
            c.label,
            cat.as_str().unwrap_or_default(),
            c.flops
        )
        .unwrap();
    }
    writeln!(s, "total,,,{}", flops::total(&costs)).unwrap();
    Ok(s)
}
