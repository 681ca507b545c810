//! Subcommand bodies. Each reads its inputs, runs one pipeline stage and
//! writes its artifacts under the output directory.

use std::path::{Path, PathBuf};

use fusestrata_core::apcluster::grid_search;
use fusestrata_core::factors::{fit_factor_model, threshold_loadings};
use fusestrata_core::reconmetrics::evaluate;
use fusestrata_core::stats_util::median;
use fusestrata_core::stratstats::{cluster_profiles, stat_report, FactorStat};
use fusestrata_core::volio::{load_phenotypes, read_dataset, synth_dataset, write_dataset, write_labels, write_phenotypes, Dataset};
use fusestrata_nn::blocks::midflow_counts;
use fusestrata_nn::trainer::{cross_validate, extract_embeddings, reconstruct, reconstructors, train, MetricTriple};
use fusestrata_nn::{checkpoint, FuseModel, ModelConfig, NnError};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, Context};
use crate::report::{
    boxplot_svg, heat_table_svg, num, read_labels, read_subject_table, write_csv, write_csv_body, write_json,
    write_svg, Provenance, SubjectTable,
};

/// Shared state of one invocation.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Ctx {
    fn prov(&self, command: &str) -> Provenance {
        Provenance::new(command, self.cfg.seed, self.cfg.map.effective())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// `given`, or `name` inside the output directory.
    fn input(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.path(name))
    }
}

fn nn_err(e: NnError) -> CliError {
    match e {
        NnError::Config(_)
        | NnError::EvenKernel(_)
        | NnError::DropoutRate(_)
        | NnError::UnknownStrategy(_)
        | NnError::Channels { .. }
        | NnError::Shape(_) => CliError::validation(e.to_string()),
        _ => CliError::runtime(e.to_string()),
    }
}

fn load_data(path: &Path, prov: &mut Provenance) -> Result<Dataset, CliError> {
    let data = read_dataset(path).map_err(|e| CliError::validation(format!("dataset {}: {e}", path.display())))?;
    prov.add_input(path)?;
    Ok(data)
}

fn load_model(path: &Path, prov: &mut Provenance) -> Result<FuseModel<f32>, CliError> {
    let model = checkpoint::load(path).map_err(|e| CliError::validation(format!("model {}: {e}", path.display())))?;
    prov.add_input(path)?;
    Ok(model)
}

fn check_compat(cfg: &ModelConfig, data: &Dataset) -> Result<(), CliError> {
    if cfg.input_dims != data.dims || cfg.n_modalities != data.modalities.len() {
        return Err(CliError::validation(format!(
            "model expects {} modalities of {:?}, dataset has {} of {:?}",
            cfg.n_modalities,
            cfg.input_dims,
            data.modalities.len(),
            data.dims
        )));
    }
    Ok(())
}

fn triple_row(t: &MetricTriple) -> [String; 3] {
    [num(t.mse), num(t.normdiff), num(t.cnr_normdiff)]
}

pub fn synth(ctx: &Ctx) -> Result<(), CliError> {
    let sc = ctx.cfg.synth()?;
    let s = synth_dataset(&sc).map_err(|e| CliError::validation(e.to_string()))?;
    let prov = ctx.prov("synth");
    let ddir = ctx.path("dataset");
    if ddir.join("manifest.json").exists() {
        std::fs::remove_dir_all(&ddir).ctx(&format!("clearing {}", ddir.display()))?;
    }
    write_dataset(&ddir, &s.data).ctx("writing dataset")?;
    let mut buf = Vec::new();
    write_phenotypes(&s.phenotypes, &mut buf).ctx("encoding phenotypes")?;
    write_csv_body(&ctx.path("phenotypes.csv"), &prov, &buf)?;
    buf.clear();
    write_labels(&s.data.subject_ids(), &s.labels, &mut buf).ctx("encoding labels")?;
    write_csv_body(&ctx.path("labels.csv"), &prov, &buf)?;
    let mut sizes = vec![0usize; sc.n_groups];
    for &l in &s.labels {
        sizes[l] += 1;
    }
    let summary = json!({
        "n_subjects": sc.n_subjects,
        "dims": sc.dims,
        "modalities": s.data.modalities,
        "n_groups": sc.n_groups,
        "group_sizes": sizes,
        "effect_size": sc.effect_size,
        "variables": s.phenotypes.variable_names,
        "planted_variables": s.planted_variables,
    });
    write_json(&ctx.path("synth.json"), &prov, None::<&()>, &summary)?;
    println!(
        "synth: {} subjects × {} modalities of {:?}, {} groups → {}",
        sc.n_subjects,
        s.data.modalities.len(),
        sc.dims,
        sc.n_groups,
        ddir.display()
    );
    Ok(())
}

pub fn train_cmd(ctx: &Ctx, data: &Option<PathBuf>) -> Result<(), CliError> {
    let mut prov = ctx.prov("train");
    let data = load_data(&ctx.input(data, "dataset"), &mut prov)?;
    let mcfg = ctx.cfg.model_with(Some(data.dims), Some(data.modalities.len()))?;
    check_compat(&mcfg, &data)?;
    let tcfg = ctx.cfg.training()?;
    let mut model = FuseModel::<f32>::new(mcfg).map_err(nn_err)?;
    let log = train(&mut model, &data, &tcfg).map_err(nn_err)?;
    checkpoint::save(&model, ctx.path("model.ckpt")).ctx("saving model")?;
    let rows: Vec<Vec<String>> = log
        .epoch_loss
        .iter()
        .enumerate()
        .map(|(e, l)| vec![e.to_string(), num(*l)])
        .collect();
    write_csv(&ctx.path("loss.csv"), &prov, &["epoch", "loss"], &rows)?;
    let summary = json!({
        "epochs": tcfg.epochs,
        "steps": log.steps,
        "final_loss": log.epoch_loss.last(),
        "n_params": model.count_params().total.trainable(),
    });
    write_json(&ctx.path("train.json"), &prov, Some(&summary), &log)?;
    println!(
        "train: {} epochs, {} steps, final loss {:.6}, {} flagged loss windows",
        tcfg.epochs,
        log.steps,
        log.epoch_loss.last().copied().unwrap_or(f64::NAN),
        log.flagged_windows.len()
    );
    Ok(())
}

pub fn cv(ctx: &Ctx, data: &Option<PathBuf>) -> Result<(), CliError> {
    let mut prov = ctx.prov("cv");
    let data = load_data(&ctx.input(data, "dataset"), &mut prov)?;
    let (cvcfg, name) = ctx.cfg.cv()?;
    if data.len() < cvcfg.k {
        return Err(CliError::validation(format!("{} subjects cannot form {} folds", data.len(), cvcfg.k)));
    }
    let mcfg = ctx.cfg.model_with(Some(data.dims), Some(data.modalities.len()))?;
    check_compat(&mcfg, &data)?;
    let tcfg = ctx.cfg.training()?;
    let ctor = *reconstructors().get(&name).map_err(|e| CliError::validation(e.to_string()))?;
    let mut recon = ctor(&mcfg, &tcfg);
    let rep = cross_validate(&data, recon.as_mut(), &cvcfg).map_err(nn_err)?;

    let folds: Vec<Vec<String>> = rep
        .folds
        .iter()
        .map(|f| {
            let mut r = vec![f.fold.to_string(), f.n_train.to_string(), f.test_ids.len().to_string()];
            r.extend(triple_row(&f.median));
            r
        })
        .collect();
    write_csv(
        &ctx.path("cv_folds.csv"),
        &prov,
        &["fold", "n_train", "n_test", "median_mse", "median_normdiff", "median_cnr_normdiff"],
        &folds,
    )?;
    let rows: Vec<Vec<String>> = rep
        .folds
        .iter()
        .flat_map(|f| &f.rows)
        .map(|r| {
            vec![
                r.subject_id.clone(),
                r.fold.to_string(),
                r.modality.clone(),
                num(r.mse),
                num(r.normdiff),
                num(r.cnr_real),
                num(r.cnr_rec),
                num(r.cnr_normdiff),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("cv_rows.csv"),
        &prov,
        &["subject_id", "fold", "modality", "mse", "normdiff", "cnr_real", "cnr_rec", "cnr_normdiff"],
        &rows,
    )?;
    let summary = json!({
        "reconstructor": rep.reconstructor,
        "k": rep.k,
        "median": rep.median,
        "mad": rep.mad,
    });
    write_json(&ctx.path("cv_summary.json"), &prov, Some(&summary), &rep.folds)?;
    let metric = |f: fn(&MetricTriple) -> f64| -> Vec<f64> { rep.folds.iter().map(|r| f(&r.median)).collect() };
    for (key, title, vals) in [
        ("mse", "Fold median MSE", metric(|t| t.mse)),
        ("normdiff", "Fold median NormDiff", metric(|t| t.normdiff)),
        ("cnr_normdiff", "Fold median CNR-NormDiff", metric(|t| t.cnr_normdiff)),
    ] {
        let svg = boxplot_svg(title, &[(rep.reconstructor.clone(), vals)]);
        write_svg(&ctx.path(&format!("cv_boxplot_{key}.svg")), &prov, &svg)?;
    }
    println!("cv: {} with k = {}", rep.reconstructor, rep.k);
    println!("  {:<14}{:>14}{:>14}", "metric", "median", "MAD");
    for (m, a, b) in [
        ("MSE", rep.median.mse, rep.mad.mse),
        ("NormDiff", rep.median.normdiff, rep.mad.normdiff),
        ("CNR-NormDiff", rep.median.cnr_normdiff, rep.mad.cnr_normdiff),
    ] {
        println!("  {m:<14}{a:>14.6e}{b:>14.6e}");
    }
    Ok(())
}

pub fn embed(ctx: &Ctx, data: &Option<PathBuf>, model: &Option<PathBuf>) -> Result<(), CliError> {
    let mut prov = ctx.prov("embed");
    let data = load_data(&ctx.input(data, "dataset"), &mut prov)?;
    let mut model = load_model(&ctx.input(model, "model.ckpt"), &mut prov)?;
    check_compat(model.config(), &data)?;
    let emb = extract_embeddings(&mut model, &data).map_err(nn_err)?;
    let dim = emb.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("subject_id".to_string())
        .chain((0..dim).map(|j| format!("e{j}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = data
        .subject_ids()
        .into_iter()
        .zip(&emb)
        .map(|(id, e)| std::iter::once(id).chain(e.iter().map(|v| num(*v))).collect())
        .collect();
    write_csv(&ctx.path("embeddings.csv"), &prov, &header, &rows)?;
    let summary = json!({ "n_subjects": emb.len(), "dim": dim });
    write_json(&ctx.path("embed.json"), &prov, Some(&summary), &data.subject_ids())?;
    println!("embed: {} subjects × {} features", emb.len(), dim);
    Ok(())
}

#[derive(Serialize)]
struct MetricsRow {
    subject_id: String,
    modality: String,
    mse: f64,
    normdiff: f64,
    cnr_real: f64,
    cnr_rec: f64,
    cnr_normdiff: f64,
}

#[derive(Serialize)]
struct ModalitySummary {
    modality: String,
    median_mse: Option<f64>,
    max_mse: Option<f64>,
    median_normdiff: Option<f64>,
    median_cnr_normdiff: Option<f64>,
}

pub fn metrics(ctx: &Ctx, data: &Option<PathBuf>, model: &Option<PathBuf>) -> Result<(), CliError> {
    let mut prov = ctx.prov("metrics");
    let data = load_data(&ctx.input(data, "dataset"), &mut prov)?;
    let mut model = load_model(&ctx.input(model, "model.ckpt"), &mut prov)?;
    check_compat(model.config(), &data)?;
    let cnr = ctx.cfg.cnr()?;
    let mut rows = Vec::new();
    for s in &data.subjects {
        let recs = reconstruct(&mut model, s).map_err(nn_err)?;
        for (real, rec) in s.volumes.iter().zip(&recs) {
            let m = evaluate(real, rec, &cnr).ctx("evaluating reconstruction")?;
            rows.push(MetricsRow {
                subject_id: s.subject_id.clone(),
                modality: real.modality.clone(),
                mse: m.mse,
                normdiff: m.normdiff,
                cnr_real: m.cnr_real,
                cnr_rec: m.cnr_rec,
                cnr_normdiff: m.cnr_normdiff,
            });
        }
    }
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.subject_id.clone(),
                r.modality.clone(),
                num(r.mse),
                num(r.normdiff),
                num(r.cnr_real),
                num(r.cnr_rec),
                num(r.cnr_normdiff),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("metrics.csv"),
        &prov,
        &["subject_id", "modality", "mse", "normdiff", "cnr_real", "cnr_rec", "cnr_normdiff"],
        &csv_rows,
    )?;
    let column = |m: &str, f: fn(&MetricsRow) -> f64| -> Vec<f64> {
        rows.iter().filter(|r| r.modality == m).map(f).filter(|v| v.is_finite()).collect()
    };
    let summary: Vec<ModalitySummary> = data
        .modalities
        .iter()
        .map(|m| ModalitySummary {
            modality: m.clone(),
            median_mse: median(&column(m, |r| r.mse)),
            max_mse: column(m, |r| r.mse).into_iter().reduce(f64::max),
            median_normdiff: median(&column(m, |r| r.normdiff)),
            median_cnr_normdiff: median(&column(m, |r| r.cnr_normdiff)),
        })
        .collect();
    write_json(&ctx.path("metrics.json"), &prov, Some(&summary), &rows)?;
    for (key, title, f) in [
        ("mse", "Reconstruction MSE", (|r: &MetricsRow| r.mse) as fn(&MetricsRow) -> f64),
        ("normdiff", "NormDiff", |r: &MetricsRow| r.normdiff),
        ("cnr_normdiff", "CNR-NormDiff", |r: &MetricsRow| r.cnr_normdiff),
    ] {
        let series: Vec<(String, Vec<f64>)> = data.modalities.iter().map(|m| (m.clone(), column(m, f))).collect();
        write_svg(&ctx.path(&format!("metrics_boxplot_{key}.svg")), &prov, &boxplot_svg(title, &series))?;
    }
    println!("metrics: {} subjects", data.len());
    for s in &summary {
        println!(
            "  {:<8} median MSE {:.6e}  max MSE {:.6e}  median NormDiff {:.4}",
            s.modality,
            s.median_mse.unwrap_or(f64::NAN),
            s.max_mse.unwrap_or(f64::NAN),
            s.median_normdiff.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

pub fn cluster(ctx: &Ctx, embeddings: &Option<PathBuf>) -> Result<(), CliError> {
    let mut prov = ctx.prov("cluster");
    let path = ctx.input(embeddings, "embeddings.csv");
    let table = read_subject_table(&path)?;
    prov.add_input(&path)?;
    let grid = ctx.cfg.grid()?;
    let res = grid_search(&table.rows, &grid).map_err(|e| CliError::validation(e.to_string()))?;
    let best = &res.best;
    let rows: Vec<Vec<String>> = table
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| vec![id.clone(), best.labels[i].to_string(), table.ids[best.exemplars[i]].clone()])
        .collect();
    write_csv(&ctx.path("clusters.csv"), &prov, &["subject_id", "cluster", "exemplar"], &rows)?;
    let cells: Vec<Vec<String>> = res
        .table
        .iter()
        .map(|c| {
            vec![
                num(c.damping),
                num(c.preference),
                c.n_clusters.to_string(),
                c.converged.to_string(),
                c.iterations.to_string(),
                c.silhouette.map(num).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("grid.csv"),
        &prov,
        &["damping", "preference", "n_clusters", "converged", "iterations", "silhouette"],
        &cells,
    )?;
    let mut sizes = vec![0usize; best.n_clusters];
    for &l in &best.labels {
        sizes[l] += 1;
    }
    let mut centers: Vec<usize> = best.exemplars.clone();
    centers.sort_unstable();
    centers.dedup();
    let summary = json!({
        "n_clusters": best.n_clusters,
        "cluster_sizes": sizes,
        "exemplars": centers.iter().map(|&c| table.ids[c].clone()).collect::<Vec<_>>(),
        "damping": best.damping,
        "preference": best.preference,
        "iterations": best.iterations,
        "converged": best.converged,
        "silhouette": best.silhouette,
    });
    write_json(&ctx.path("cluster.json"), &prov, Some(&summary), &res.table)?;
    println!(
        "cluster: K = {} (damping {}, preference {:.4e}, silhouette {}), sizes {:?}",
        best.n_clusters,
        best.damping,
        best.preference,
        best.silhouette.map_or("n/a".into(), |s| format!("{s:.4}")),
        sizes
    );
    Ok(())
}

pub fn factors(ctx: &Ctx, phenotypes: &Option<PathBuf>) -> Result<(), CliError> {
    let mut prov = ctx.prov("factors");
    let path = ctx.input(phenotypes, "phenotypes.csv");
    let table = load_phenotypes(&path).map_err(|e| CliError::validation(e.to_string()))?;
    prov.add_input(&path)?;
    let fm = fit_factor_model(&table, &ctx.cfg.varimax()?).map_err(|e| CliError::validation(e.to_string()))?;
    let names = fm.factor_names();
    let comm = fm.communalities();

    let mut header = vec!["variable"];
    header.extend(names.iter().map(String::as_str));
    header.push("communality");
    let rows: Vec<Vec<String>> = fm
        .variable_names
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut r = vec![v.clone()];
            r.extend((0..fm.k).map(|j| num(fm.rotated[(i, j)])));
            r.push(num(comm[i]));
            r
        })
        .collect();
    write_csv(&ctx.path("loadings.csv"), &prov, &header, &rows)?;

    let mut header = vec!["subject_id"];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = fm
        .subject_ids
        .iter()
        .enumerate()
        .map(|(i, id)| std::iter::once(id.clone()).chain((0..fm.k).map(|j| num(fm.scores[(i, j)]))).collect())
        .collect();
    write_csv(&ctx.path("scores.csv"), &prov, &header, &rows)?;

    let shown = threshold_loadings(&fm.rotated, ctx.cfg.threshold()?);
    let result: Vec<_> = fm
        .variable_names
        .iter()
        .zip(&shown)
        .map(|(v, l)| json!({ "variable": v, "loadings": l }))
        .collect();
    let rotation: Vec<Vec<f64>> = (0..fm.k).map(|i| (0..fm.k).map(|j| fm.rotation[(i, j)]).collect()).collect();
    let summary = json!({
        "k": fm.k,
        "factors": names,
        "eigenvalues": fm.eigenvalues,
        "explained_variance": fm.explained_variance,
        "imputed": fm.imputed,
        "dropped_variables": table.dropped,
        "rotation": rotation,
        "criterion_trace": fm.criterion_trace,
        "loading_threshold": ctx.cfg.threshold()?,
    });
    write_json(&ctx.path("factors.json"), &prov, Some(&summary), &result)?;
    println!(
        "factors: {} retained from {} variables ({:.1}% variance), {} imputed cells",
        fm.k,
        fm.variable_names.len(),
        100.0 * fm.explained_variance,
        fm.imputed
    );
    Ok(())
}

/// Scores aligned to the cluster assignment, as per-factor columns.
fn scores_and_labels(
    ctx: &Ctx,
    prov: &mut Provenance,
    scores: &Option<PathBuf>,
    clusters: &Option<PathBuf>,
) -> Result<(SubjectTable, Vec<usize>), CliError> {
    let sp = ctx.input(scores, "scores.csv");
    let cp = ctx.input(clusters, "clusters.csv");
    let table = read_subject_table(&sp)?;
    let (ids, labels) = read_labels(&cp)?;
    prov.add_input(&sp)?;
    prov.add_input(&cp)?;
    Ok((table.aligned(&ids)?, labels))
}

pub fn stats(ctx: &Ctx, scores: &Option<PathBuf>, clusters: &Option<PathBuf>) -> Result<(), CliError> {
    let mut prov = ctx.prov("stats");
    let (table, labels) = scores_and_labels(ctx, &mut prov, scores, clusters)?;
    let alpha = ctx.cfg.alpha()?;
    let boot = ctx.cfg.bootstrap()?;
    let cols: Vec<Vec<f64>> = (0..table.columns.len()).map(|j| table.column(j)).collect();
    let report: Vec<FactorStat>;
    let summary;
    if cols.is_empty() {
        report = Vec::new();
        summary = json!({ "alpha": alpha, "n_subjects": labels.len(), "bootstrap": boot });
    } else {
        let r = stat_report(&table.columns, &cols, &labels, alpha, &boot).map_err(|e| CliError::validation(e.to_string()))?;
        summary = json!({
            "alpha": r.alpha,
            "n_subjects": r.n_subjects,
            "n_clusters": r.n_clusters,
            "cluster_sizes": r.cluster_sizes,
            "bootstrap": r.bootstrap,
        });
        report = r.factors;
    }
    let rows: Vec<Vec<String>> = report
        .iter()
        .map(|f| {
            vec![
                f.factor.clone(),
                num(f.h),
                f.df.to_string(),
                num(f.p),
                num(f.q),
                f.significant.to_string(),
                num(f.bootstrap_p),
                num(f.bootstrap_p_smoothed),
                num(f.bootstrap_q),
                f.bootstrap_significant.to_string(),
                f.degenerate.to_string(),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("stats.csv"),
        &prov,
        &[
            "factor",
            "h",
            "df",
            "p",
            "q",
            "significant",
            "bootstrap_p",
            "bootstrap_p_smoothed",
            "bootstrap_q",
            "bootstrap_significant",
            "degenerate",
        ],
        &rows,
    )?;
    write_json(&ctx.path("stats.json"), &prov, Some(&summary), &report)?;
    println!("stats: {} factors, {} bootstrap replicates ({})", report.len(), boot.replicates, boot.mode);
    println!("  {:<8}{:>10}{:>12}{:>12}{:>12}{:>12}", "factor", "H", "p", "q", "boot p", "boot q");
    for f in &report {
        println!(
            "  {:<8}{:>10.3}{:>12.3e}{:>12.3e}{:>12.3e}{:>12.3e}{}",
            f.factor,
            f.h,
            f.p,
            f.q,
            f.bootstrap_p,
            f.bootstrap_q,
            if f.bootstrap_significant { "  *" } else { "" }
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ProfileCell {
    factor: String,
    cluster: usize,
    quantile: f64,
    log10_quantile: f64,
}

pub fn profile(ctx: &Ctx, scores: &Option<PathBuf>, clusters: &Option<PathBuf>) -> Result<(), CliError> {
    let mut prov = ctx.prov("profile");
    let (table, labels) = scores_and_labels(ctx, &mut prov, scores, clusters)?;
    let cols: Vec<Vec<f64>> = (0..table.columns.len()).map(|j| table.column(j)).collect();
    let pm = cluster_profiles(&table.columns, &cols, &labels).map_err(|e| CliError::validation(e.to_string()))?;
    let mut cells = Vec::new();
    for (i, f) in pm.factors.iter().enumerate() {
        for (j, &c) in pm.clusters.iter().enumerate() {
            cells.push(ProfileCell {
                factor: f.clone(),
                cluster: c,
                quantile: pm.quantiles[i][j],
                log10_quantile: pm.log_quantiles[i][j],
            });
        }
    }
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| vec![c.factor.clone(), c.cluster.to_string(), num(c.quantile), num(c.log10_quantile)])
        .collect();
    write_csv(&ctx.path("profile.csv"), &prov, &["factor", "cluster", "quantile", "log10_quantile"], &rows)?;
    let summary = json!({ "factors": pm.factors, "clusters": pm.clusters });
    write_json(&ctx.path("profile.json"), &prov, Some(&summary), &cells)?;
    let col_names: Vec<String> = pm.clusters.iter().map(|c| format!("cluster {c}")).collect();
    let svg = heat_table_svg("log10 quantile of cluster median", &pm.factors, &col_names, &pm.log_quantiles);
    write_svg(&ctx.path("profile.svg"), &prov, &svg)?;
    println!("profile: {} factors × {} clusters (log10 quantile)", pm.factors.len(), pm.clusters.len());
    for (i, f) in pm.factors.iter().enumerate() {
        let vals: Vec<String> = pm.log_quantiles[i].iter().map(|v| format!("{v:>8.3}")).collect();
        println!("  {f:<6}{}", vals.join(""));
    }
    Ok(())
}

pub fn params(ctx: &Ctx, width: Option<usize>) -> Result<(), CliError> {
    let prov = ctx.prov("params");
    let mcfg = ctx.cfg.model_with(Some([32, 32, 24]), Some(2))?;
    let k = mcfg.kernel;
    let widths: Vec<usize> = match width {
        Some(c) => vec![c],
        None => (1..=mcfg.depth).map(|l| mcfg.channels(l)).collect(),
    };
    let k3 = k * k * k;
    println!("mid-flow block, kernel {k}:");
    println!(
        "  {:>6}{:>14}{:>14}{:>10}{:>14}",
        "C", "standard", "separable", "ratio", "k³C/(k³+C)"
    );
    let mut mid_rows = Vec::new();
    for &c in &widths {
        let (std_c, sep_c) = midflow_counts(c, k).map_err(nn_err)?;
        let ratio = std_c.weights as f64 / sep_c.weights as f64;
        let closed = (k3 * c) as f64 / (k3 + c) as f64;
        println!("  {c:>6}{:>14}{:>14}{ratio:>10.3}{closed:>14.3}", std_c.weights, sep_c.weights);
        mid_rows.push(vec![
            c.to_string(),
            k.to_string(),
            std_c.weights.to_string(),
            sep_c.weights.to_string(),
            num(ratio),
            std_c.trainable().to_string(),
            sep_c.trainable().to_string(),
        ]);
    }
    write_csv(
        &ctx.path("midflow.csv"),
        &prov,
        &[
            "channels",
            "kernel",
            "standard_weights",
            "separable_weights",
            "weight_ratio",
            "standard_trainable",
            "separable_trainable",
        ],
        &mid_rows,
    )?;

    let model = FuseModel::<f32>::new(mcfg.clone()).map_err(nn_err)?;
    let report = model.count_params();
    println!(
        "model {:?}, depth {}, base channels {}: {} trainable parameters, embedding {}",
        mcfg.input_dims,
        mcfg.depth,
        mcfg.base_channels,
        report.total.trainable(),
        mcfg.embedding_len()
    );
    let rows: Vec<Vec<String>> = report
        .blocks
        .iter()
        .chain(std::iter::once(&report.total))
        .map(|b| {
            vec![
                b.block.clone(),
                b.weights.to_string(),
                b.biases.to_string(),
                b.bn.to_string(),
                b.buffers.to_string(),
                b.trainable().to_string(),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("params.csv"),
        &prov,
        &["block", "weights", "biases", "bn", "buffers", "trainable"],
        &rows,
    )?;
    Ok(())
}
