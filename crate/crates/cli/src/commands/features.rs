//! Classical pipeline: `features`, `select` and `train-baseline`.

use std::collections::BTreeMap;
use std::fs;

use anyhow::Context as _;
use serde::{Deserialize, Serialize};
use sleeplite_core::baseline::{
    evaluate, grid_search_knn, grid_search_logreg, knn_classify, logreg_fit, rfe, standardize, FeatureMatrix,
    LogRegConfig, LogisticRegression, Metrics, Scaler,
};
use sleeplite_core::hrv::{extract_features, FeatureTable};

use super::{write_json, Context, BASELINE_DIR, FEATURES_DIR, SELECT_DIR, SPLITS};

const SELECTION_FILE: &str = "selection.json";

fn features_path(ctx: &Context, split: &str) -> std::path::PathBuf {
    ctx.stage(FEATURES_DIR).join(format!("{split}.csv"))
}

fn load_features(ctx: &Context, split: &str) -> anyhow::Result<FeatureTable> {
    FeatureTable::load(features_path(ctx, split)).with_context(|| format!("loading {split} features (run `features` first)"))
}

#[derive(Debug, Serialize)]
struct FeatureSummary {
    features: usize,
    rows: BTreeMap<String, usize>,
    flagged_rows: BTreeMap<String, usize>,
}

pub fn features(ctx: &Context) -> anyhow::Result<()> {
    let mut sets = Vec::new();
    for s in SPLITS {
        sets.push(ctx.read_split(s)?);
    }
    let dir = ctx.fresh_stage(FEATURES_DIR)?;
    let mut summary = FeatureSummary {
        features: 0,
        rows: BTreeMap::new(),
        flagged_rows: BTreeMap::new(),
    };
    for (name, set) in SPLITS.iter().zip(&sets) {
        let table = extract_features(set);
        table.save(features_path(ctx, name))?;
        summary.features = table.n_features();
        summary.rows.insert(name.to_string(), table.len());
        summary
            .flagged_rows
            .insert(name.to_string(), table.flags.iter().filter(|f| !f.is_empty()).count());
        log::info!("{name}: {} rows x {} features", table.len(), table.n_features());
    }
    let inputs: Vec<_> = SPLITS.iter().map(|s| ctx.windows_path(s)).collect();
    ctx.write_manifest("features", &dir, &inputs, &summary)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Selection {
    k: usize,
    names: Vec<String>,
    /// Column indices into the feature CSV, ascending.
    columns: Vec<usize>,
}

pub fn select(ctx: &Context) -> anyhow::Result<()> {
    let train = load_features(ctx, "train")?;
    let scheme = ctx.config.scheme()?;
    let k = ctx.config.rfe_k(scheme).min(train.n_features());
    let x = FeatureMatrix::from_table(&train)?;
    let (xs, _, _) = standardize(&x, &[])?;
    let mut columns = rfe(&xs, k, &ctx.config.select.logreg)?;
    columns.sort_unstable();
    let sel = Selection {
        k,
        names: columns.iter().map(|&c| train.names[c].clone()).collect(),
        columns,
    };
    log::info!("kept {} of {} features: {}", k, train.n_features(), sel.names.join(", "));
    let dir = ctx.fresh_stage(SELECT_DIR)?;
    write_json(&dir.join(SELECTION_FILE), &sel)?;
    ctx.write_manifest("select", &dir, &[features_path(ctx, "train")], &sel)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BaselineModels {
    columns: Vec<usize>,
    scaler: Scaler,
    knn_k: Option<usize>,
    logreg_config: Option<LogRegConfig>,
    logreg: Option<LogisticRegression>,
}

#[derive(Debug, Clone, Serialize)]
struct SplitMetrics {
    val: Metrics,
    test: Metrics,
}

pub fn train_baseline(ctx: &Context) -> anyhow::Result<()> {
    let sel_path = ctx.stage(SELECT_DIR).join(SELECTION_FILE);
    let sel: Selection = serde_json::from_str(
        &fs::read_to_string(&sel_path).with_context(|| format!("reading {} (run `select` first)", sel_path.display()))?,
    )?;
    let mats = SPLITS
        .iter()
        .map(|s| Ok(FeatureMatrix::from_table(&load_features(ctx, s)?.select_columns(&sel.columns))?))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (train, others, scaler) = standardize(&mats[0], &[&mats[1], &mats[2]])?;
    let (val, test) = (&others[0], &others[1]);
    let cfg = &ctx.config.baseline;
    let cv_seed = ctx.seed("cv");
    let mut models = BaselineModels {
        columns: sel.columns.clone(),
        scaler,
        knn_k: None,
        logreg_config: None,
        logreg: None,
    };
    let mut metrics: BTreeMap<&str, SplitMetrics> = BTreeMap::new();
    let mut search = BTreeMap::new();
    if cfg.knn {
        // grid search folds re-standardise raw columns
        let g = grid_search_knn(&mats[0], &cfg.grid, cv_seed)?;
        log::info!("knn: k = {} (cv macro-F1 {:.4})", g.best, g.best_score);
        let m = SplitMetrics {
            val: evaluate(&knn_classify(&train, val, g.best)?, &val.labels)?,
            test: evaluate(&knn_classify(&train, test, g.best)?, &test.labels)?,
        };
        metrics.insert("knn", m);
        search.insert("knn", serde_json::to_value(&g)?);
        models.knn_k = Some(g.best);
    }
    if cfg.logreg {
        let g = grid_search_logreg(&mats[0], &cfg.grid, cv_seed)?;
        log::info!("logreg: {:?} (cv macro-F1 {:.4})", g.best, g.best_score);
        let model = logreg_fit(&train, &g.best)?;
        let m = SplitMetrics {
            val: evaluate(&model.predict(val), &val.labels)?,
            test: evaluate(&model.predict(test), &test.labels)?,
        };
        metrics.insert("logreg", m);
        search.insert("logreg", serde_json::to_value(&g)?);
        models.logreg_config = Some(g.best);
        models.logreg = Some(model);
    }
    let dir = ctx.fresh_stage(BASELINE_DIR)?;
    write_json(&dir.join("models.json"), &models)?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    write_json(&dir.join("search.json"), &search)?;
    for (name, m) in &metrics {
        println!("{name} (test)\n{}", m.test.render_text());
    }
    let mut inputs: Vec<_> = SPLITS.iter().map(|s| features_path(ctx, s)).collect();
    inputs.push(sel_path);
    let summary: BTreeMap<&str, (f64, f64)> =
        metrics.iter().map(|(k, m)| (*k, (m.test.accuracy, m.test.macro_f1))).collect();
    ctx.write_manifest("train-baseline", &dir, &inputs, &summary)?;
    Ok(())
}

/// Predictions of the stored baseline models on the test feature table.
pub(crate) fn baseline_predictions(
    ctx: &Context,
) -> anyhow::Result<Option<Vec<(&'static str, Vec<sleeplite_core::ApneaClass>, Vec<sleeplite_core::ApneaClass>)>>> {
    let path = ctx.stage(BASELINE_DIR).join("models.json");
    if !path.is_file() {
        return Ok(None);
    }
    let models: BaselineModels = serde_json::from_str(&fs::read_to_string(&path)?)?;
    let test = FeatureMatrix::from_table(&load_features(ctx, "test")?.select_columns(&models.columns))?;
    let test = models.scaler.transform(&test);
    let mut out = Vec::new();
    if let Some(k) = models.knn_k {
        let train = FeatureMatrix::from_table(&load_features(ctx, "train")?.select_columns(&models.columns))?;
        let train = models.scaler.transform(&train);
        out.push(("knn", knn_classify(&train, &test, k)?, test.labels.clone()));
    }
    if let Some(m) = &models.logreg {
        out.push(("logreg", m.predict(&test), test.labels.clone()));
    }
    Ok(Some(out))
}
