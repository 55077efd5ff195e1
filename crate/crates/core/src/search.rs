//! Exhaustive grid search with inner cross-validation, best-configuration
//! selection and a final k-fold evaluation.

use std::io::Write;

use crate::dataset::{make_folds, LabeledExample};
use crate::error::{Error, Result};
use crate::model::{
    compose_model, evaluate, fit, scenario_layout, EmbeddingSource, HybridModel, HybridSpec,
    ModelOptions, TrainConfig,
};

/// Folds used while searching.
pub const INNER_FOLDS: usize = 3;
/// Folds used to evaluate the selected configuration.
pub const FINAL_FOLDS: usize = 10;

/// Value lists whose Cartesian product is searched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub batch_sizes: Vec<usize>,
    pub filter1_values: Vec<usize>,
    /// Absent for one-layer stacks.
    pub filter2_values: Option<Vec<usize>>,
}

impl GridSpec {
    /// Grid for the two-layer scenarios 1, 2, 5 and 6.
    pub fn two_layer() -> Self {
        GridSpec {
            batch_sizes: vec![128, 256, 512],
            filter1_values: vec![128, 256, 512],
            filter2_values: Some(vec![64, 128, 256, 512]),
        }
    }

    /// Grid for the one-layer scenarios 3, 4, 7 and 8.
    pub fn one_layer() -> Self {
        GridSpec {
            batch_sizes: vec![128, 256, 512],
            filter1_values: vec![64, 128, 256, 512],
            filter2_values: None,
        }
    }

    pub fn for_scenario(scenario_id: u8) -> Result<Self> {
        let (_, stack) = scenario_layout(scenario_id)?;
        Ok(if stack.len() == 2 {
            Self::two_layer()
        } else {
            Self::one_layer()
        })
    }

    fn check(&self, scenario_id: u8) -> Result<()> {
        let (_, stack) = scenario_layout(scenario_id)?;
        if stack.len() == 2 && self.filter2_values.is_none() {
            return Err(Error::InvalidArgument(format!(
                "scenario {scenario_id} needs filter2 values"
            )));
        }
        if stack.len() == 1 && self.filter2_values.is_some() {
            return Err(Error::InvalidArgument(format!(
                "scenario {scenario_id} takes no filter2 values"
            )));
        }
        Ok(())
    }
}

/// One point of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridConfig {
    pub batch_size: usize,
    pub filter1: usize,
    pub filter2: Option<usize>,
}

/// Cartesian product with batch size outermost, then filter1, then filter2.
pub fn enumerate_grid(spec: &GridSpec) -> Result<Vec<GridConfig>> {
    let empty = spec.batch_sizes.is_empty()
        || spec.filter1_values.is_empty()
        || spec.filter2_values.as_ref().is_some_and(|v| v.is_empty());
    if empty {
        return Err(Error::InvalidArgument("grid value lists must be non-empty".into()));
    }
    let f2: Vec<Option<usize>> = match &spec.filter2_values {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut out = Vec::new();
    for &batch_size in &spec.batch_sizes {
        for &filter1 in &spec.filter1_values {
            for &filter2 in &f2 {
                out.push(GridConfig {
                    batch_size,
                    filter1,
                    filter2,
                });
            }
        }
    }
    Ok(out)
}

/// Everything besides the grid point that is needed to build a model.
#[derive(Debug, Clone)]
pub struct ModelContext {
    /// Cloned for every fresh model.
    pub source: EmbeddingSource,
    pub seq_len: usize,
    pub options: ModelOptions,
}

impl ModelContext {
    pub fn build(&self, scenario_id: u8, config: &GridConfig, seed: u64) -> Result<HybridModel> {
        let spec = HybridSpec::new(scenario_id, config.filter1, config.filter2)?;
        compose_model(&spec, self.source.clone(), self.seq_len, &self.options, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldScore {
    /// Percentage.
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub config: GridConfig,
    pub mean_accuracy: f64,
    pub mean_loss: f64,
    pub per_fold: Vec<FoldScore>,
    /// Reason the configuration failed, if it did.
    pub failure: Option<String>,
}

impl GridResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    fn from_folds(config: GridConfig, per_fold: Vec<FoldScore>) -> Self {
        let n = per_fold.len() as f64;
        GridResult {
            config,
            mean_accuracy: per_fold.iter().map(|f| f.accuracy).sum::<f64>() / n,
            mean_loss: per_fold.iter().map(|f| f.loss).sum::<f64>() / n,
            per_fold,
            failure: None,
        }
    }
}

/// Train a fresh model on all but one fold and score it on the held-out fold,
/// for every fold. Folds come from `seed`; the model for fold `i` is built
/// and trained with seed `seed ^ i`.
pub fn cross_validate(
    scenario_id: u8,
    config: &GridConfig,
    context: &ModelContext,
    data: &[LabeledExample],
    k: usize,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<FoldScore>> {
    let plan = make_folds(data.len(), k, seed)?;
    let mut scores = Vec::with_capacity(k);
    for fold in 0..k {
        let fold_seed = seed ^ fold as u64;
        let train: Vec<LabeledExample> =
            plan.train_indices(fold).iter().map(|&i| data[i].clone()).collect();
        let test: Vec<LabeledExample> =
            plan.test_indices(fold).iter().map(|&i| data[i].clone()).collect();
        let mut model = context.build(scenario_id, config, fold_seed)?;
        let cfg = TrainConfig {
            batch_size: config.batch_size,
            seed: fold_seed,
            ..train_cfg.clone()
        };
        fit(&mut model, &train, &cfg)?;
        let (accuracy, loss) = evaluate(&model, &test)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch: cfg.epochs });
        }
        scores.push(FoldScore { accuracy, loss });
    }
    Ok(scores)
}

/// [`cross_validate`] packaged as a grid row. Numeric failures produce a
/// failed row; other errors propagate.
pub fn cross_validate_config(
    scenario_id: u8,
    config: &GridConfig,
    context: &ModelContext,
    data: &[LabeledExample],
    k: usize,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<GridResult> {
    match cross_validate(scenario_id, config, context, data, k, train_cfg, seed) {
        Ok(folds) => Ok(GridResult::from_folds(*config, folds)),
        Err(e) if e.is_numeric() => Ok(GridResult {
            config: *config,
            mean_accuracy: f64::NAN,
            mean_loss: f64::NAN,
            per_fold: Vec::new(),
            failure: Some(e.to_string()),
        }),
        Err(e) => Err(e),
    }
}

/// Index of the best successful row: highest mean accuracy, then lowest mean
/// loss, then earliest.
pub fn select_best(rows: &[GridResult]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.failed() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &rows[b];
                let better = r.mean_accuracy > cur.mean_accuracy
                    || (r.mean_accuracy == cur.mean_accuracy && r.mean_loss < cur.mean_loss);
                Some(if better { i } else { b })
            }
        };
    }
    best.ok_or(Error::AllConfigsFailed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub scenario_id: u8,
    pub rows: Vec<GridResult>,
    pub best: usize,
    /// Mean accuracy (percent) of the best configuration over the final folds.
    pub final_eval: f64,
    pub final_folds: Vec<FoldScore>,
}

/// Settings for [`run_grid_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub inner_k: usize,
    pub final_k: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            inner_k: INNER_FOLDS,
            final_k: FINAL_FOLDS,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

/// Cross-validate every grid point, pick the best and evaluate it with
/// `final_k` folds. Every configuration sees the same folds.
pub fn run_grid_search(
    scenario_id: u8,
    grid: &GridSpec,
    context: &ModelContext,
    data: &[LabeledExample],
    cfg: &SearchConfig,
) -> Result<SearchReport> {
    run_grid_search_observed(scenario_id, grid, context, data, cfg, |_, _| {})
}

/// [`run_grid_search`] with a callback after every finished row.
pub fn run_grid_search_observed<F>(
    scenario_id: u8,
    grid: &GridSpec,
    context: &ModelContext,
    data: &[LabeledExample],
    cfg: &SearchConfig,
    mut observe: F,
) -> Result<SearchReport>
where
    F: FnMut(usize, &GridResult),
{
    grid.check(scenario_id)?;
    let configs = enumerate_grid(grid)?;
    let mut rows = Vec::with_capacity(configs.len());
    for (i, config) in configs.iter().enumerate() {
        let row = cross_validate_config(
            scenario_id,
            config,
            context,
            data,
            cfg.inner_k,
            &cfg.train,
            cfg.seed,
        )?;
        observe(i, &row);
        rows.push(row);
    }
    let best = select_best(&rows)?;
    let final_folds = cross_validate(
        scenario_id,
        &rows[best].config,
        context,
        data,
        cfg.final_k,
        &cfg.train,
        cfg.seed,
    )?;
    let final_eval = GridResult::from_folds(rows[best].config, final_folds.clone()).mean_accuracy;
    Ok(SearchReport {
        scenario_id,
        rows,
        best,
        final_eval,
        final_folds,
    })
}

impl SearchReport {
    /// CSV with one row per configuration in enumeration order. Accuracy is a
    /// fraction and every number has six decimals; failed rows leave accuracy
    /// and loss empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "batch_size,filter1,filter2,accuracy,loss,best")?;
        for (i, r) in self.rows.iter().enumerate() {
            let f2 = r.config.filter2.map(|v| v.to_string()).unwrap_or_default();
            let (acc, loss) = if r.failed() {
                (String::new(), String::new())
            } else {
                (
                    format!("{:.6}", r.mean_accuracy / 100.0),
                    format!("{:.6}", r.mean_loss),
                )
            };
            writeln!(
                w,
                "{},{},{f2},{acc},{loss},{}",
                r.config.batch_size,
                r.config.filter1,
                u8::from(i == self.best)
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn best_config(&self) -> GridConfig {
        self.rows[self.best].config
    }
}
