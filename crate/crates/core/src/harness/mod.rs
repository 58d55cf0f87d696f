//! Experiment runner: data preparation, the round loop, evaluation, and
//! sweeps over schemes and seeds.
//!
//! Every random choice in a run derives from the configured seed:
//! partitioning uses `split_seed(seed, 0)` and particle initialization plus
//! all round randomness use `split_seed(seed, 1)`. Run `r` of a sweep uses
//! base seed `split_seed(sweep_seed, r)` for every scheme, so schemes are
//! compared on identical shards and initial particles.

pub mod config;
pub mod csv;
pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ExperimentConfig, ModelKind};
pub use csv::{emit_csv, parse_csv, CsvWriter, ParsedCsv, RoundRecord};
pub use plot::{emit_plot, emit_plot_series};

use crate::data::{load_covtype, load_mnist, partition, Dataset, LabelKind, PartitionPlan};
use crate::error::{Error, Result};
use crate::federation::{federated_round, initialize};
use crate::linalg::ParticleSet;
use crate::models::{LabeledBatch, ModelSpec};
use crate::par;
use crate::rng::split_seed;
use crate::selection::SelectionScheme;

/// Accuracy threshold used for rounds-to-target summaries.
pub const TARGET_ACCURACY: f64 = 0.7;

/// Rounds at the end of a run used for the late-run spread.
pub const LATE_WINDOW: usize = 20;

/// Ensemble accuracy and mean predictive log-likelihood on `test`.
///
/// The predictive log-likelihood of one example is the log of the
/// particle-averaged likelihood, `log (1/N) Σ_n p(y | x, θ_n)`, untempered.
pub fn evaluate(
    model: &ModelSpec,
    particles: &ParticleSet,
    test: &LabeledBatch,
) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::usage("evaluation needs a nonempty test set"));
    }
    let scores = model.predict_ensemble(particles, &test.features)?;
    let predicted = model.decide(&scores);
    let correct = predicted
        .iter()
        .zip(&test.labels)
        .filter(|(p, y)| p == y)
        .count();
    let ln_n = (particles.rows() as f64).ln();
    let per_example = par::map_indices(test.len(), |i| {
        let x = test.features.row(i);
        let y = test.labels[i];
        let terms: Vec<f64> = particles
            .iter_rows()
            .map(|t| model.example_log_likelihood(t, x, y))
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - ln_n
    });
    let ll = par::ordered_sum(&per_example) / test.len() as f64;
    Ok((correct as f64 / test.len() as f64, ll))
}

/// Model, client shards and held-out set for one configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: ModelSpec,
    pub shards: Vec<LabeledBatch>,
    pub test: Option<LabeledBatch>,
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::Config(format!("{key} must be set for the bnn model")))
}

fn shard_dataset(cfg: &ExperimentConfig, train: &Dataset) -> Result<Vec<LabeledBatch>> {
    let plan = PartitionPlan {
        clients: cfg.clients,
        mode: cfg.partition,
        per_client_size: cfg.per_client_size,
        seed: split_seed(cfg.seed, 0),
    };
    Ok(partition(train, &plan)?
        .into_iter()
        .map(|s| s.batch)
        .collect())
}

/// Loads data and builds the model for `cfg`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    match cfg.model {
        ModelKind::GaussianToy => {
            let shards = cfg
                .toy_observations
                .iter()
                .map(|o| LabeledBatch::observations(std::slice::from_ref(o)))
                .collect::<Result<_>>()?;
            Ok(Prepared {
                model: cfg.model_spec(0, 0)?,
                shards,
                test: None,
            })
        }
        ModelKind::Blr => {
            let data = load_covtype(&cfg.covtype_path)?;
            let (train, test) = data.split_tail(cfg.test_fraction)?;
            Ok(Prepared {
                model: cfg.model_spec(train.features.cols(), 0)?,
                shards: shard_dataset(cfg, &train)?,
                test: (!test.is_empty()).then(|| test.to_batch()).transpose()?,
            })
        }
        ModelKind::Bnn => {
            let m = &cfg.mnist;
            let train = load_mnist(
                required(&m.train_images, "mnist_train_images")?,
                required(&m.train_labels, "mnist_train_labels")?,
            )?;
            let test = load_mnist(
                required(&m.test_images, "mnist_test_images")?,
                required(&m.test_labels, "mnist_test_labels")?,
            )?;
            let classes = match train.label_kind {
                LabelKind::Class { classes } => classes,
                LabelKind::Binary => 2,
            };
            Ok(Prepared {
                model: cfg.model_spec(train.features.cols(), classes)?,
                shards: shard_dataset(cfg, &train)?,
                test: Some(test.to_batch()?),
            })
        }
    }
}

/// Outcome of one experiment. A round that aborts stops the run; the
/// records up to that point are kept and the error is returned alongside.
#[derive(Debug)]
pub struct ExperimentRun {
    pub records: Vec<RoundRecord>,
    pub final_global: ParticleSet,
    pub failure: Option<Error>,
}

/// Runs `cfg.rounds` federated rounds on prepared inputs, handing each
/// record to `sink` as soon as it is complete.
pub fn run_prepared(
    cfg: &ExperimentConfig,
    prepared: Prepared,
    sink: &mut dyn FnMut(&RoundRecord) -> Result<()>,
) -> Result<ExperimentRun> {
    let Prepared {
        model,
        shards,
        test,
    } = prepared;
    let fed = cfg.federation();
    let (mut server, mut clients) =
        initialize(&model, shards, cfg.particles, split_seed(cfg.seed, 1))?;
    let mut records = Vec::with_capacity(cfg.rounds);
    for i in 1..=cfg.rounds {
        let start = Instant::now();
        let step = federated_round(&mut server, &mut clients, cfg.scheme, &model, &fed).and_then(
            |report| {
                let metrics = match &test {
                    Some(t) if i % cfg.eval_every == 0 || i == cfg.rounds => {
                        let (acc, ll) = evaluate(&model, &server.global, t)?;
                        (Some(acc), Some(ll))
                    }
                    _ => (None, None),
                };
                Ok((report, metrics))
            },
        );
        let (report, (accuracy, pred_loglik)) = match step {
            Ok(v) => v,
            Err(e) => {
                return Ok(ExperimentRun {
                    records,
                    final_global: server.global,
                    failure: Some(e),
                })
            }
        };
        let ms = if cfg.timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let record = RoundRecord {
            round: report.round,
            selected_client: report.selected,
            indicators: report.indicators,
            probabilities: report.probabilities,
            jensen_gap: report.jensen_gap,
            payload_scalars: report.payload_scalars,
            accuracy,
            pred_loglik,
            ms,
        };
        sink(&record)?;
        records.push(record);
    }
    Ok(ExperimentRun {
        records,
        final_global: server.global,
        failure: None,
    })
}

/// Loads, prepares and runs `cfg` without writing anything.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    run_prepared(cfg, prepare(cfg)?, &mut |_| Ok(()))
}

/// Files written by [`run_to_files`].
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub csv: PathBuf,
    pub plot: Option<PathBuf>,
}

/// Runs `cfg`, streaming the CSV to `csv_path` and writing an accuracy
/// chart to `plot_path` when the model produces accuracy values. An aborted
/// round leaves the partial CSV with an error trailer and returns the error.
pub fn run_to_files(
    cfg: &ExperimentConfig,
    csv_path: &Path,
    plot_path: &Path,
) -> Result<(ExperimentRun, RunOutputs)> {
    let prepared = prepare(cfg)?;
    let mut writer = CsvWriter::create(csv_path, prepared.shards.len())?;
    let run = run_prepared(cfg, prepared, &mut |r| writer.write(r))?;
    if let Some(e) = &run.failure {
        writer.write_error(e)?;
    }
    let plot = if run.records.iter().any(|r| r.accuracy.is_some()) {
        emit_plot(&run.records, plot_path)?;
        Some(plot_path.to_path_buf())
    } else {
        None
    };
    Ok((
        run,
        RunOutputs {
            csv: csv_path.to_path_buf(),
            plot,
        },
    ))
}

/// First round whose accuracy reaches `target`, or `rounds + 1` if none does.
pub fn rounds_to_target(records: &[RoundRecord], target: f64, rounds: usize) -> usize {
    records
        .iter()
        .find(|r| r.accuracy.is_some_and(|a| a >= target))
        .map(|r| r.round)
        .unwrap_or(rounds + 1)
}

/// Population standard deviation of the accuracy over the last `window`
/// evaluated rounds.
pub fn late_accuracy_std(records: &[RoundRecord], window: usize) -> Option<f64> {
    let acc: Vec<f64> = records.iter().filter_map(|r| r.accuracy).collect();
    let tail = &acc[acc.len().saturating_sub(window)..];
    if tail.is_empty() {
        return None;
    }
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    Some((tail.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt())
}

/// One row of a sweep summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scheme: SelectionScheme,
    pub run: usize,
    pub seed: u64,
    pub rounds_to_target: usize,
    pub final_accuracy: Option<f64>,
    pub late_std: Option<f64>,
    pub error: Option<String>,
}

/// Runs every scheme in `cfg.sweep_schemes` on `cfg.sweep_runs` seeds,
/// writing `<scheme>_run<r>.csv` per run, `accuracy_run<r>.svg` per seed and
/// `summary.csv` into `cfg.output_dir`. Runs execute in parallel.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schemes = &cfg.sweep_schemes;
    let jobs: Vec<(usize, SelectionScheme)> = (0..cfg.sweep_runs)
        .flat_map(|r| schemes.iter().map(move |&s| (r, s)))
        .collect();
    let results = par::map_indices(jobs.len(), |j| {
        let (r, scheme) = jobs[j];
        let run_cfg = ExperimentConfig {
            seed: split_seed(cfg.seed, r as u64),
            scheme,
            ..cfg.clone()
        };
        let stem = format!("{}_run{r}", scheme.as_str());
        let csv_path = dir.join(format!("{stem}.csv"));
        let prepared = prepare(&run_cfg)?;
        let mut writer = CsvWriter::create(&csv_path, prepared.shards.len())?;
        let run = run_prepared(&run_cfg, prepared, &mut |rec| writer.write(rec))?;
        if let Some(e) = &run.failure {
            writer.write_error(e)?;
        }
        Ok::<_, Error>((run_cfg.seed, run))
    });
    let mut rows = Vec::with_capacity(jobs.len());
    let mut per_run: Vec<Vec<(SelectionScheme, Vec<RoundRecord>)>> =
        vec![Vec::new(); cfg.sweep_runs];
    for ((r, scheme), result) in jobs.iter().zip(results) {
        let (seed, run) = result?;
        rows.push(SweepRow {
            scheme: *scheme,
            run: *r,
            seed,
            rounds_to_target: rounds_to_target(&run.records, TARGET_ACCURACY, cfg.rounds),
            final_accuracy: run.records.iter().rev().find_map(|x| x.accuracy),
            late_std: late_accuracy_std(&run.records, LATE_WINDOW),
            error: run.failure.as_ref().map(|e| e.to_string()),
        });
        per_run[*r].push((*scheme, run.records));
    }
    for (r, series) in per_run.iter().enumerate() {
        if series
            .iter()
            .any(|(_, recs)| recs.iter().any(|x| x.accuracy.is_some()))
        {
            let labelled: Vec<(&str, &[RoundRecord])> = series
                .iter()
                .map(|(s, recs)| (s.as_str(), recs.as_slice()))
                .collect();
            emit_plot_series(&labelled, dir.join(format!("accuracy_run{r}.svg")))?;
        }
    }
    write_summary(&rows, &dir.join("summary.csv"))?;
    Ok(rows)
}

fn write_summary(rows: &[SweepRow], path: &Path) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
    let mut text = String::from("scheme,run,seed,rounds_to_target,final_accuracy,late_std,error\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.scheme,
            r.run,
            r.seed,
            r.rounds_to_target,
            opt(r.final_accuracy),
            opt(r.late_std),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
