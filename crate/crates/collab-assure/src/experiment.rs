//! Experiment drivers: the value-assessment comparison (baseline vs joint
//! plaintext vs protocol across privacy budgets) and the empirical checks
//! that label-agnostic data cannot improve a model.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::data::{
    gen_synthetic_binary, relabel_random, split, DataError, LabeledDataset, RandomLabeler,
    SplitPlan,
};
use crate::nn::{evaluate, train_plaintext, LayerSpec, NnError, TrainConfig};
use crate::protocol::{
    run_in_process, run_loopback_tcp, NoiseBudget, ProtocolError, SessionConfig, VerdictDetail,
};
use crate::tlwe::TlweParams;
use crate::{rng_streams, seeded_rng};
use rand::Rng;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("report io: {0}")]
    Io(#[from] std::io::Error),
}

/// Architecture and training hyperparameters shared by the three models.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden: vec![8],
            epochs: 50,
            batch_size: 16,
            learning_rate: 0.1,
            l2: 0.01,
        }
    }
}

impl Hyperparams {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            l2: self.l2,
        }
    }

    pub fn layer_spec(&self, input_dim: usize, classes: usize) -> Result<LayerSpec, NnError> {
        LayerSpec::with_hidden(input_dim, &self.hidden, classes)
    }
}

/// One measured training run.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub epsilon: Option<f64>,
    pub model: String,
    pub time_s: f64,
    pub accuracy: f64,
    pub seed: u64,
}

/// Mean over the repetitions of one `(epsilon, model)` cell.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AggregateRow {
    pub dataset: String,
    pub epsilon: Option<f64>,
    pub model: String,
    pub mean_accuracy: f64,
    pub mean_time_s: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl ExperimentReport {
    /// One JSON object per line: all rows, then all aggregates tagged
    /// `"kind":"aggregate"`.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("row serializes"));
            out.push('\n');
        }
        for agg in &self.aggregates {
            let mut value = serde_json::to_value(agg).expect("aggregate serializes");
            value["kind"] = serde_json::Value::String("aggregate".into());
            out.push_str(&value.to_string());
            out.push('\n');
        }
        out
    }
}

/// Which transport carries the protocol sessions of an assessment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SessionTransport {
    #[default]
    InProcess,
    LoopbackTcp,
}

#[derive(Debug, Clone)]
pub struct AssessOptions {
    pub repetitions: usize,
    pub seed: u64,
    pub tlwe: TlweParams,
    pub compat_nonneg: bool,
    pub transport: SessionTransport,
    /// Hyperparameters for the baseline model when its dataset share is
    /// sized very differently from the joint pool; defaults to the shared
    /// hyperparameters.
    pub baseline_hyper: Option<Hyperparams>,
    /// Homomorphic scalar bound for the sessions. Small batches leave noise
    /// headroom, so raising this above the `10^6` default lets very noisy
    /// (low-budget) runs finish instead of aborting on inflated gradients;
    /// the noise-budget validator still gates the chosen value.
    pub z_max: Option<i64>,
}

impl Default for AssessOptions {
    fn default() -> Self {
        AssessOptions {
            repetitions: 10,
            seed: 0,
            tlwe: TlweParams::default(),
            compat_nonneg: false,
            transport: SessionTransport::InProcess,
            baseline_hyper: None,
            z_max: None,
        }
    }
}

pub const MODEL_BASELINE: &str = "M1";
pub const MODEL_JOINT_PLAIN: &str = "M2-plain";
pub const MODEL_JOINT_PROTOCOL: &str = "M2-protocol";

/// For each budget and repetition: re-partition the dataset, train the
/// baseline on party one's share, the joint model in the clear, and the
/// joint model through the protocol; record wall time and holdout accuracy
/// for each. Rows stream to `sink` as they finish, so partial results
/// survive an abort.
pub fn run_value_assessment(
    dataset: &LabeledDataset,
    plan: &SplitPlan,
    eps_list: &[f64],
    hyper: &Hyperparams,
    opts: &AssessOptions,
    mut sink: Option<&mut dyn Write>,
) -> Result<ExperimentReport, ExperimentError> {
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut push = |row: ReportRow, sink: &mut Option<&mut dyn Write>| -> Result<(), ExperimentError> {
        if let Some(w) = sink {
            writeln!(w, "{}", serde_json::to_string(&row).expect("row serializes"))?;
            w.flush()?;
        }
        rows.push(row);
        Ok(())
    };

    let baseline_hyper = opts.baseline_hyper.clone().unwrap_or_else(|| hyper.clone());
    for &epsilon in eps_list {
        for rep in 0..opts.repetitions {
            let seed = opts.seed + rep as u64;
            let rep_plan = SplitPlan {
                seed,
                ..plan.clone()
            };
            let (d1, d2, d_hold) = split(dataset, &rep_plan)?;
            let input_dim = dataset.dim();
            let classes = dataset.classes;

            let start = Instant::now();
            let m1 = train_plaintext(
                &d1,
                &baseline_hyper.layer_spec(input_dim, classes)?,
                &baseline_hyper.train_config(),
                seed,
            )?;
            let m1_time = start.elapsed().as_secs_f64();
            push(
                ReportRow {
                    dataset: dataset.name.clone(),
                    epsilon: Some(epsilon),
                    model: MODEL_BASELINE.into(),
                    time_s: m1_time,
                    accuracy: evaluate(&m1, &d_hold)?,
                    seed,
                },
                &mut sink,
            )?;

            let joint = d1.concat(&d2, "joint");
            let spec = hyper.layer_spec(input_dim, classes)?;
            let start = Instant::now();
            let m2 = train_plaintext(&joint, &spec, &hyper.train_config(), seed)?;
            let m2_time = start.elapsed().as_secs_f64();
            push(
                ReportRow {
                    dataset: dataset.name.clone(),
                    epsilon: Some(epsilon),
                    model: MODEL_JOINT_PLAIN.into(),
                    time_s: m2_time,
                    accuracy: evaluate(&m2, &d_hold)?,
                    seed,
                },
                &mut sink,
            )?;

            let mut config = SessionConfig::new(
                spec,
                NoiseBudget::Total(epsilon),
                hyper.epochs,
                hyper.batch_size,
                seed,
            );
            config.learning_rate = hyper.learning_rate;
            config.l2 = hyper.l2;
            config.tlwe = opts.tlwe.clone();
            config.compat_nonneg = opts.compat_nonneg;
            config.verdict_detail = VerdictDetail::WithAccuracies;
            match opts.z_max {
                Some(z_max) => config.z_max = z_max,
                None => config.auto_z_max(1.25),
            }
            let start = Instant::now();
            let (out1, _out2) = match opts.transport {
                SessionTransport::InProcess => run_in_process(&config, &d1, &d2, &d_hold)?,
                SessionTransport::LoopbackTcp => run_loopback_tcp(&config, &d1, &d2, &d_hold)?,
            };
            push(
                ReportRow {
                    dataset: dataset.name.clone(),
                    epsilon: Some(epsilon),
                    model: MODEL_JOINT_PROTOCOL.into(),
                    time_s: start.elapsed().as_secs_f64(),
                    accuracy: out1.joint_accuracy,
                    seed,
                },
                &mut sink,
            )?;
        }
    }

    let mut aggregates = Vec::new();
    for &epsilon in eps_list {
        for model in [MODEL_BASELINE, MODEL_JOINT_PLAIN, MODEL_JOINT_PROTOCOL] {
            let cell: Vec<&ReportRow> = rows
                .iter()
                .filter(|r| r.epsilon == Some(epsilon) && r.model == model)
                .collect();
            if cell.is_empty() {
                continue;
            }
            aggregates.push(AggregateRow {
                dataset: dataset.name.clone(),
                epsilon: Some(epsilon),
                model: model.into(),
                mean_accuracy: cell.iter().map(|r| r.accuracy).sum::<f64>() / cell.len() as f64,
                mean_time_s: cell.iter().map(|r| r.time_s).sum::<f64>() / cell.len() as f64,
                runs: cell.len(),
            });
        }
    }
    let report = ExperimentReport { rows, aggregates };
    if let Some(w) = sink.as_mut() {
        for agg in &report.aggregates {
            let mut value = serde_json::to_value(agg).expect("aggregate serializes");
            value["kind"] = serde_json::Value::String("aggregate".into());
            writeln!(w, "{value}")?;
        }
        w.flush()?;
    }
    Ok(report)
}

/// Results of the no-domain-knowledge checks.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    /// `(labeling probability, mean holdout accuracy)` on a balanced holdout.
    pub balanced: Vec<(f64, f64)>,
    /// Class-1 fraction of the imbalanced holdout.
    pub imbalanced_q: f64,
    /// Mean accuracy of the constant-label model on that holdout; the
    /// error is `1 - q`, beating the balanced-case half.
    pub imbalanced_accuracy: f64,
    /// Grand mean accuracy when the holdout balance itself is uniform.
    pub uniform_q_grand_mean: f64,
    pub uniform_q_trials: usize,
}

fn lemma_hyper() -> Hyperparams {
    Hyperparams {
        hidden: vec![4],
        epochs: 30,
        batch_size: 32,
        learning_rate: 0.5,
        l2: 0.01,
    }
}
const UNIFORM_Q_TRIALS: usize = 200;

/// Trains on features from the two-cluster marginal whose labels are
/// feature-independent coin flips with success probability `p_label`.
fn random_label_model(
    train_rows: usize,
    p_label: f64,
    seed: u64,
) -> Result<crate::nn::NetworkParams, ExperimentError> {
    let train_features = gen_synthetic_binary(train_rows, 4, 0.5, seed);
    let train = relabel_random(
        &train_features,
        &RandomLabeler {
            prob_one: p_label,
            seed: seed ^ 0x9e37_79b9,
        },
    )?;
    let hyper = lemma_hyper();
    Ok(train_plaintext(&train, &hyper.layer_spec(4, 2)?, &hyper.train_config(), seed)?)
}

fn holdout_accuracy(
    model: &crate::nn::NetworkParams,
    hold_rows: usize,
    q_hold: f64,
    seed: u64,
) -> Result<f64, ExperimentError> {
    let holdout = gen_synthetic_binary(hold_rows, 4, q_hold, seed ^ 0x517c_c1b7_2722_0a95);
    Ok(evaluate(model, &holdout)?)
}

fn lemma_trial(
    train_rows: usize,
    hold_rows: usize,
    q_hold: f64,
    p_label: f64,
    seed: u64,
) -> Result<f64, ExperimentError> {
    let model = random_label_model(train_rows, p_label, seed)?;
    holdout_accuracy(&model, hold_rows, q_hold, seed)
}

/// Trains on feature-independent random labels and measures holdout
/// accuracy in three regimes: balanced holdout across several labeling
/// probabilities (stays at one half), an imbalanced holdout with constant
/// labels (error drops to `1 - q`), and holdout balance drawn uniformly per
/// trial (grand mean one half).
pub fn check_lemma2(
    n_seeds: usize,
    dataset_size: usize,
    seed: u64,
) -> Result<LemmaReport, ExperimentError> {
    let hold_rows = (dataset_size / 2).max(200);
    let mut balanced = Vec::new();
    for &p in &[0.2, 0.5, 0.8] {
        let mut total = 0.0;
        for s in 0..n_seeds {
            total += lemma_trial(
                dataset_size,
                hold_rows,
                0.5,
                p,
                seed + 1000 * s as u64 + (p * 10.0) as u64,
            )?;
        }
        balanced.push((p, total / n_seeds as f64));
    }

    let imbalanced_q = 0.7;
    let mut total = 0.0;
    for s in 0..n_seeds {
        total += lemma_trial(dataset_size, hold_rows, imbalanced_q, 1.0, seed + 77 + s as u64)?;
    }
    let imbalanced_accuracy = total / n_seeds as f64;

    // Uniform-q mode, antithetic over q: each trained model is scored on a
    // holdout of balance q and one of balance 1 - q, which keeps q uniform
    // marginally while cancelling the linear-in-q part of the variance.
    let mut rng = seeded_rng(seed, rng_streams::DATA);
    let mut grand = 0.0;
    for t in 0..UNIFORM_Q_TRIALS / 2 {
        let q: f64 = rng.random();
        let p: f64 = rng.random();
        let trial_seed = seed + 10_000 + t as u64;
        let model = random_label_model(dataset_size, p, trial_seed)?;
        grand += holdout_accuracy(&model, hold_rows, q, trial_seed)?;
        grand += holdout_accuracy(&model, hold_rows, 1.0 - q, trial_seed + 500_000)?;
    }
    Ok(LemmaReport {
        balanced,
        imbalanced_q,
        imbalanced_accuracy,
        uniform_q_grand_mean: grand / UNIFORM_Q_TRIALS as f64,
        uniform_q_trials: UNIFORM_Q_TRIALS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_iris_like;

    #[test]
    fn assessment_rows_and_aggregates_are_complete() {
        let dataset = gen_iris_like(3);
        let hyper = Hyperparams {
            hidden: vec![4],
            epochs: 5,
            batch_size: 16,
            learning_rate: 0.1,
            l2: 0.01,
        };
        let opts = AssessOptions {
            repetitions: 2,
            seed: 10,
            tlwe: TlweParams::new(1u128 << 64, 1u64 << 32, 64, (2.0f64).powi(-62)).unwrap(),
            ..AssessOptions::default()
        };
        let mut sink = Vec::new();
        let report = run_value_assessment(
            &dataset,
            &SplitPlan::default(),
            &[10.0],
            &hyper,
            &opts,
            Some(&mut sink),
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2 * 3);
        assert_eq!(report.aggregates.len(), 3);
        for row in &report.rows {
            assert!((0.0..=1.0).contains(&row.accuracy));
        }
        // Streamed lines cover the rows plus the aggregates.
        let streamed = String::from_utf8(sink).unwrap();
        assert_eq!(streamed.lines().count(), 6 + 3);
    }

    #[test]
    fn generator_separation_controls_learnability() {
        use crate::data::gen_synthetic_binary_separated;
        let hyper = Hyperparams {
            hidden: vec![4],
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.5,
            l2: 0.01,
        };
        let accuracy_at = |separation: f64| {
            let ds = gen_synthetic_binary_separated(1200, 4, 0.5, separation, 31);
            let (d1, _, hold) = crate::data::split(
                &ds,
                &crate::data::SplitPlan {
                    holdout_fraction: 0.3,
                    d1_fraction: 0.5,
                    d2_fraction: 0.1,
                    skew: None,
                    seed: 31,
                },
            )
            .unwrap();
            let model =
                train_plaintext(&d1, &hyper.layer_spec(4, 2).unwrap(), &hyper.train_config(), 31)
                    .unwrap();
            evaluate(&model, &hold).unwrap()
        };
        // Indistinguishable classes train to chance; the default separation
        // clears 0.9.
        let indistinct = accuracy_at(0.0);
        assert!((0.4..0.6).contains(&indistinct), "accuracy {indistinct} at zero separation");
        let default = accuracy_at(crate::data::DEFAULT_SEPARATION);
        assert!(default >= 0.9, "accuracy {default} at the default separation");
    }

    #[test]
    fn randomly_labeled_data_never_helps_on_average() {
        use crate::data::{gen_synthetic_binary, relabel_random, RandomLabeler};
        let hyper = Hyperparams {
            hidden: vec![4],
            epochs: 25,
            batch_size: 32,
            learning_rate: 0.5,
            l2: 0.01,
        };
        let (mut m1_total, mut m2_total) = (0.0, 0.0);
        let seeds = 10u64;
        for seed in 0..seeds {
            let base = gen_synthetic_binary(600, 4, 0.5, 700 + seed);
            let plan = SplitPlan {
                holdout_fraction: 0.3,
                d1_fraction: 0.2,
                d2_fraction: 0.5,
                skew: None,
                seed: 700 + seed,
            };
            let (d1, d2, hold) = split(&base, &plan).unwrap();
            let d2 =
                relabel_random(&d2, &RandomLabeler { prob_one: 0.5, seed: 800 + seed }).unwrap();
            let spec = hyper.layer_spec(4, 2).unwrap();
            let m1 = train_plaintext(&d1, &spec, &hyper.train_config(), seed).unwrap();
            let joint = d1.concat(&d2, "joint");
            let m2 = train_plaintext(&joint, &spec, &hyper.train_config(), seed).unwrap();
            m1_total += evaluate(&m1, &hold).unwrap();
            m2_total += evaluate(&m2, &hold).unwrap();
        }
        let gain = (m2_total - m1_total) / seeds as f64;
        assert!(gain <= 0.02, "random labels raised mean accuracy by {gain}");
    }

    #[test]
    fn assessment_handles_a_skew_plan() {
        use crate::data::gen_synthetic_binary_separated;
        let dataset = gen_synthetic_binary_separated(2000, 4, 0.5, 2.2, 9);
        let plan = SplitPlan {
            holdout_fraction: 0.05,
            d1_fraction: 0.0,
            d2_fraction: 0.45,
            skew: Some(vec![40, 360]),
            seed: 9,
        };
        let hyper = Hyperparams {
            hidden: vec![4],
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.3,
            l2: 0.01,
        };
        let opts = AssessOptions {
            repetitions: 2,
            seed: 1,
            tlwe: TlweParams::new(1u128 << 64, 1u64 << 32, 64, (2.0f64).powi(-62)).unwrap(),
            z_max: Some(4_000_000),
            ..AssessOptions::default()
        };
        let report =
            run_value_assessment(&dataset, &plan, &[10.0], &hyper, &opts, None).unwrap();
        let mean = |model: &str| {
            report
                .aggregates
                .iter()
                .find(|a| a.model == model)
                .unwrap()
                .mean_accuracy
        };
        assert!(
            mean(MODEL_JOINT_PLAIN) > mean(MODEL_BASELINE),
            "balanced pool should beat the skewed share"
        );
    }

    #[test]
    fn partial_rows_survive_a_session_abort() {
        let dataset = gen_iris_like(6);
        let hyper = Hyperparams {
            hidden: vec![4],
            epochs: 3,
            batch_size: 16,
            learning_rate: 0.1,
            l2: 0.01,
        };
        // A scalar bound of 1 makes the first exchange overflow immediately;
        // the rows already produced must have been flushed.
        let opts = AssessOptions {
            repetitions: 1,
            seed: 2,
            tlwe: TlweParams::new(1u128 << 64, 1u64 << 32, 64, (2.0f64).powi(-62)).unwrap(),
            z_max: Some(1),
            ..AssessOptions::default()
        };
        let mut sink = Vec::new();
        let err = run_value_assessment(
            &dataset,
            &SplitPlan::default(),
            &[10.0],
            &hyper,
            &opts,
            Some(&mut sink),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ExperimentError::Protocol(crate::protocol::ProtocolError::ScalarOverflow { .. })
        ));
        let flushed = String::from_utf8(sink).unwrap();
        assert_eq!(flushed.lines().count(), 2, "baseline and joint rows should be on disk");
    }

    #[test]
    fn assessment_runs_over_loopback_tcp() {
        let dataset = gen_iris_like(8);
        let hyper = Hyperparams {
            hidden: vec![4],
            epochs: 4,
            batch_size: 16,
            learning_rate: 0.1,
            l2: 0.01,
        };
        let base = AssessOptions {
            repetitions: 1,
            seed: 3,
            tlwe: TlweParams::new(1u128 << 64, 1u64 << 32, 64, (2.0f64).powi(-62)).unwrap(),
            z_max: Some(4_000_000),
            ..AssessOptions::default()
        };
        let tcp = AssessOptions {
            transport: SessionTransport::LoopbackTcp,
            ..base.clone()
        };
        let strip = |r: ExperimentReport| -> Vec<(Option<f64>, String, f64)> {
            r.rows.into_iter().map(|row| (row.epsilon, row.model, row.accuracy)).collect()
        };
        let a = strip(
            run_value_assessment(&dataset, &SplitPlan::default(), &[5.0], &hyper, &base, None)
                .unwrap(),
        );
        let b = strip(
            run_value_assessment(&dataset, &SplitPlan::default(), &[5.0], &hyper, &tcp, None)
                .unwrap(),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn assessment_is_deterministic_modulo_wall_time() {
        let dataset = gen_iris_like(5);
        let hyper = Hyperparams {
            hidden: vec![4],
            epochs: 4,
            batch_size: 16,
            learning_rate: 0.1,
            l2: 0.01,
        };
        let opts = AssessOptions {
            repetitions: 2,
            seed: 4,
            tlwe: TlweParams::new(1u128 << 64, 1u64 << 32, 64, (2.0f64).powi(-62)).unwrap(),
            ..AssessOptions::default()
        };
        let strip = |report: &ExperimentReport| -> Vec<(String, Option<f64>, String, f64, u64)> {
            report
                .rows
                .iter()
                .map(|r| (r.dataset.clone(), r.epsilon, r.model.clone(), r.accuracy, r.seed))
                .collect()
        };
        let a = run_value_assessment(&dataset, &SplitPlan::default(), &[1.0], &hyper, &opts, None)
            .unwrap();
        let b = run_value_assessment(&dataset, &SplitPlan::default(), &[1.0], &hyper, &opts, None)
            .unwrap();
        assert_eq!(strip(&a), strip(&b));
    }
}
