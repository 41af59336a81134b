//! Benchmark split generation and accuracy reporting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lispress::{lispress_equal, MatchError};
use crate::sql::DbSchema;

pub const LOW_TRAIN_SIZE: usize = 500;
pub const LOW_SPLITS: usize = 3;
pub const LOW_DEV_SIZE: usize = 50;
pub const MEDIUM_TRAIN_SIZE: usize = 5000;
pub const DEV_SIZE: usize = 500;
pub const TEST_LARGE_SIZE: usize = 2000;
pub const TEST_SMALL_SIZE: usize = 100;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("train pool has {0} examples, fewer than one low-resource split needs")]
    TrainTooSmall(usize),
    #[error("{0} pool is empty")]
    EmptyPool(&'static str),
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("dialogue `{dialogue}` repeats turn {turn}")]
    DuplicateTurn { dialogue: String, turn: usize },
    #[error("dialogue `{0}` has non-consecutive turn indices")]
    TurnGap(String),
    #[error("dialogue `{0}` spans more than one portion")]
    MixedPortions(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("duplicate prediction for `{0}`")]
    DuplicatePrediction(String),
    #[error("prediction for unknown example `{0}`")]
    UnknownId(String),
    #[error("gold set is empty")]
    EmptyGold,
    #[error("metric `{0}` is not supported: it needs an execution engine")]
    NotSupported(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("expected exactly three low-resource reports, got {0}")]
    LowReportCount(usize),
}

/// Which released portion an example comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Portion {
    #[default]
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetExample {
    pub id: String,
    #[serde(default)]
    pub dialogue_id: String,
    #[serde(default)]
    pub turn_index: usize,
    pub utterance: String,
    #[serde(default)]
    pub last_user_utt: String,
    #[serde(default)]
    pub last_agent_utt: String,
    #[serde(default)]
    pub prior_interactions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<DbSchema>,
    pub gold: String,
    #[serde(default)]
    pub portion: Portion,
}

impl DatasetExample {
    /// Plain example with no dialogue or schema context.
    pub fn simple(id: impl Into<String>, utterance: impl Into<String>, gold: impl Into<String>) -> Self {
        DatasetExample {
            id: id.into(),
            dialogue_id: String::new(),
            turn_index: 0,
            utterance: utterance.into(),
            last_user_utt: String::new(),
            last_agent_utt: String::new(),
            prior_interactions: Vec::new(),
            schema: None,
            gold: gold.into(),
            portion: Portion::Train,
        }
    }
}

/// Checks id uniqueness and per-dialogue turn structure.
pub fn validate_dataset(dataset: &[DatasetExample]) -> Result<(), SplitError> {
    let mut ids = HashSet::new();
    let mut turns: HashMap<&str, (Portion, Vec<usize>)> = HashMap::new();
    for ex in dataset {
        if !ids.insert(ex.id.as_str()) {
            return Err(SplitError::DuplicateId(ex.id.clone()));
        }
        if ex.dialogue_id.is_empty() {
            continue;
        }
        let entry = turns.entry(&ex.dialogue_id).or_insert((ex.portion, Vec::new()));
        if entry.0 != ex.portion {
            return Err(SplitError::MixedPortions(ex.dialogue_id.clone()));
        }
        entry.1.push(ex.turn_index);
    }
    for (dialogue, (_, mut idx)) in turns {
        idx.sort_unstable();
        for w in idx.windows(2) {
            if w[0] == w[1] {
                return Err(SplitError::DuplicateTurn {
                    dialogue: dialogue.to_owned(),
                    turn: w[0],
                });
            }
            if w[1] != w[0] + 1 {
                return Err(SplitError::TurnGap(dialogue.to_owned()));
            }
        }
    }
    Ok(())
}

pub fn read_dataset(reader: impl BufRead) -> Result<Vec<DatasetExample>, SplitError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SplitError::Format {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// When false, the released dev set serves as test and a tenth of train
    /// is carved out as dev.
    pub has_public_test: bool,
    pub seed: u64,
    /// Draw the three low-resource train sets without overlap when the pool
    /// has room for all of them.
    pub disjoint_low: bool,
}

impl SplitOptions {
    pub fn new(seed: u64) -> Self {
        SplitOptions {
            has_public_test: true,
            seed,
            disjoint_low: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediumSplit {
    pub train: Vec<String>,
    pub dev: Vec<String>,
}

/// Example ids per split. Ids within a split keep dataset order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub has_public_test: bool,
    pub disjoint_low: bool,
    pub low_train: Vec<Vec<String>>,
    pub low_dev: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub medium: Option<MediumSplit>,
    pub high_train: Vec<String>,
    pub high_dev: Vec<String>,
    pub test_2k: Vec<String>,
    pub test_100: Vec<String>,
    pub sizes: BTreeMap<String, usize>,
}

impl SplitManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Indices into the dataset that must travel together.
type Unit = Vec<usize>;

fn units_of(dataset: &[DatasetExample], members: &[usize]) -> Vec<Unit> {
    let mut order: Vec<Unit> = Vec::new();
    let mut by_dialogue: HashMap<&str, usize> = HashMap::new();
    for &i in members {
        let d = dataset[i].dialogue_id.as_str();
        if d.is_empty() {
            order.push(vec![i]);
            continue;
        }
        match by_dialogue.get(d) {
            Some(&u) => order[u].push(i),
            None => {
                by_dialogue.insert(d, order.len());
                order.push(vec![i]);
            }
        }
    }
    order
}

// Stream ids keep every sampling step on its own reproducible sequence.
const STREAM_DEV_CARVE: u64 = 1;
const STREAM_LOW: u64 = 2;
const STREAM_LOW_DEV: u64 = 10;
const STREAM_MEDIUM: u64 = 11;
const STREAM_DEV: u64 = 12;
const STREAM_TEST_LARGE: u64 = 13;
const STREAM_TEST_SMALL: u64 = 14;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shuffles the units and takes whole units until `target` examples are
/// reached. Returns (taken, rest), each as sorted dataset indices.
fn sample_units(units: &[Unit], target: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.shuffle(rng);
    let mut taken = Vec::new();
    let mut rest = Vec::new();
    for u in order {
        if taken.len() < target {
            taken.extend_from_slice(&units[u]);
        } else {
            rest.extend_from_slice(&units[u]);
        }
    }
    taken.sort_unstable();
    rest.sort_unstable();
    (taken, rest)
}

fn sample(dataset: &[DatasetExample], pool: &[usize], target: usize, seed: u64, stream: u64) -> Vec<usize> {
    sample_units(&units_of(dataset, pool), target, &mut rng_for(seed, stream)).0
}

fn ids(dataset: &[DatasetExample], idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| dataset[i].id.clone()).collect()
}

pub fn make_splits(dataset: &[DatasetExample], options: &SplitOptions) -> Result<SplitManifest, SplitError> {
    if dataset.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    validate_dataset(dataset)?;
    let seed = options.seed;
    let portion = |p: Portion| -> Vec<usize> { (0..dataset.len()).filter(|&i| dataset[i].portion == p).collect() };

    let (train, dev, test) = if options.has_public_test {
        (portion(Portion::Train), portion(Portion::Dev), portion(Portion::Test))
    } else {
        let released_train = portion(Portion::Train);
        let carve = (released_train.len() as f64 * 0.1).round() as usize;
        let units = units_of(dataset, &released_train);
        let (dev, train) = sample_units(&units, carve, &mut rng_for(seed, STREAM_DEV_CARVE));
        (train, dev, portion(Portion::Dev))
    };
    if train.len() < LOW_TRAIN_SIZE {
        return Err(SplitError::TrainTooSmall(train.len()));
    }
    if dev.is_empty() {
        return Err(SplitError::EmptyPool("dev"));
    }
    if test.is_empty() {
        return Err(SplitError::EmptyPool("test"));
    }

    let train_units = units_of(dataset, &train);
    let mut low = Vec::with_capacity(LOW_SPLITS);
    if options.disjoint_low && train.len() >= LOW_SPLITS * LOW_TRAIN_SIZE {
        let mut rng = rng_for(seed, STREAM_LOW);
        let mut remaining = train_units;
        for _ in 0..LOW_SPLITS {
            let (taken, rest) = sample_units(&remaining, LOW_TRAIN_SIZE, &mut rng);
            low.push(taken);
            remaining = units_of(dataset, &rest);
        }
    } else {
        for k in 0..LOW_SPLITS as u64 {
            low.push(sample_units(&train_units, LOW_TRAIN_SIZE, &mut rng_for(seed, STREAM_LOW + 1 + k)).0);
        }
    }

    let low_dev = sample(dataset, &dev, LOW_DEV_SIZE, seed, STREAM_LOW_DEV);
    let dev_500 = sample(dataset, &dev, DEV_SIZE, seed, STREAM_DEV);
    let medium = (train.len() >= MEDIUM_TRAIN_SIZE).then(|| MediumSplit {
        train: ids(
            dataset,
            &sample(dataset, &train, MEDIUM_TRAIN_SIZE, seed, STREAM_MEDIUM),
        ),
        dev: ids(dataset, &dev_500),
    });
    let test_2k = sample(dataset, &test, TEST_LARGE_SIZE, seed, STREAM_TEST_LARGE);
    let test_100 = sample(dataset, &test_2k, TEST_SMALL_SIZE, seed, STREAM_TEST_SMALL);

    let mut manifest = SplitManifest {
        seed,
        has_public_test: options.has_public_test,
        disjoint_low: options.disjoint_low,
        low_train: low.iter().map(|l| ids(dataset, l)).collect(),
        low_dev: ids(dataset, &low_dev),
        medium,
        high_train: ids(dataset, &train),
        high_dev: ids(dataset, &dev_500),
        test_2k: ids(dataset, &test_2k),
        test_100: ids(dataset, &test_100),
        sizes: BTreeMap::new(),
    };
    let mut sizes = BTreeMap::new();
    for (k, l) in manifest.low_train.iter().enumerate() {
        sizes.insert(format!("low_train_{}", k + 1), l.len());
    }
    sizes.insert("low_dev".into(), manifest.low_dev.len());
    if let Some(m) = &manifest.medium {
        sizes.insert("medium_train".into(), m.train.len());
        sizes.insert("medium_dev".into(), m.dev.len());
    }
    sizes.insert("high_train".into(), manifest.high_train.len());
    sizes.insert("high_dev".into(), manifest.high_dev.len());
    sizes.insert("test_2k".into(), manifest.test_2k.len());
    sizes.insert("test_100".into(), manifest.test_100.len());
    manifest.sizes = sizes;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Exact,
    Lispress,
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "exact" => Ok(Metric::Exact),
            "lispress" => Ok(Metric::Lispress),
            "denotation" | "test-suite" | "test_suite" | "execution" => Err(EvalError::NotSupported(s.to_owned())),
            _ => Err(EvalError::UnknownMetric(s.to_owned())),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Exact => "exact",
            Metric::Lispress => "lispress",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: String,
}

pub fn read_predictions(reader: impl BufRead) -> Result<Vec<Prediction>, SplitError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SplitError::Format {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleOutcome {
    pub id: String,
    pub correct: bool,
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub missing: usize,
    /// Predictions that are not well-formed s-expressions (lispress only).
    pub prediction_parse_failures: usize,
    pub gold_parse_failures: usize,
    pub examples: Vec<ExampleOutcome>,
}

/// Scores `predictions` against every gold example; a gold example without
/// a prediction counts as wrong.
pub fn evaluate(
    predictions: &[Prediction],
    gold: &[DatasetExample],
    metric: Metric,
) -> Result<MetricReport, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let gold_ids: HashSet<&str> = gold.iter().map(|g| g.id.as_str()).collect();
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for p in predictions {
        if !gold_ids.contains(p.id.as_str()) {
            return Err(EvalError::UnknownId(p.id.clone()));
        }
        if by_id.insert(&p.id, &p.prediction).is_some() {
            return Err(EvalError::DuplicatePrediction(p.id.clone()));
        }
    }
    let mut report = MetricReport {
        metric,
        total: gold.len(),
        correct: 0,
        accuracy: 0.0,
        missing: 0,
        prediction_parse_failures: 0,
        gold_parse_failures: 0,
        examples: Vec::with_capacity(gold.len()),
    };
    for g in gold {
        let (correct, missing) = match by_id.get(g.id.as_str()) {
            None => (false, true),
            Some(pred) => {
                let ok = match metric {
                    Metric::Exact => *pred == g.gold,
                    Metric::Lispress => match lispress_equal(pred, &g.gold) {
                        Ok(b) => b,
                        Err(MatchError::Prediction(_)) => {
                            report.prediction_parse_failures += 1;
                            false
                        }
                        Err(MatchError::Gold(_)) => {
                            report.gold_parse_failures += 1;
                            false
                        }
                    },
                };
                (ok, false)
            }
        };
        report.correct += correct as usize;
        report.missing += missing as usize;
        report.examples.push(ExampleOutcome {
            id: g.id.clone(),
            correct,
            missing,
        });
    }
    report.accuracy = report.correct as f64 / report.total as f64;
    Ok(report)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation of the three low-resource
/// accuracies.
pub fn aggregate_low(reports: &[MetricReport; 3]) -> (f64, f64) {
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    mean_std(&acc)
}

/// Slice form of [`aggregate_low`] for callers holding a `Vec`.
pub fn aggregate_low_slice(reports: &[MetricReport]) -> Result<(f64, f64), EvalError> {
    let three: &[MetricReport; 3] = reports
        .try_into()
        .map_err(|_| EvalError::LowReportCount(reports.len()))?;
    Ok(aggregate_low(three))
}
