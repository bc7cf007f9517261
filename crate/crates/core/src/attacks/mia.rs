use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DataDictionary, Dataset, Encoding, FeatureSpec, TargetSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{MetricOptions, MetricSet};
use crate::models::{self, ModelKind, ModelSpec, ParamMap, ParamValue, TrainedModel};
use crate::seed::{self, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    WorstCase,
    Salem1,
    SalemSynth,
    Salem2,
    Lira,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::WorstCase,
        Scenario::Salem1,
        Scenario::SalemSynth,
        Scenario::Salem2,
        Scenario::Lira,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::WorstCase => "worst_case",
            Scenario::Salem1 => "salem1",
            Scenario::SalemSynth => "salem_synth",
            Scenario::Salem2 => "salem2",
            Scenario::Lira => "lira",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|s| s.as_str() == name)
            .ok_or_else(|| Error::Argument(format!("unknown scenario '{name}'")))
    }

    pub fn is_salem(self) -> bool {
        matches!(self, Scenario::Salem1 | Scenario::SalemSynth | Scenario::Salem2)
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub row_id: String,
    pub score: f64,
    pub member: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaSeeds {
    pub seed: u64,
    pub split_seed: u64,
    pub attack_seed: u64,
    pub shadow_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    pub scenario: Scenario,
    pub attack_model_spec: ModelSpec,
    pub metrics: MetricSet,
    pub per_record_scores: Vec<RecordScore>,
    pub seeds: MiaSeeds,
    pub shadow_note: String,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl MiaReport {
    /// True when the metric set is exactly what its per-record scores give.
    pub fn audit(&self) -> Result<bool> {
        let (scores, labels) = self.scores_and_labels();
        Ok(self.metrics.recompute(&scores, &labels)? == self.metrics)
    }

    pub fn scores_and_labels(&self) -> (Vec<f64>, Vec<bool>) {
        self.per_record_scores
            .iter()
            .map(|r| (r.score, r.member))
            .unzip()
    }
}

/// The attack classifier: a default random forest.
pub fn attack_model_spec(seed_value: u64) -> ModelSpec {
    let params = ParamMap::new()
        .with("n_estimators", ParamValue::Int(100))
        .with("min_samples_leaf", ParamValue::Int(1))
        .with("bootstrap", ParamValue::Bool(true));
    ModelSpec::new(ModelKind::RandomForest, params, seed_value)
}

/// Per-row probability vector sorted descending, followed by the
/// probability given to the row's true label.
fn attack_features(model: &TrainedModel, ds: &Dataset) -> Result<Matrix> {
    let p = model.predict_proba(ds.matrix())?;
    let k = p.cols();
    let mut out = Matrix::zeros(p.rows(), k + 1);
    for i in 0..p.rows() {
        let row = out.row_mut(i);
        row[..k].copy_from_slice(p.row(i));
        row[..k].sort_by(|a, b| b.total_cmp(a));
        row[k] = p.get(i, ds.labels()[i]);
    }
    Ok(out)
}

fn attack_dataset(features: Matrix, members: Vec<usize>, ids: Vec<String>) -> Result<Dataset> {
    let dict = DataDictionary {
        features: (0..features.cols())
            .map(|j| FeatureSpec {
                name: format!("p{j}"),
                indices: vec![j],
                encoding: Encoding::Float64,
            })
            .collect(),
        target: TargetSpec {
            name: "member".into(),
            classes: vec!["0".into(), "1".into()],
        },
    };
    Dataset::new(features, members, ids, dict)
}

struct Labelled {
    features: Matrix,
    members: Vec<usize>,
    ids: Vec<String>,
}

impl Labelled {
    fn build(model: &TrainedModel, members: &Dataset, non_members: &Dataset, prefix: (&str, &str)) -> Result<Self> {
        let features = attack_features(model, members)?.vstack(&attack_features(model, non_members)?)?;
        let mut labels = vec![1; members.n_rows()];
        labels.extend(vec![0; non_members.n_rows()]);
        let ids = (0..members.n_rows())
            .map(|i| format!("{}:{i}", prefix.0))
            .chain((0..non_members.n_rows()).map(|i| format!("{}:{i}", prefix.1)))
            .collect();
        Ok(Labelled {
            features,
            members: labels,
            ids,
        })
    }

    fn select(&self, idx: &[usize]) -> Result<Dataset> {
        attack_dataset(
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.members[i]).collect(),
            idx.iter().map(|&i| self.ids[i].clone()).collect(),
        )
    }

    fn all(&self) -> Result<Dataset> {
        let idx: Vec<usize> = (0..self.members.len()).collect();
        self.select(&idx)
    }
}

/// Splits row indices in half within each class, shuffled by `seed_value`.
fn stratified_halves(labels: &[usize], seed_value: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = seed::rng(seed_value);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for class in [1, 0] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::Argument(format!(
                "need at least 2 rows per membership class, got {}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let half = idx.len() / 2;
        a.extend_from_slice(&idx[..half]);
        b.extend_from_slice(&idx[half..]);
    }
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

fn score_rows(attack: &TrainedModel, eval: &Dataset) -> Result<Vec<RecordScore>> {
    let p = attack.predict_proba(eval.matrix())?;
    Ok((0..eval.n_rows())
        .map(|i| RecordScore {
            row_id: eval.group_ids()[i].clone(),
            score: p.get(i, 1),
            member: eval.labels()[i] == 1,
        })
        .collect())
}

fn finish(
    scenario: Scenario,
    attack_spec: ModelSpec,
    mut per_record_scores: Vec<RecordScore>,
    seeds: MiaSeeds,
    shadow_note: String,
    flags: Vec<String>,
) -> Result<MiaReport> {
    // Rows arrive grouped by membership; tail ties are broken by input order,
    // so the order must carry no membership information.
    per_record_scores.shuffle(&mut seed::rng(derive_seed(seeds.seed, 5)));
    let (scores, labels): (Vec<f64>, Vec<bool>) =
        per_record_scores.iter().map(|r| (r.score, r.member)).unzip();
    let metrics = MetricSet::from_scores(&scores, &labels, &MetricOptions::new(derive_seed(seeds.seed, 3)))?;
    Ok(MiaReport {
        scenario,
        attack_model_spec: attack_spec,
        metrics,
        per_record_scores,
        seeds,
        shadow_note,
        flags,
    })
}

/// The attacker knows which rows were used for training: an attack
/// classifier is fitted on half of the labelled target outputs and scored on
/// the other half.
pub fn worst_case_mia(model: &TrainedModel, train: &Dataset, holdout: &Dataset, seed_value: u64) -> Result<MiaReport> {
    if train.shares_groups_with(holdout) {
        return Err(Error::Leakage(
            "holdout shares individuals with the training data".into(),
        ));
    }
    let labelled = Labelled::build(model, train, holdout, ("train", "holdout"))?;
    let split_seed = derive_seed(seed_value, 1);
    let attack_seed = derive_seed(seed_value, 2);
    let (fit_idx, eval_idx) = stratified_halves(&labelled.members, split_seed)?;
    let spec = attack_model_spec(attack_seed);
    let attack = models::fit(&spec, &labelled.select(&fit_idx)?)?;
    let scores = score_rows(&attack, &labelled.select(&eval_idx)?)?;
    finish(
        Scenario::WorstCase,
        spec,
        scores,
        MiaSeeds {
            seed: seed_value,
            split_seed,
            attack_seed,
            shadow_seed: None,
        },
        "no shadow model: attack trained on target outputs with true membership".into(),
        Vec::new(),
    )
}

/// Brings `shadow` to the target's column layout, matching columns by name
/// when the widths differ.
fn reconcile_width(shadow: &Dataset, target_dict: &DataDictionary) -> Result<Dataset> {
    if shadow.width() == target_dict.width() {
        return Ok(shadow.clone());
    }
    let names = shadow.dictionary().column_names();
    let cols: Option<Vec<usize>> = target_dict
        .column_names()
        .iter()
        .map(|c| names.iter().position(|n| n == c))
        .collect();
    let cols = cols.ok_or_else(|| {
        Error::Data(format!(
            "shadow data has {} columns and cannot be mapped onto the target's {}",
            shadow.width(),
            target_dict.width()
        ))
    })?;
    let mut m = Matrix::zeros(shadow.n_rows(), cols.len());
    for i in 0..shadow.n_rows() {
        for (k, &j) in cols.iter().enumerate() {
            m.set(i, k, shadow.matrix().get(i, j));
        }
    }
    let dict = DataDictionary {
        features: target_dict.features.clone(),
        target: shadow.dictionary().target.clone(),
    };
    Dataset::new(m, shadow.labels().to_vec(), shadow.group_ids().to_vec(), dict)
}

/// Shadow-model attack: a model of the target's kind is fitted on half of
/// `shadow_data`, an attack classifier learns its member/non-member outputs
/// and is then applied to the target's outputs on `members` and
/// `non_members`.
pub fn salem_mia(
    variant: Scenario,
    spec: &ModelSpec,
    target: &TrainedModel,
    shadow_data: &Dataset,
    members: &Dataset,
    non_members: &Dataset,
    seed_value: u64,
) -> Result<MiaReport> {
    if !variant.is_salem() {
        return Err(Error::Argument(format!("{variant} is not a shadow-model scenario")));
    }
    if shadow_data.n_classes() != target.n_classes {
        return Err(Error::Data(format!(
            "shadow data has {} classes, target has {}",
            shadow_data.n_classes(),
            target.n_classes
        )));
    }
    if shadow_data.n_rows() < 4 {
        return Err(Error::Argument("shadow data too small to split in half".into()));
    }
    let shadow_data = reconcile_width(shadow_data, members.dictionary())?;
    let split_seed = derive_seed(seed_value, 1);
    let attack_seed = derive_seed(seed_value, 2);
    let shadow_seed = derive_seed(seed_value, 4);
    let (in_idx, out_idx) = stratified_halves(shadow_data.labels(), split_seed)
        .or_else(|_| plain_halves(shadow_data.n_rows(), split_seed))?;
    let shadow_in = shadow_data.subset(&in_idx)?;
    let shadow_out = shadow_data.subset(&out_idx)?;
    let shadow_spec = ModelSpec::new(spec.kind, spec.params.clone(), shadow_seed);
    let shadow_model = models::fit(&shadow_spec, &shadow_in)?;

    let fit_set = Labelled::build(&shadow_model, &shadow_in, &shadow_out, ("shadow_in", "shadow_out"))?;
    let attack_spec = attack_model_spec(attack_seed);
    let attack = models::fit(&attack_spec, &fit_set.all()?)?;
    let eval = Labelled::build(target, members, non_members, ("train", "test"))?;
    let scores = score_rows(&attack, &eval.all()?)?;
    let note = match variant {
        Scenario::Salem1 => "shadow data: held-out split of the target's own data",
        Scenario::SalemSynth => "shadow data: synthesized from per-feature marginals",
        _ => "shadow data: unrelated dataset with the same number of classes",
    };
    finish(
        variant,
        attack_spec,
        scores,
        MiaSeeds {
            seed: seed_value,
            split_seed,
            attack_seed,
            shadow_seed: Some(shadow_seed),
        },
        note.into(),
        Vec::new(),
    )
}

fn plain_halves(n: usize, seed_value: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed_value));
    let (a, b) = idx.split_at(n / 2);
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

fn logit_confidence(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Simplified offline likelihood-ratio attack. Half of `population` trains
/// `n_shadow` reference models; the other half serves as evaluated
/// non-members alongside `train`.
pub fn lira_mia(
    spec: &ModelSpec,
    target: &TrainedModel,
    train: &Dataset,
    population: &Dataset,
    n_shadow: usize,
    seed_value: u64,
) -> Result<MiaReport> {
    if n_shadow < 4 {
        return Err(Error::Argument(format!("n_shadow must be at least 4, got {n_shadow}")));
    }
    if train.shares_groups_with(population) {
        return Err(Error::Leakage("population shares individuals with the training data".into()));
    }
    if population.n_rows() < 4 {
        return Err(Error::Argument("population too small".into()));
    }
    let split_seed = derive_seed(seed_value, 1);
    let shadow_seed = derive_seed(seed_value, 4);
    let (pool_idx, eval_idx) = plain_halves(population.n_rows(), split_seed)?;
    let pool = population.subset(&pool_idx)?;
    let non_members = population.subset(&eval_idx)?;

    let evaluated: Vec<String> = (0..train.n_rows())
        .map(|i| format!("train:{i}"))
        .chain((0..non_members.n_rows()).map(|i| format!("population:{i}")))
        .collect();
    let eval_matrix = train.matrix().vstack(non_members.matrix())?;
    let eval_labels: Vec<usize> = train.labels().iter().chain(non_members.labels()).copied().collect();

    let mut shadow_logits = vec![Vec::with_capacity(n_shadow); evaluated.len()];
    for s in 0..n_shadow {
        let sub_seed = derive_seed(shadow_seed, s as u64);
        // Reference models see as many rows as the target so size-dependent
        // hyperparameters behave alike.
        let mut rng = seed::rng(sub_seed);
        let mut idx: Vec<usize> = (0..train.n_rows()).map(|_| rng.gen_range(0..pool.n_rows())).collect();
        idx.sort_unstable();
        let shadow_train = pool.subset(&idx)?;
        let shadow = models::fit(&ModelSpec::new(spec.kind, spec.params.clone(), sub_seed), &shadow_train)
            .map_err(|e| Error::Training(format!("shadow model {s}: {e}")))?;
        let p = shadow.predict_proba(&eval_matrix)?;
        for (i, logits) in shadow_logits.iter_mut().enumerate() {
            logits.push(logit_confidence(p.get(i, eval_labels[i])));
        }
    }

    let target_p = target.predict_proba(&eval_matrix)?;
    let mut fallback = 0usize;
    let scores = evaluated
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let obs = logit_confidence(target_p.get(i, eval_labels[i]));
            let xs = &shadow_logits[i];
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let score = if var > 1e-12 {
                normal_cdf((obs - mean) / var.sqrt())
            } else {
                fallback += 1;
                let below = xs.iter().filter(|&&x| x < obs).count() as f64;
                let equal = xs.iter().filter(|&&x| x == obs).count() as f64;
                (below + 0.5 * equal) / n
            };
            RecordScore {
                row_id: id.clone(),
                score,
                member: i < train.n_rows(),
            }
        })
        .collect();
    let mut flags = Vec::new();
    if fallback > 0 {
        flags.push(format!("rank_fallback_rows={fallback}"));
    }
    finish(
        Scenario::Lira,
        spec.clone(),
        scores,
        MiaSeeds {
            seed: seed_value,
            split_seed,
            attack_seed: shadow_seed,
            shadow_seed: Some(shadow_seed),
        },
        format!(
            "simplified offline likelihood ratio: {n_shadow} reference models on training-size bootstrap resamples of half the population, out-distribution only"
        ),
        flags,
    )
}
