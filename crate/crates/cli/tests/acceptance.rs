//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p tresafe-cli --test acceptance`; numeric arguments
//! after `--` restrict the run to those criteria. The process fails when any
//! criterion fails, except those listed in [`KNOWN_CONFLICTS`], whose
//! failure is still printed.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use sha2::{Digest, Sha256};

use common::*;
use tresafe::attacks::{attribute_risk_ratio, worst_case_mia, AiaSettings, Scenario};
use tresafe::dataset::generators::{generate, Regime, SyntheticSpec};
use tresafe::dataset::{reserve_holdout, Dataset, Encoding};
use tresafe::harness::{fit_vulnerability_predictor, run_grid, write_rows, ArchiveRow, Cell, SweepConfig};
use tresafe::matrix::Matrix;
use tresafe::metrics::{attacker_probability, auc, auc_null_band, confusion_metrics, fdif, pdif};
use tresafe::models::{self, loss_and_gradient, Internals, ModelKind, ModelSpec, Node, ParamMap, ParamValue, Tree};
use tresafe::safemodel::{
    approve_sentence, check_params, detect_tampering, parse_rules, request_release, snapshot, write_report, CombOp,
    LeafOp, ReleaseRequest, Rule, RuleSet, Thresholds, DENY,
};
use tresafe::seed;

/// Criteria whose failure traces to an inconsistency in the published
/// reference values rather than to the implementation.
const KNOWN_CONFLICTS: &[(u32, &str)] = &[(1, "printed row 1 (0.54) disagrees with the closed form, which gives 0.60")];

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn c1_attacker_probability() -> Outcome {
    let rows = [(0.5, 0.6, 0.4, 0.54), (0.01, 0.6, 0.4, 0.01), (0.01, 0.8, 0.2, 0.04)];
    let mut mismatches = Vec::new();
    for (a, tpr, fpr, printed) in rows {
        let p = attacker_probability(a, tpr, fpr).map_err(|e| e.to_string())?;
        let closed = a * tpr / (a * tpr + (1.0 - a) * fpr);
        ensure((p - closed).abs() < 1e-15, format!("({a},{tpr},{fpr}): {p} vs closed form {closed}"))?;
        if round2(p) != printed {
            mismatches.push(format!("({a},{tpr},{fpr}) gives {:.2}, printed {printed}", round2(p)));
        }
    }
    let mut rng = seed::rng(1);
    for _ in 0..1000 {
        let (a, t, f) = (rng.gen_range(0.001..0.999), rng.gen_range(0.001..1.0), rng.gen_range(0.001..1.0));
        let p = attacker_probability(a, t, f).map_err(|e| e.to_string())?;
        let closed = a * t / (a * t + (1.0 - a) * f);
        ensure((p - closed).abs() <= 1e-15 * closed.max(1.0), format!("closed form mismatch at ({a},{t},{f})"))?;
    }
    if mismatches.is_empty() {
        Ok("3/3 printed rows and 1000 closed-form points".into())
    } else {
        Err(format!("closed form exact on 1000 points; {}", mismatches.join("; ")))
    }
}

fn c2_null_band() -> Outcome {
    let (lo, hi) = auc_null_band(100, 100, 3.0).map_err(|e| e.to_string())?;
    ensure((lo - 0.377).abs() <= 0.005 && (hi - 0.623).abs() <= 0.005, format!("({lo:.4}, {hi:.4})"))?;
    ensure(round2(lo) == 0.38 && round2(hi) == 0.62, format!("rounds to ({:.2}, {:.2})", lo, hi))?;
    Ok(format!("({lo:.4}, {hi:.4})"))
}

/// 10 members at 1, 10 non-members at 0, 90 of each uniform on (0, 1).
fn scenario_two(seed_value: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = seed::rng(seed_value);
    let mut scores = vec![1.0; 10];
    scores.extend(vec![0.0; 10]);
    let mut labels = vec![true; 10];
    labels.extend(vec![false; 10]);
    for i in 0..180 {
        scores.push(rng.gen_range(f64::EPSILON..1.0));
        labels.push(i % 2 == 0);
    }
    (scores, labels)
}

fn c3_fdif_construction() -> Outcome {
    let mut total = 0.0;
    for s in 0..100 {
        let (scores, labels) = scenario_two(s);
        let f = fdif(&scores, &labels, 5.0).map_err(|e| e.to_string())?;
        ensure(f == 1.0, format!("seed {s}: FDIF {f}"))?;
        total += auc(&scores, &labels).map_err(|e| e.to_string())?;
    }
    let mean = total / 100.0;
    ensure((mean - 0.595).abs() <= 0.03, format!("mean AUC {mean:.4}"))?;
    Ok(format!("FDIF 1.0 on 100/100 seeds, mean AUC {mean:.4}"))
}

fn c4_confusion() -> Outcome {
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (t, p, n) in [(true, true, 8), (true, false, 2), (false, false, 9), (false, true, 1)] {
        truth.extend(std::iter::repeat(t).take(n));
        pred.extend(std::iter::repeat(p).take(n));
    }
    let r = confusion_metrics(&truth, &pred).map_err(|e| e.to_string())?;
    ensure(r.ACC == Some(0.85), format!("ACC {:?}", r.ACC))?;
    Ok("ACC = 0.85".into())
}

fn leaf(keyword: &str, operator: LeafOp, value: ParamValue) -> Rule {
    Rule::Leaf {
        keyword: keyword.into(),
        operator,
        value,
    }
}

fn golden_rules() -> Result<RuleSet, String> {
    parse_rules(&std::fs::read(RULES).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
}

fn c5_rules() -> Outcome {
    let parsed = golden_rules()?;
    let mut expected = RuleSet::default();
    expected.insert(
        "DecisionTreeClassifier",
        vec![
            leaf("min_samples_leaf", LeafOp::IsType, ParamValue::Text("int".into())),
            leaf("min_samples_leaf", LeafOp::Min, ParamValue::Int(5)),
        ],
    );
    expected.insert(
        "RandomForestClassifier",
        vec![Rule::Combinator {
            operator: CombOp::And,
            subexpr: vec![
                leaf("bootstrap", LeafOp::Equals, ParamValue::Bool(true)),
                leaf("min_samples_leaf", LeafOp::Min, ParamValue::Int(5)),
            ],
        }],
    );
    expected.insert(
        "SVC",
        vec![
            leaf("dhat", LeafOp::Min, ParamValue::Int(1000)),
            leaf("C", LeafOp::Min, ParamValue::Int(1)),
            leaf("eps", LeafOp::Min, ParamValue::Int(10)),
            leaf("gamma", LeafOp::Min, ParamValue::Real(0.1)),
        ],
    );
    ensure(parsed == expected, format!("parsed structure differs: {parsed:?}"))?;

    let tree = check_params(
        ModelKind::DecisionTree,
        &ParamMap::new().with("min_samples_leaf", ParamValue::Int(2)),
        &parsed,
    );
    ensure(!tree.passed(), "min_samples_leaf 2 passed")?;
    ensure(
        tree.adjusted_params.get("min_samples_leaf") == Some(&ParamValue::Int(5)),
        format!("adjusted to {:?}", tree.adjusted_params.get("min_samples_leaf")),
    )?;
    let forest = check_params(
        ModelKind::RandomForest,
        &ParamMap::new()
            .with("bootstrap", ParamValue::Bool(false))
            .with("min_samples_leaf", ParamValue::Int(5)),
        &parsed,
    );
    ensure(!forest.passed(), "bootstrap false passed")?;
    ensure(
        forest.adjusted_params.get("bootstrap") == Some(&ParamValue::Bool(true)),
        format!("adjusted to {:?}", forest.adjusted_params.get("bootstrap")),
    )?;
    Ok("golden structure exact; 2 -> 5, false -> true".into())
}

fn split_data(regime: Regime, n_train: usize, n_holdout: usize, seed_value: u64) -> (Dataset, Dataset) {
    let ds = generate(&SyntheticSpec::new(regime, n_train + n_holdout, seed_value)).unwrap();
    (
        ds.subset(&(0..n_train).collect::<Vec<_>>()).unwrap(),
        ds.subset(&(n_train..n_train + n_holdout).collect::<Vec<_>>()).unwrap(),
    )
}

fn fit(kind: ModelKind, params: ParamMap, seed_value: u64, train: &Dataset) -> models::TrainedModel {
    models::fit(&ModelSpec::new(kind, params, seed_value), train).unwrap()
}

fn release_request<'a>(
    bytes: &'a [u8],
    file: &'a str,
    snap: &'a tresafe::safemodel::Snapshot,
    rules: &'a RuleSet,
    train: &'a Dataset,
    holdout: &'a Dataset,
    seed_value: u64,
    n_shadow: usize,
) -> ReleaseRequest<'a> {
    ReleaseRequest {
        model_bytes: bytes,
        model_file: file,
        snapshot: snap,
        rules,
        train,
        holdout: Some(holdout),
        researcher: "acceptance",
        claimed_auc: None,
        pipeline: None,
        prior: 0.5,
        seed: seed_value,
        thresholds: Thresholds::default(),
        white_box: false,
        n_shadow,
    }
}

fn c6_report_fidelity() -> Outcome {
    let rules = golden_rules()?;
    let (train, holdout) = split_data(Regime::Separable, 600, 300, 0);
    let params = ParamMap::new()
        .with("n_estimators", ParamValue::Int(20))
        .with("bootstrap", ParamValue::Bool(true))
        .with("min_samples_leaf", ParamValue::Int(200));
    let m = fit(ModelKind::RandomForest, params, 3, &train);
    let snap = snapshot(&m, Some(&train), None);
    let bytes = m.to_json_bytes();
    let approve = request_release(&release_request(&bytes, "runs/testSaveRF.pkl", &snap, &rules, &train, &holdout, 7, 16))
        .map_err(|e| e.to_string())?
        .report;
    ensure(
        approve.recommendation == "Run file testSaveRF.pkl through next step of checking procedure",
        format!("approval recommendation {:?}", approve.recommendation),
    )?;
    ensure(approve_sentence("a/b/m.json") == "Run file m.json through next step of checking procedure", "approve sentence")?;
    // top-level keys in written order: the pretty printer indents them by two spaces
    let keys = |r: &tresafe::safemodel::ReleaseReport| -> Result<Vec<String>, String> {
        let text = String::from_utf8(write_report(r)).map_err(|e| e.to_string())?;
        serde_json::from_str::<serde_json::Value>(&text).map_err(|e| e.to_string())?;
        Ok(text
            .lines()
            .filter_map(|l| l.strip_prefix("  \""))
            .filter_map(|l| l.split_once('"').map(|(k, _)| k.to_string()))
            .collect())
    };
    let base = ["researcher", "model_type", "model_save_file", "details", "recommendation"];
    let mut want: Vec<String> = base.iter().map(|s| s.to_string()).chain(["checks".to_string()]).collect();
    ensure(keys(&approve)? == want, format!("approval keys {:?}", keys(&approve)?))?;

    let mut tampered = fit(
        ModelKind::DecisionTree,
        ParamMap::new().with("min_samples_leaf", ParamValue::Int(2)),
        0,
        &train,
    );
    let snap = snapshot(&tampered, Some(&train), None);
    tampered.params.insert("min_samples_leaf", ParamValue::Int(10));
    let sentence = "parameter min_samples_leaf changed from 2 to 10 after the model was fitted";
    let diffs = detect_tampering(&tampered, &snap);
    ensure(diffs.len() == 1 && diffs[0].message == sentence, format!("tamper differences {diffs:?}"))?;
    let bytes = tampered.to_json_bytes();
    let deny = request_release(&release_request(&bytes, "tree.json", &snap, &rules, &train, &holdout, 7, 4))
        .map_err(|e| e.to_string())?
        .report;
    ensure(deny.recommendation == DENY && DENY == "Do not allow release", "tampered model not denied")?;
    ensure(
        deny.reason.as_deref().is_some_and(|r| r.contains(sentence)),
        "tamper sentence missing from reason",
    )?;
    want.insert(5, "reason".into());
    ensure(keys(&deny)? == want, format!("denial keys {:?}", keys(&deny)?))?;
    Ok("key sets, both recommendations and the tamper sentence exact".into())
}

fn c7_instance_based() -> Outcome {
    let rules = golden_rules()?;
    let mut denied = 0;
    for (i, k) in [1i64, 5, 25].into_iter().enumerate() {
        let (train, holdout) = split_data(Regime::Noisy, 150 + 50 * i, 100, 10 + i as u64);
        let m = fit(ModelKind::Knn, ParamMap::new().with("k", ParamValue::Int(k)), 0, &train);
        let rows = m.embedded_training_rows(&train).map_err(|e| e.to_string())?.count;
        ensure(rows == train.n_rows(), format!("knn embeds {rows} of {}", train.n_rows()))?;
        let snap = snapshot(&m, Some(&train), None);
        let bytes = m.to_json_bytes();
        let r = request_release(&release_request(&bytes, "knn.json", &snap, &rules, &train, &holdout, i as u64, 4))
            .map_err(|e| e.to_string())?
            .report;
        ensure(r.recommendation == DENY, format!("knn k={k} approved"))?;
        ensure(r.checks.embedded_training_rows == Some(train.n_rows()), "report row count")?;
        denied += 1;

        let tree = fit(ModelKind::DecisionTree, ParamMap::new(), 0, &train);
        let rows = tree.embedded_training_rows(&train).map_err(|e| e.to_string())?.count;
        ensure(rows == 0, format!("decision tree embeds {rows}"))?;
    }
    Ok(format!("{denied}/3 knn releases denied; rows n_train vs 0"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn c8_overfitting() -> Outcome {
    let start = Instant::now();
    let ds = generate(&SyntheticSpec::new(Regime::Noisy, 300, 2024)).map_err(|e| e.to_string())?;
    let mut by_leaf = BTreeMap::new();
    for msl in [1i64, 20] {
        let mut aucs = Vec::new();
        for s in 0..10u64 {
            let part = reserve_holdout(&ds, 0.5, s).map_err(|e| e.to_string())?;
            let train = ds.subset(&part.research_indices).map_err(|e| e.to_string())?;
            let holdout = ds.subset(&part.holdout_indices).map_err(|e| e.to_string())?;
            let m = fit(ModelKind::DecisionTree, ParamMap::new().with("min_samples_leaf", ParamValue::Int(msl)), s, &train);
            aucs.push(worst_case_mia(&m, &train, &holdout, s).map_err(|e| e.to_string())?.metrics.AUC);
        }
        by_leaf.insert(msl, median(aucs));
    }
    let gap = by_leaf[&1] - by_leaf[&20];
    let elapsed = start.elapsed();
    ensure(gap >= 0.05, format!("median AUC {:.3} vs {:.3}", by_leaf[&1], by_leaf[&20]))?;
    ensure(elapsed <= Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "median AUC {:.3} (leaf 1) vs {:.3} (leaf 20), {:.1}s",
        by_leaf[&1],
        by_leaf[&20],
        elapsed.as_secs_f64()
    ))
}

// Evaluation sets must be large enough that AUC sampling noise sits well
// below the 0.05 margin.
const DOMINANCE_SWEEP: &str = r#"{
    "datasets": [
        {"source": "synthetic", "id": "separable", "regime": "separable", "n_rows": 5000, "seed": 1},
        {"source": "synthetic", "id": "noisy", "regime": "noisy", "n_rows": 5000, "seed": 2}
    ],
    "grids": {
        "decision_tree": {"min_samples_leaf": [1, 2, 5, 10, 20, 50, 100]},
        "random_forest": {"n_estimators": [10], "min_samples_leaf": [1, 5, 20, 50], "bootstrap": [true, false]},
        "logistic_regression": {"l2": [0.0001, 0.001, 0.01, 0.1, 1.0, 10.0, 100.0]}
    },
    "scenarios": ["worst_case", "salem1", "salem_synth", "salem2"],
    "n_repeats": 5,
    "master_seed": 9
}"#;

fn c9_worst_case_dominance() -> Outcome {
    let start = Instant::now();
    let config = SweepConfig::from_json(DOMINANCE_SWEEP.as_bytes()).map_err(|e| e.to_string())?;
    let archive = run_grid(&config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut cells: BTreeMap<usize, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in &archive.rows {
        let entry = cells.entry(r.cell_index).or_default();
        match (r.scenario, r.AUC) {
            (Scenario::WorstCase, auc) => entry.0 = auc,
            (s, Some(auc)) if s.is_salem() => entry.1 = Some(entry.1.map_or(auc, |b: f64| b.max(auc))),
            _ => {}
        }
    }
    let n_cells = cells.len();
    let compared: Vec<(f64, f64)> = cells.values().filter_map(|&(w, s)| Some((w?, s?))).collect();
    let upper_left = compared.iter().filter(|(w, s)| s - w > 0.05).count();
    let frac = upper_left as f64 / compared.len().max(1) as f64;
    let detail = format!(
        "{n_cells} cells, {} attacked, {upper_left} with Salem > worst case + 0.05 ({:.1}%), {:.0}s",
        compared.len(),
        100.0 * frac,
        elapsed.as_secs_f64()
    );
    ensure(n_cells >= 200, format!("only {n_cells} cells"))?;
    ensure(!compared.is_empty(), "no cell passed the quality gate")?;
    ensure(frac <= 0.02, detail.clone())?;
    ensure(elapsed <= Duration::from_secs(600), detail.clone())?;
    Ok(detail)
}

/// Rows are isolated by a balanced search on `x0`; each row's leaf then
/// splits on its own `band` column, so the model is confident in the row's
/// label only when queried with the row's true band.
fn memorizing_tree(train: &Dataset) -> Tree {
    let band = &train.dictionary().features.iter().find(|f| f.name == "band").unwrap().indices;
    let x0 = train.dictionary().features.iter().find(|f| f.name == "x0").unwrap().indices[0];
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    order.sort_by(|&a, &b| train.row(a)[x0].total_cmp(&train.row(b)[x0]));
    let mut nodes = Vec::new();
    build(train, &order, band, x0, &mut nodes);
    Tree { nodes }
}

fn build(train: &Dataset, rows: &[usize], band: &[usize], x0: usize, nodes: &mut Vec<Node>) -> usize {
    let at = nodes.len();
    nodes.push(Node::Leaf { counts: vec![1, 1] });
    if rows.len() == 1 {
        let r = rows[0];
        let label = train.labels()[r];
        let column = band.iter().copied().find(|&j| train.row(r)[j] == 1.0).unwrap();
        let mut own = vec![0, 0];
        own[label] = 1;
        let mut other = vec![0, 0];
        other[1 - label] = 1;
        let left = nodes.len();
        nodes.push(Node::Leaf { counts: other });
        nodes.push(Node::Leaf { counts: own });
        nodes[at] = Node::Split {
            feature: column,
            threshold: 0.5,
            left,
            right: left + 1,
        };
        return at;
    }
    let mid = rows.len() / 2;
    let threshold = (train.row(rows[mid - 1])[x0] + train.row(rows[mid])[x0]) / 2.0;
    let left = build(train, &rows[..mid], band, x0, nodes);
    let right = build(train, &rows[mid..], band, x0, nodes);
    nodes[at] = Node::Split {
        feature: x0,
        threshold,
        left,
        right,
    };
    at
}

/// Fraction of records whose true band is the unique most confident guess.
fn brute_force_band_rate(model: &models::TrainedModel, records: &Dataset) -> f64 {
    let band = &records.dictionary().features.iter().find(|f| f.name == "band").unwrap().indices;
    let mut hits = 0;
    for i in 0..records.n_rows() {
        let truth = band.iter().position(|&j| records.row(i)[j] == 1.0).unwrap();
        let confs: Vec<f64> = (0..band.len())
            .map(|c| {
                let mut q = records.row(i).to_vec();
                for (k, &j) in band.iter().enumerate() {
                    q[j] = f64::from(u8::from(k == c));
                }
                let p = model.predict_proba(&Matrix::from_rows(&[q]).unwrap()).unwrap();
                p.row(0)[records.labels()[i]]
            })
            .collect();
        let best = confs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = (0..confs.len()).filter(|&c| confs[c] == best).collect();
        if winners == [truth] {
            hits += 1;
        }
    }
    hits as f64 / records.n_rows() as f64
}

fn c10_arr() -> Outcome {
    let (train, test) = split_data(Regime::Noisy, 200, 200, 77);
    let mut m = fit(ModelKind::DecisionTree, ParamMap::new(), 0, &train);
    m.internals = Internals::DecisionTree(memorizing_tree(&train));
    let r = attribute_risk_ratio(&m, &train, &test, &AiaSettings::new("band")).map_err(|e| e.to_string())?;
    let (p_train, p_test) = (brute_force_band_rate(&m, &train), brute_force_band_rate(&m, &test));
    ensure(
        r.p_vulnerable_train == p_train && r.p_vulnerable_test == p_test,
        format!("rates ({}, {}) vs oracle ({p_train}, {p_test})", r.p_vulnerable_train, r.p_vulnerable_test),
    )?;
    ensure((r.ARR - p_train / p_test).abs() < 1e-12, format!("ARR {} vs oracle {}", r.ARR, p_train / p_test))?;
    ensure(r.ARR > 1.0, format!("memorizing ARR {}", r.ARR))?;

    let mut constant = m.clone();
    constant.internals = Internals::DecisionTree(Tree {
        nodes: vec![Node::Leaf { counts: vec![3, 5] }],
    });
    let mut constant_arrs = Vec::new();
    for f in &train.dictionary().features {
        let r = attribute_risk_ratio(&constant, &train, &test, &AiaSettings::new(&f.name)).map_err(|e| e.to_string())?;
        ensure(
            r.ARR == 0.0 || (0.8..=1.25).contains(&r.ARR),
            format!("constant model ARR {} on {}", r.ARR, f.name),
        )?;
        constant_arrs.push(r.ARR);
    }
    let onehot = train.dictionary().features.iter().filter(|f| f.encoding == Encoding::Onehot).count();
    Ok(format!(
        "memorizing ARR {:.3} = oracle {p_train:.3}/{p_test:.3}; constant ARRs {constant_arrs:?} over {} features ({onehot} categorical)",
        r.ARR,
        constant_arrs.len()
    ))
}

fn meta_archive(n: usize, flip: f64, seed_value: u64) -> Vec<ArchiveRow> {
    let mut rng = seed::rng(seed_value);
    (0..n)
        .map(|i| {
            let msl = [1i64, 2, 3, 5, 10, 20, 50, 100][i % 8];
            let n_est = [10i64, 50][i / 8 % 2];
            let kind = if i % 3 == 0 { ModelKind::RandomForest } else { ModelKind::DecisionTree };
            let mut params = ParamMap::new().with("min_samples_leaf", ParamValue::Int(msl));
            if kind == ModelKind::RandomForest {
                params.insert("n_estimators", ParamValue::Int(n_est));
            }
            let cell = Cell {
                index: i,
                dataset: "desk".into(),
                kind,
                params,
                repeat_id: 0,
                seed: 0,
            };
            let mut r = ArchiveRow::blank(&cell, Scenario::WorstCase);
            let truth = msl < 5;
            r.vulnerable_mia = Some(if rng.gen_bool(flip) { !truth } else { truth });
            r
        })
        .collect()
}

fn c11_meta_predictor() -> Outcome {
    let clean = fit_vulnerability_predictor(&meta_archive(200, 0.0, 1), 5).map_err(|e| e.to_string())?;
    ensure(clean.vulnerable_recall == 1.0, format!("separable recall {}", clean.vulnerable_recall))?;
    let noisy = fit_vulnerability_predictor(&meta_archive(400, 0.2, 2), 5).map_err(|e| e.to_string())?;
    ensure(
        noisy.vulnerable_recall >= noisy.majority_baseline_recall,
        format!("noisy recall {} below baseline {}", noisy.vulnerable_recall, noisy.majority_baseline_recall),
    )?;
    Ok(format!(
        "separable recall {:.2}; noisy recall {:.2} vs baseline {:.2}",
        clean.vulnerable_recall, noisy.vulnerable_recall, noisy.majority_baseline_recall
    ))
}

fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    num / den
}

fn enumerated_pdif(scores: &[f64], labels: &[bool], pct: f64) -> f64 {
    let observed = fdif(scores, labels, pct).unwrap();
    let n = labels.len();
    let k = labels.iter().filter(|&&l| l).count();
    let (mut hit, mut total) = (0u32, 0u32);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let perm: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        total += 1;
        if fdif(scores, &perm, pct).unwrap() >= observed - 1e-12 {
            hit += 1;
        }
    }
    f64::from(hit) / f64::from(total)
}

fn c12_metric_oracles() -> Outcome {
    let mut rng = seed::rng(12);
    for t in 0..50 {
        let n = rng.gen_range(2..=200);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..20u8)) / 20.0).collect();
        let a = auc(&scores, &labels).map_err(|e| e.to_string())?;
        let b = pair_count_auc(&scores, &labels);
        ensure((a - b).abs() < 1e-12, format!("instance {t}: AUC {a} vs pair count {b}"))?;
    }
    let mut worst_pdif: f64 = 0.0;
    for t in 0..8u64 {
        let n = rng.gen_range(6..=10);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[n - 1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let pct = [10.0, 20.0, 30.0][t as usize % 3];
        let exact = enumerated_pdif(&scores, &labels, pct);
        let p = pdif(&scores, &labels, pct, 20_000, t).map_err(|e| e.to_string())?;
        worst_pdif = worst_pdif.max((p - exact).abs());
        ensure((p - exact).abs() <= 0.02, format!("instance {t}: PDIF {p} vs exact {exact}"))?;
    }
    let mut worst_grad: f64 = 0.0;
    for t in 0..5 {
        let (n, d, k) = (rng.gen_range(3..12), rng.gen_range(1..4), rng.gen_range(2..4));
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let x = Matrix::from_rows(&rows).map_err(|e| e.to_string())?;
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let w: Vec<f64> = (0..d * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l2 = 0.05;
        let (_, gw, gb) = loss_and_gradient(&w, &b, &x, &y, l2);
        let h = 1e-6;
        let loss = |w: &[f64], b: &[f64]| loss_and_gradient(w, b, &x, &y, l2).0;
        let rel = |fd: f64, g: f64| (fd - g).abs() / g.abs().max(1e-2);
        for j in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[j] += h;
            wm[j] -= h;
            let e = rel((loss(&wp, &b) - loss(&wm, &b)) / (2.0 * h), gw[j]);
            worst_grad = worst_grad.max(e);
        }
        for j in 0..b.len() {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[j] += h;
            bm[j] -= h;
            let e = rel((loss(&w, &bp) - loss(&w, &bm)) / (2.0 * h), gb[j]);
            worst_grad = worst_grad.max(e);
        }
        ensure(worst_grad <= 1e-5, format!("instance {t}: gradient relative error {worst_grad:e}"))?;
    }
    Ok(format!(
        "50 AUC instances exact; PDIF max error {worst_pdif:.4}; gradient max relative error {worst_grad:.1e}"
    ))
}

fn hash_tree(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&path).unwrap())));
            }
        }
    }
    out
}

/// Every subcommand, writing under `out`; returns the exit codes in order.
fn cli_pipeline(inputs: &Path, d: &DataFiles, out: &Path) -> Vec<(String, i32)> {
    let o = |name: &str| out.join(name);
    let model = o("tree.json");
    let svc = o("svc.json");
    let mut runs: Vec<(String, Vec<String>)> = vec![
        ("split".into(), vec!["split", "--data", p(&d.all), "--dict", p(&d.dict), "--seed", "3", "--out", p(&o("split"))]
            .into_iter().map(String::from).collect()),
        ("train".into(), vec!["train", "--config", p(&inputs.join("tree.spec.json")), "--train", p(&d.train), "--dict", p(&d.dict), "--seed", "4", "--out", p(&model)]
            .into_iter().map(String::from).collect()),
        ("train dp_svc".into(), vec!["train", "--config", p(&inputs.join("svc.spec.json")), "--train", p(&d.train), "--dict", p(&d.dict), "--seed", "4", "--out", p(&svc)]
            .into_iter().map(String::from).collect()),
        ("check-params".into(), vec!["check-params", "--rules", RULES, "--config", p(&inputs.join("tree.spec.json")), "--out", p(&o("check.json"))]
            .into_iter().map(String::from).collect()),
    ];
    for scenario in ["worst_case", "salem1", "salem_synth", "salem2", "lira", "aia"] {
        let mut args: Vec<String> = vec![
            "attack", "--model", p(&model), "--train", p(&d.train), "--holdout", p(&d.holdout), "--dict", p(&d.dict),
            "--scenario", scenario, "--seed", "5", "--n-shadow", "4", "--out",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        args.push(p(&o(&format!("attack-{scenario}.json"))).into());
        if scenario.starts_with("salem") && scenario != "salem_synth" {
            args.extend(["--shadow".to_string(), p(&d.holdout).to_string()]);
        }
        runs.push((format!("attack {scenario}"), args));
    }
    for (name, m) in [("release", &model), ("release dp_svc", &svc)] {
        let report = o(&format!("{}.report.json", name.replace(' ', "-")));
        runs.push((
            name.into(),
            vec![
                "release", "--model", p(m), "--rules", RULES, "--train", p(&d.train), "--holdout", p(&d.holdout),
                "--dict", p(&d.dict), "--researcher", "r", "--seed", "6", "--n-shadow", "4", "--out", p(&report),
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ));
    }
    let sweep = o("sweep");
    runs.push((
        "sweep".into(),
        vec!["sweep", "--config", p(&inputs.join("sweep.json")), "--out", p(&sweep), "--seed", "7"]
            .into_iter().map(String::from).collect(),
    ));
    runs.push((
        "compare".into(),
        vec!["compare", "--archive", p(&sweep.join("archive.csv")), "--out", p(&o("compare.json"))]
            .into_iter().map(String::from).collect(),
    ));
    runs.push((
        "predict-vuln".into(),
        vec!["predict-vuln", "--archive", p(&inputs.join("meta.csv")), "--seed", "8", "--out", p(&o("predict.json"))]
            .into_iter().map(String::from).collect(),
    ));
    runs.into_iter()
        .map(|(name, args)| {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            (name, run(&refs))
        })
        .collect()
}

fn c13_cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let inputs = dir.path().join("inputs");
    std::fs::create_dir_all(&inputs).map_err(|e| e.to_string())?;
    let d = write_data(&inputs, Regime::Noisy, 200, 100, 13);
    write_spec(&inputs.join("tree.spec.json"), r#"{"kind":"decision_tree","params":{"min_samples_leaf":2}}"#);
    write_spec(&inputs.join("svc.spec.json"), r#"{"kind":"dp_svc","params":{"dhat":1000,"eps":10.0}}"#);
    std::fs::write(
        inputs.join("sweep.json"),
        r#"{"datasets":[{"source":"synthetic","id":"s","regime":"separable","n_rows":150,"seed":1}],
            "grids":{"decision_tree":{"min_samples_leaf":[1,20]},"random_forest":{"n_estimators":[5]}},
            "scenarios":["worst_case","salem1","salem2"],"n_repeats":2,"master_seed":0,"aia":true}"#,
    )
    .map_err(|e| e.to_string())?;
    std::fs::write(inputs.join("meta.csv"), write_rows(&meta_archive(80, 0.0, 3)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;

    let out = dir.path().join("out");
    let first_codes = cli_pipeline(&inputs, &d, &out);
    let first = hash_tree(&out);
    std::fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
    let second_codes = cli_pipeline(&inputs, &d, &out);
    let second = hash_tree(&out);

    let broken: Vec<String> = first_codes
        .iter()
        .filter(|(name, code)| *code == 1 || *code == 3 || (*code == 2 && !name.starts_with("release") && name != "check-params"))
        .map(|(name, code)| format!("{name} exited {code}"))
        .collect();
    ensure(broken.is_empty(), broken.join(", "))?;
    ensure(first_codes == second_codes, "exit codes differ between runs")?;
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    ensure(first.keys().eq(second.keys()), "different file sets")?;
    ensure(differing.is_empty(), format!("differing outputs: {differing:?}"))?;
    Ok(format!("{} subcommand runs, {} output files byte-identical", first_codes.len(), first.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 13] = [
        (1, "attacker probability table and closed form", c1_attacker_probability),
        (2, "AUC null band", c2_null_band),
        (3, "FDIF construction and mean AUC", c3_fdif_construction),
        (4, "confusion metrics accuracy", c4_confusion),
        (5, "golden rules and parameter adjustment", c5_rules),
        (6, "release report fidelity", c6_report_fidelity),
        (7, "instance-based models denied", c7_instance_based),
        (8, "overfitting sensitivity", c8_overfitting),
        (9, "worst-case dominance sweep", c9_worst_case_dominance),
        (10, "attribute risk ratio", c10_arr),
        (11, "vulnerability meta-predictor", c11_meta_predictor),
        (12, "metric oracles", c12_metric_oracles),
        (13, "CLI determinism", c13_cli_determinism),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => match KNOWN_CONFLICTS.iter().find(|(k, _)| *k == id) {
                Some((_, why)) => println!("FAIL criterion {id:>2} {name}: {detail} (known conflict: {why}) [{secs:.1}s]"),
                None => {
                    unexpected += 1;
                    println!("FAIL criterion {id:>2} {name}: {detail} [{secs:.1}s]");
                }
            },
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
