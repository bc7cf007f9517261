use super::*;
use crate::dataset::generators::{generate, Regime, SyntheticSpec};
use crate::dataset::Dataset;
use crate::models::{self, Internals, ModelKind, ModelSpec, Node, ParamMap, ParamValue, TrainedModel};
use crate::Error;
use proptest::prelude::*;

const GOLDEN: &[u8] = include_bytes!("../../tests/fixtures/rules.json");

fn golden() -> RuleSet {
    parse_rules(GOLDEN).unwrap()
}

fn leaf(keyword: &str, operator: LeafOp, value: ParamValue) -> Rule {
    Rule::Leaf {
        keyword: keyword.into(),
        operator,
        value,
    }
}

#[test]
fn golden_rules_have_the_documented_structure() {
    let set = golden();
    assert_eq!(
        set.rules_for(ModelKind::DecisionTree).unwrap(),
        &[
            leaf("min_samples_leaf", LeafOp::IsType, ParamValue::Text("int".into())),
            leaf("min_samples_leaf", LeafOp::Min, ParamValue::Int(5)),
        ]
    );
    assert_eq!(
        set.rules_for(ModelKind::RandomForest).unwrap(),
        &[Rule::Combinator {
            operator: CombOp::And,
            subexpr: vec![
                leaf("bootstrap", LeafOp::Equals, ParamValue::Bool(true)),
                leaf("min_samples_leaf", LeafOp::Min, ParamValue::Int(5)),
            ],
        }]
    );
    let svc = set.rules_for(ModelKind::DpSvc).unwrap();
    assert_eq!(svc.len(), 4);
    assert_eq!(svc[3], leaf("gamma", LeafOp::Min, ParamValue::Real(0.1)));
    assert!(set.rules_for(ModelKind::Knn).is_none());
}

#[test]
fn rule_parse_errors() {
    assert!(parse_rules(b"{}").unwrap().is_empty());
    let unknown = br#"{"SVC": {"rules": [{"keyword": "C", "operator": "between", "value": 1}]}}"#;
    assert!(matches!(parse_rules(unknown), Err(Error::Schema(_))));
    assert!(matches!(parse_rules(b"{\"SVC\": "), Err(Error::Parse(_))));
    let dup = br#"{"SVC": {"rules": []}, "dp_svc": {"rules": []}}"#;
    assert!(matches!(parse_rules(dup), Err(Error::Schema(_))));
    let same = br#"{"SVC": {"rules": []}, "SVC": {"rules": []}}"#;
    assert!(matches!(parse_rules(same), Err(Error::Schema(_))));
    let bad_type = br#"{"SVC": {"rules": [{"keyword": "C", "operator": "is_type", "value": "double"}]}}"#;
    assert!(matches!(parse_rules(bad_type), Err(Error::Schema(_))));
    let bad_min = br#"{"SVC": {"rules": [{"keyword": "C", "operator": "min", "value": "big"}]}}"#;
    assert!(matches!(parse_rules(bad_min), Err(Error::Schema(_))));
}

#[test]
fn min_violation_is_adjusted() {
    let params = ParamMap::new().with("min_samples_leaf", ParamValue::Int(2));
    let r = check_params(ModelKind::DecisionTree, &params, &golden());
    assert_eq!(r.violations.len(), 1);
    assert_eq!(
        r.violations[0].message,
        "- parameter min_samples_leaf = 2 identified as less than the recommended min value of 5."
    );
    assert_eq!(r.adjusted_params.get("min_samples_leaf"), Some(&ParamValue::Int(5)));
    assert!(check_params(ModelKind::DecisionTree, &r.adjusted_params, &golden()).passed());
}

#[test]
fn equals_violation_is_adjusted() {
    let params = ParamMap::new()
        .with("bootstrap", ParamValue::Bool(false))
        .with("min_samples_leaf", ParamValue::Int(5));
    let r = check_params(ModelKind::RandomForest, &params, &golden());
    assert_eq!(r.adjusted_params.get("bootstrap"), Some(&ParamValue::Bool(true)));
    assert_eq!(
        r.details(),
        "WARNING: model parameters may present a disclosure risk:\n- parameter bootstrap = False identified as different than the recommended fixed value of True."
    );
}

#[test]
fn boundary_value_and_missing_kind() {
    let params = ParamMap::new().with("min_samples_leaf", ParamValue::Int(5));
    let r = check_params(ModelKind::DecisionTree, &params, &golden());
    assert!(r.passed());
    assert_eq!(r.details(), "Model parameters are within recommended ranges.\n");
    let r = check_params(ModelKind::Knn, &ParamMap::new(), &golden());
    assert_eq!(r.violations.len(), 1);
    assert!(r.violations[0].message.contains("no rules defined for model kind"));
}

#[test]
fn type_violations_are_not_fixed() {
    let params = ParamMap::new().with("min_samples_leaf", ParamValue::Real(7.0));
    let r = check_params(ModelKind::DecisionTree, &params, &golden());
    assert_eq!(r.violations.len(), 1);
    assert!(r.violations[0].message.contains("different type to recommendation of int"));
    assert_eq!(r.adjusted_params, params);
}

fn arb_value() -> impl Strategy<Value = ParamValue> {
    prop_oneof![
        any::<bool>().prop_map(ParamValue::Bool),
        (-3i64..8).prop_map(ParamValue::Int),
        (-3.0f64..8.0).prop_map(|v| ParamValue::Real((v * 4.0).round() / 4.0)),
        prop::sample::select(vec!["int", "float", "bool", "str"]).prop_map(|s| ParamValue::Text(s.into())),
    ]
}

fn arb_leaf() -> impl Strategy<Value = Rule> {
    let keys = prop::sample::select(vec!["a", "b", "c"]);
    (keys, 0..4u8, arb_value()).prop_map(|(k, op, v)| {
        let (operator, value) = match op {
            0 => (LeafOp::Min, ParamValue::Int(v.as_f64().map_or(1, |x| x as i64))),
            1 => (LeafOp::Max, ParamValue::Real(v.as_f64().unwrap_or(2.0))),
            2 => (LeafOp::Equals, v),
            _ => (
                LeafOp::IsType,
                ParamValue::Text(match v {
                    ParamValue::Text(t) => t,
                    other => other.type_name().into(),
                }),
            ),
        };
        leaf(k, operator, value)
    })
}

fn arb_rule() -> impl Strategy<Value = Rule> {
    arb_leaf().prop_recursive(4, 24, 3, |inner| {
        (any::<bool>(), prop::collection::vec(inner, 1..4)).prop_map(|(and, subexpr)| Rule::Combinator {
            operator: if and { CombOp::And } else { CombOp::Or },
            subexpr,
        })
    })
}

fn arb_params() -> impl Strategy<Value = ParamMap> {
    prop::collection::btree_map(prop::sample::select(vec!["a", "b", "c"]), arb_value(), 0..4)
        .prop_map(|m| m.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

/// Independent restatement of the rule semantics.
fn oracle(rule: &Rule, params: &ParamMap) -> bool {
    match rule {
        Rule::Combinator { operator, subexpr } => {
            let results: Vec<bool> = subexpr.iter().map(|r| oracle(r, params)).collect();
            match operator {
                CombOp::And => !results.contains(&false),
                CombOp::Or => results.contains(&true),
            }
        }
        Rule::Leaf { keyword, operator, value } => {
            let Some(cur) = params.get(keyword) else { return false };
            let num = |v: &ParamValue| match v {
                ParamValue::Int(i) => Some(*i as f64),
                ParamValue::Real(r) => Some(*r),
                _ => None,
            };
            match operator {
                LeafOp::Min => matches!((num(cur), num(value)), (Some(c), Some(v)) if c >= v),
                LeafOp::Max => matches!((num(cur), num(value)), (Some(c), Some(v)) if c <= v),
                LeafOp::Equals => match (num(cur), num(value)) {
                    (Some(c), Some(v)) => c == v,
                    _ => cur == value,
                },
                LeafOp::IsType => {
                    let t = match cur {
                        ParamValue::Bool(_) => "bool",
                        ParamValue::Int(_) => "int",
                        ParamValue::Real(_) => "float",
                        ParamValue::Text(_) => "str",
                    };
                    *value == ParamValue::Text(t.into())
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn evaluation_matches_oracle(rule in arb_rule(), params in arb_params()) {
        prop_assert_eq!(rule.holds(&params), oracle(&rule, &params));
        prop_assert_eq!(rule.violations(&params).is_empty(), oracle(&rule, &params));
    }

    #[test]
    fn adjustment_is_idempotent(rules in prop::collection::vec(arb_rule(), 1..4), params in arb_params()) {
        let mut set = RuleSet::default();
        set.insert("DecisionTreeClassifier", rules);
        let once = check_params(ModelKind::DecisionTree, &params, &set).adjusted_params;
        let twice = check_params(ModelKind::DecisionTree, &once, &set).adjusted_params;
        prop_assert_eq!(once, twice);
    }
}

fn small_data(seed: u64) -> (Dataset, Dataset) {
    let ds = generate(&SyntheticSpec::new(Regime::Separable, 900, seed)).unwrap();
    (
        ds.subset(&(0..600).collect::<Vec<_>>()).unwrap(),
        ds.subset(&(600..900).collect::<Vec<_>>()).unwrap(),
    )
}

fn forest(train: &Dataset, bootstrap: bool, msl: i64) -> TrainedModel {
    let params = ParamMap::new()
        .with("n_estimators", ParamValue::Int(20))
        .with("bootstrap", ParamValue::Bool(bootstrap))
        .with("min_samples_leaf", ParamValue::Int(msl));
    models::fit(&ModelSpec::new(ModelKind::RandomForest, params, 3), train).unwrap()
}

#[test]
fn snapshot_and_tampering() {
    let (train, _) = small_data(1);
    let m = models::fit(
        &ModelSpec::new(
            ModelKind::DecisionTree,
            ParamMap::new().with("min_samples_leaf", ParamValue::Int(2)),
            0,
        ),
        &train,
    )
    .unwrap();
    let snap = snapshot(&m, Some(&train), None);
    assert!(detect_tampering(&m, &snap).is_empty());
    assert_eq!(snap, snapshot(&m, Some(&train), None));
    assert!(snap.k_anonymity.unwrap() >= 2);

    let mut changed = m.clone();
    changed.params.insert("min_samples_leaf", ParamValue::Int(10));
    let diffs = detect_tampering(&changed, &snap);
    assert_eq!(diffs.len(), 1);
    assert_eq!(
        diffs[0].message,
        "parameter min_samples_leaf changed from 2 to 10 after the model was fitted"
    );

    let mut edited = m.clone();
    if let Internals::DecisionTree(t) = &mut edited.internals {
        if let Some(Node::Split { threshold, .. }) = t.nodes.iter_mut().find(|n| matches!(n, Node::Split { .. })) {
            *threshold += 0.001;
        }
    }
    assert_ne!(snapshot(&edited, None, None).internals_digest, snap.internals_digest);
    let diffs = detect_tampering(&edited, &snap);
    assert_eq!(diffs.len(), 1);
    assert_eq!(diffs[0].kind, DifferenceKind::Structural);
}

fn request<'a>(
    bytes: &'a [u8],
    file: &'a str,
    snap: &'a Snapshot,
    rules: &'a RuleSet,
    train: &'a Dataset,
    holdout: &'a Dataset,
) -> ReleaseRequest<'a> {
    ReleaseRequest {
        model_bytes: bytes,
        model_file: file,
        snapshot: snap,
        rules,
        train,
        holdout: Some(holdout),
        researcher: "j4-smith",
        claimed_auc: None,
        pipeline: None,
        prior: 0.5,
        seed: 42,
        thresholds: Thresholds::default(),
        white_box: false,
        n_shadow: 4,
    }
}

#[test]
fn compliant_forest_is_approved() {
    let (train, holdout) = small_data(0);
    let m = forest(&train, true, 200);
    let snap = snapshot(&m, Some(&train), None);
    let bytes = m.to_json_bytes();
    let rules = golden();
    let mut req = request(&bytes, "testSaveRF.pkl", &snap, &rules, &train, &holdout);
    req.n_shadow = 16;
    req.seed = 7;
    let out = request_release(&req).unwrap();
    let r = out.report;
    assert_eq!(
        r.recommendation,
        "Run file testSaveRF.pkl through next step of checking procedure",
        "{:#?}",
        r.checks.outcomes
    );
    assert_eq!(r.reason, None);
    assert_eq!(r.details, "Model parameters are within recommended ranges.\n");
    let json: serde_json::Value = serde_json::from_slice(&write_report(&r)).unwrap();
    let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
    assert_eq!(keys.len(), 6);
    assert_eq!(read_report(&write_report(&r)).unwrap(), r);
}

#[test]
fn unsafe_and_malicious_forests_are_denied() {
    let (train, holdout) = small_data(3);
    let rules = golden();
    let m = forest(&train, false, 20);
    let snap = snapshot(&m, Some(&train), None);
    let bytes = m.to_json_bytes();
    let r = request_release(&request(&bytes, "unsafe1.pkl", &snap, &rules, &train, &holdout))
        .unwrap()
        .report;
    assert_eq!(r.recommendation, "Do not allow release");
    let violation = "WARNING: model parameters may present a disclosure risk:\n- parameter bootstrap = False identified as different than the recommended fixed value of True.";
    assert_eq!(r.details, violation);
    assert!(r.reason.as_deref().unwrap().starts_with(violation));

    let mut m = forest(&train, false, 2);
    let snap = snapshot(&m, Some(&train), None);
    m.params.insert("bootstrap", ParamValue::Bool(true));
    m.params.insert("min_samples_leaf", ParamValue::Int(10));
    let bytes = m.to_json_bytes();
    let r = request_release(&request(&bytes, "unsafe-malicious.pkl", &snap, &rules, &train, &holdout))
        .unwrap()
        .report;
    assert_eq!(r.details, "Model parameters are within recommended ranges.\n");
    assert_eq!(r.recommendation, DENY);
    assert!(r.reason.as_deref().unwrap().starts_with(
        "Model parameters are within recommended ranges.\nWARNING: basic parameters differ in 2 places:\nparameter bootstrap changed from False to True after the model was fitted\nparameter min_samples_leaf changed from 2 to 10 after the model was fitted\n"
    ));
    let json = String::from_utf8(write_report(&r)).unwrap();
    assert!(json.contains("\"reason\""));
}

#[test]
fn knn_is_always_denied() {
    let (train, holdout) = small_data(4);
    let m = models::fit(&ModelSpec::new(ModelKind::Knn, ParamMap::new(), 0), &train).unwrap();
    let snap = snapshot(&m, Some(&train), None);
    let bytes = m.to_json_bytes();
    let mut rules = golden();
    rules.insert("KNeighborsClassifier", Vec::new());
    let r = request_release(&request(&bytes, "knn.json", &snap, &rules, &train, &holdout))
        .unwrap()
        .report;
    assert_eq!(r.recommendation, DENY);
    assert!(r.reason.unwrap().contains("store training rows"));
    assert_eq!(r.checks.embedded_training_rows, Some(train.n_rows()));
    assert_eq!(r.checks.outcomes.iter().find(|o| o.name == "model_size").unwrap().status, Status::Fail);
}

#[test]
fn release_errors() {
    let (train, holdout) = small_data(5);
    let m = forest(&train, true, 20);
    let snap = snapshot(&m, Some(&train), None);
    let bytes = m.to_json_bytes();
    let rules = golden();
    let mut req = request(&bytes, "m.json", &snap, &rules, &train, &holdout);
    req.holdout = None;
    assert!(matches!(request_release(&req), Err(Error::Config(_))));
    let req = request(b"not a model", "m.pkl", &snap, &rules, &train, &holdout);
    assert!(matches!(request_release(&req), Err(Error::Format(_))));
}

#[test]
fn dp_svc_is_refitted_with_checker_seed() {
    let (train, holdout) = small_data(6);
    let params = ParamMap::new().with("dhat", ParamValue::Int(1000));
    let m = models::fit(&ModelSpec::new(ModelKind::DpSvc, params, 9), &train).unwrap();
    let snap = snapshot(&m, Some(&train), None);
    let bytes = m.to_json_bytes();
    let rules = golden();
    let out = request_release(&request(&bytes, "svc.json", &snap, &rules, &train, &holdout)).unwrap();
    let refit = out.released_model.unwrap();
    assert_eq!(refit.fit_meta.seed, out.report.checks.checker_seed);
    assert_ne!(refit.internals_digest(), m.internals_digest());
    assert_eq!(out.report.checks.released_digest, refit.internals_digest());
}
