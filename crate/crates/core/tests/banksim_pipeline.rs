use bnstress_core::banksim::{
    self, class_counts, derive_labels, downsample_majority, engineer_features, prepare, read_records, synthetic, BankSimError, LabelConfig, PipelineConfig,
    TxnRecord,
};
use bnstress_core::stress::{run_stress, RunConfig, Scenario, TrainingData};
use bnstress_core::training::{train_network, TrainOptions};

fn txn(step: u32, customer: &str, merchant: &str, category: &str, amount: f64, fraud: bool) -> TxnRecord {
    TxnRecord { step, customer: customer.into(), age: "3".into(), gender: "F".into(), merchant: merchant.into(), category: category.into(), amount, fraud }
}

#[test]
fn reads_quoted_cells_and_ignores_extra_columns() {
    let text = "\"zipMerchant\",step,'customer',age,gender,zipcodeOri,merchant,category,amount,fraud,extra\n\
                '28007',0,'C1','4','M','28007','M348934600','es_transportation',4.55,0,x\n\
                '28007',1,'C2','U','E','28007','M1823072687','es_travel',120.0,1,y\n";
    let recs = read_records(text.as_bytes()).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].customer, "C1");
    assert_eq!(recs[0].age, "4");
    assert_eq!(recs[1].category, "es_travel");
    assert!(recs[1].fraud);
    let counts = class_counts(&recs);
    assert_eq!((counts.normal, counts.fraud), (1, 1));
}

#[test]
fn ingestion_errors_name_the_problem() {
    let missing = "step,customer,age,gender,merchant,amount,fraud\n0,C1,1,F,M1,3.0,0\n";
    assert!(matches!(read_records(missing.as_bytes()), Err(BankSimError::MissingColumn(c)) if c == "category"));
    let bad = "step,customer,age,gender,merchant,category,amount,fraud\n0,C1,1,F,M1,es_food,3.0,0\n1,C1,1,F,M1,es_food,3.0,yes\n";
    assert!(matches!(read_records(bad.as_bytes()), Err(BankSimError::BadValue { row: 2, .. })));
    let header_only = "step,customer,age,gender,merchant,category,amount,fraud\n";
    assert!(matches!(read_records(header_only.as_bytes()), Err(BankSimError::Empty)));
}

#[test]
fn features_match_hand_computation() {
    let recs = vec![
        txn(7, "C1", "M1", "es_food", 30.0, false),
        txn(1, "C1", "M1", "es_food", 10.0, false),
        txn(2, "C1", "M2", "es_travel", 40.0, true),
        txn(3, "C1", "M1", "es_food", 20.0, false),
        txn(5, "C2", "M1", "es_food", 50.0, false),
    ];
    let rows = engineer_features(&recs);
    let find = |c: &str, step: u32| rows.iter().find(|r| r.customer == c && r.step == step).unwrap();
    let a = find("C1", 3);
    assert!((a.x1 - 0.25).abs() < 1e-12);
    assert_eq!((a.x5, a.x6), (3.0, 1.0));
    assert!((a.x7 - 20.0).abs() < 1e-12);
    assert!((a.x8 - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!(a.x9, 0.75);
    assert!(!a.gap_imputed);
    // single-visit pairs take the mean gap statistics of pairs with gaps
    let b = find("C1", 2);
    assert!(b.gap_imputed);
    assert_eq!((b.x5, b.x6, b.x7, b.x8, b.x9), (3.0, 1.0, 40.0, 0.0, 0.25));
    assert_eq!(find("C2", 5).x1, 1.0);
    assert_eq!((a.x2.as_str(), a.x3.as_str(), a.x4.as_str()), ("3", "F", "es_food"));
}

#[test]
fn risk_terciles_and_frequency_thresholds() {
    let mut recs = Vec::new();
    for i in 0..10 {
        recs.push(txn(i, &format!("A{i}"), "MA", "cat_a", 10.0, false));
        recs.push(txn(i, &format!("B{i}"), "MB", "cat_b", 10.0, i == 0));
        recs.push(txn(i, &format!("C{i}"), "MC", "cat_c", 10.0, i < 5));
    }
    let rows = engineer_features(&recs);
    let labels = derive_labels(&rows, &LabelConfig::default());
    // rates 0, 0.1, 0.5: terciles 0.0667 and 0.2333
    assert_eq!(labels.category_risk["cat_a"], 0);
    assert_eq!(labels.category_risk["cat_b"], 1);
    assert_eq!(labels.category_risk["cat_c"], 2);
    assert!(labels.frequency.iter().all(|&f| f == 2));
}

#[test]
fn downsampling_balances_exactly() {
    let recs = synthetic(20_000, 5);
    let rows = engineer_features(&recs);
    let keep = downsample_majority(&rows, 9).unwrap();
    let fraud = keep.iter().filter(|&&i| rows[i].fraud).count();
    let total_fraud = rows.iter().filter(|r| r.fraud).count();
    assert_eq!(fraud, total_fraud);
    assert_eq!(keep.len(), 2 * fraud);
    assert!(keep.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(keep, downsample_majority(&rows, 9).unwrap());
    let no_fraud: Vec<_> = rows.iter().filter(|r| !r.fraud).cloned().collect();
    assert!(matches!(downsample_majority(&no_fraud, 1), Err(BankSimError::SingleClass { fraud: 0, .. })));
}

#[test]
fn synthetic_data_plants_category_signal() {
    let recs = synthetic(60_000, 1);
    assert!(recs.len() >= 50_000);
    let rate = |cat: &str| {
        let in_cat: Vec<_> = recs.iter().filter(|r| r.category == cat).collect();
        in_cat.iter().filter(|r| r.fraud).count() as f64 / in_cat.len() as f64
    };
    assert!(rate("es_leisure") > 10.0 * rate("es_transportation").max(1e-3));
    assert_eq!(rate("es_food"), 0.0);
    assert_eq!(synthetic(1000, 3), synthetic(1000, 3));
    let mut out = Vec::new();
    banksim::write_records(&recs[..100], &mut out).unwrap();
    assert_eq!(read_records(out.as_slice()).unwrap(), recs[..100]);
}

#[test]
fn pipeline_trains_the_hierarchy_and_ablations_cut_recall() {
    let seed = 1;
    let recs = synthetic(60_000, seed);
    let prep = prepare(&recs, &PipelineConfig::default(), seed).unwrap();
    let d = prep.summary.decision_rows;
    assert_eq!(d.normal, d.fraud);
    assert_eq!(prep.summary.train_rows + prep.summary.eval_rows, recs.len());
    let (dag, summaries) = train_network(&banksim::network(), &prep.train, &TrainOptions::new(seed)).unwrap();
    let names: Vec<&str> = summaries.iter().map(|s| s.node.as_str()).collect();
    assert_eq!(names, ["m1", "m2", "y"]);
    assert_eq!(summaries[2].n_rows, 2 * d.fraud);

    let cfg = RunConfig::new(100, 5000, seed);
    let train = TrainingData { table: &prep.train, gold_inputs: false };
    let s = Scenario::default().ablate("m1").ablate("m2");
    let r = run_stress(&dag, &s, &cfg, Some(train), Some(&prep.eval)).unwrap();
    let by = |id: &str| r.ablation_ranking.iter().find(|e| e.node == id).unwrap();
    for id in ["m1", "m2"] {
        assert!(by(id).delta_recall.unwrap() <= -0.05, "{id}: {:?}", by(id));
    }
    assert!(by("m1").median_shift.unwrap() > 0.0);
    assert!(by("m2").median_shift.unwrap() < 0.0);
    let keys: Vec<f64> = r.ablation_ranking.iter().map(|e| e.delta_auc.unwrap().abs()).collect();
    assert!(keys.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn configuration_is_checked() {
    let recs = synthetic(2000, 1);
    let bad = PipelineConfig { eval_fraction: 1.0, ..PipelineConfig::default() };
    assert!(matches!(prepare(&recs, &bad, 1), Err(BankSimError::Config(_))));
    assert!(matches!(prepare(&[], &PipelineConfig::default(), 1), Err(BankSimError::Empty)));
}
