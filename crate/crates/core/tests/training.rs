use bnstress_core::batch::Table;
use bnstress_core::fixtures::{self, TOY_SEED};
use bnstress_core::training::{fit_features, train_network, TrainError, TrainOptions};

fn small_train() -> Table {
    fixtures::toy_data(4000, 11).unwrap()
}

fn drop_column(t: &Table, name: &str) -> Table {
    let keep: Vec<String> = t.headers().iter().filter(|h| *h != name).cloned().collect();
    let cols = keep.iter().map(|h| t.column(h).unwrap().to_vec()).collect();
    Table::from_columns(keep, cols)
}

fn blank_rows(t: &Table, name: &str, every: usize) -> Table {
    let headers = t.headers().to_vec();
    let cols = headers
        .iter()
        .map(|h| {
            let c = t.column(h).unwrap().to_vec();
            if h == name {
                c.into_iter().enumerate().map(|(i, v)| if i % every == 0 { String::new() } else { v }).collect()
            } else {
                c
            }
        })
        .collect();
    Table::from_columns(headers, cols)
}

#[test]
fn missing_label_column_names_the_model() {
    let t = drop_column(&small_train(), "m2");
    let err = train_network(&fixtures::toy_network_untrained(), &t, &TrainOptions::new(1)).unwrap_err();
    assert!(matches!(&err, TrainError::MissingLabels { node, .. } if node == "m2"), "{err}");
    assert!(err.to_string().contains("m2"));
}

#[test]
fn blank_labels_drop_rows_for_that_model_only() {
    let t = blank_rows(&small_train(), "y", 4);
    let (_, s) = train_network(&fixtures::toy_network_untrained(), &t, &TrainOptions::new(1)).unwrap();
    let rows: Vec<usize> = s.iter().map(|s| s.n_rows).collect();
    assert_eq!(rows, [4000, 4000, 3000]);
}

#[test]
fn training_is_bottom_up_and_deterministic() {
    let t = small_train();
    let opts = TrainOptions::new(TOY_SEED);
    let (a, sa) = train_network(&fixtures::toy_network_untrained(), &t, &opts).unwrap();
    let (b, _) = train_network(&fixtures::toy_network_untrained(), &t, &opts).unwrap();
    assert_eq!(a, b);
    for id in ["m1", "m2", "y"] {
        assert_eq!(a.trained_model(id).unwrap().parameters, b.trained_model(id).unwrap().parameters);
    }
    let order: Vec<&str> = sa.iter().map(|s| s.node.as_str()).collect();
    assert_eq!(order, ["m1", "m2", "y"]);
}

#[test]
fn gold_inputs_change_the_upper_model_only() {
    let t = small_train();
    let (pred, _) = train_network(&fixtures::toy_network_untrained(), &t, &TrainOptions::new(3)).unwrap();
    let gold_opts = TrainOptions { gold_inputs: true, ..TrainOptions::new(3) };
    let (gold, _) = train_network(&fixtures::toy_network_untrained(), &t, &gold_opts).unwrap();
    assert_eq!(pred.trained_model("m2").unwrap().parameters, gold.trained_model("m2").unwrap().parameters);
    assert_ne!(pred.trained_model("y").unwrap().parameters, gold.trained_model("y").unwrap().parameters);
}

#[test]
fn feature_fits_recover_the_generator() {
    let t = fixtures::toy_data(50_000, 2).unwrap();
    let fitted = fit_features(&fixtures::toy_network_untrained(), &t).unwrap();
    for (id, want) in [("x1", &fixtures::X1[..]), ("x2", &fixtures::X2[..]), ("x3", &fixtures::X3[..])] {
        let got = fitted.node(id).unwrap().dist().unwrap().probs(None).unwrap().to_vec();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 0.01, "{id}: {got:?}");
        }
    }
}

#[test]
fn empty_table_is_rejected() {
    let t = small_train().select_rows(&[]);
    assert!(train_network(&fixtures::toy_network_untrained(), &t, &TrainOptions::new(1)).is_err());
}
