use crosslmm::model_data::{read_csv, write_csv_to, ColumnSchema};
use crosslmm::simlab::{generate, simulate_response, CellSizes, PredictorDesign, SimConfig};
use crosslmm::{load_csv, write_csv, Error, ModelParams, SymMatrix};
use nalgebra::DVector;

fn schema(xa: &[&str], xb: &[&str], intercept: bool) -> ColumnSchema {
    ColumnSchema {
        row_factor: "subject".into(),
        col_factor: "item".into(),
        response: "rt".into(),
        xa: xa.iter().map(|s| s.to_string()).collect(),
        xb: xb.iter().map(|s| s.to_string()).collect(),
        add_intercept_a: intercept,
    }
}

#[test]
fn minimal_two_by_two() {
    let text = "subject,item,rt,cond\n\
                s1,w1,1.0,0\n\
                s1,w2,2.0,1\n\
                s2,w1,3.0,0\n\
                s2,w2,4.0,1\n";
    let data = read_csv(text.as_bytes(), &schema(&[], &["cond"], true)).unwrap();
    assert_eq!((data.m(), data.m_prime(), data.n_total()), (2, 2, 4));
    assert_eq!((data.d_a(), data.d_b()), (1, 1));
    assert_eq!(data.row_labels(), ["s1", "s2"]);
    assert_eq!(data.col_labels(), ["w1", "w2"]);
    assert_eq!(data.cell(1, 0).y()[0], 3.0);
    assert_eq!(data.cell(0, 1).xb()[(0, 0)], 1.0);
    assert_eq!(data.cell(0, 1).xa()[(0, 0)], 1.0);
}

#[test]
fn levels_are_indexed_by_first_appearance() {
    let text = "item,subject,rt\nb,z,1\na,z,2\nb,y,3\na,y,4\nb,z,5\n";
    let data = read_csv(text.as_bytes(), &schema(&[], &[], true)).unwrap();
    assert_eq!(data.row_labels(), ["z", "y"]);
    assert_eq!(data.col_labels(), ["b", "a"]);
    assert_eq!(data.cell(0, 0).y().as_slice(), &[1.0, 5.0]);
    assert_eq!(data.cell(1, 1).y().as_slice(), &[4.0]);
}

#[test]
fn missing_cell_is_named() {
    let text = "subject,item,rt\n1,1,0.5\n1,2,0.1\n2,2,0.3\n";
    match read_csv(text.as_bytes(), &schema(&[], &[], true)) {
        Err(Error::IncompleteGrid { missing }) => assert_eq!(missing, vec![("2".to_string(), "1".to_string())]),
        other => panic!("expected an incomplete grid, got {other:?}"),
    }
}

#[test]
fn unparseable_value_reports_row_and_column() {
    let text = "subject,item,rt\n1,1,0.5\n1,2,abc\n";
    match read_csv(text.as_bytes(), &schema(&[], &[], true)) {
        Err(Error::Parse { row, column, value }) => {
            assert_eq!(row, 2);
            assert_eq!(column, "rt");
            assert_eq!(value, "abc");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn schema_errors() {
    let text = "subject,item,rt\n1,1,0.5\n";
    assert!(matches!(
        read_csv(text.as_bytes(), &schema(&["x"], &[], true)),
        Err(Error::Schema(msg)) if msg.contains("'x'")
    ));
    assert!(matches!(
        read_csv(text.as_bytes(), &schema(&[], &[], false)),
        Err(Error::Schema(_))
    ));
    let ragged = "subject,item,rt\n1,1,0.5,9\n";
    assert!(matches!(
        read_csv(ragged.as_bytes(), &schema(&[], &[], true)),
        Err(Error::Schema(_))
    ));
}

#[test]
fn schema_json_uses_documented_keys() {
    let json = r#"{"row_factor":"s","col_factor":"i","response":"y","xA":["a"],"xB":["b"],"add_intercept_A":true}"#;
    let s: ColumnSchema = serde_json::from_str(json).unwrap();
    assert_eq!(s.xa, ["a"]);
    assert_eq!(s.xb, ["b"]);
    assert!(s.add_intercept_a);
}

/// The interaction layout with m = 53, m' = 20, n = 1 survives a write and
/// read bit for bit.
#[test]
fn interaction_layout_round_trip() {
    let config = SimConfig {
        m: 53,
        m_prime: 20,
        cell_size: CellSizes::Constant(1),
        params: ModelParams::new(
            DVector::from_element(1, 1.0),
            DVector::from_vec(vec![0.5, 0.5, 0.05]),
            SymMatrix::scalar(0.25),
            SymMatrix::scalar(0.1),
            0.16,
        )
        .unwrap(),
        design: PredictorDesign::interaction(0.5, 1.0),
        replications: 1,
        base_seed: 8,
    };
    let data = generate(&config, 0).unwrap();
    let dir = std::env::temp_dir().join(format!("crosslmm-csv-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("interaction.csv");
    let schema = write_csv(&data, &path).unwrap();
    let back = load_csv(&path, &schema).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(back.cells(), data.cells());
    assert_eq!(back.row_labels(), data.row_labels());

    // writing to memory and re-simulating on the loaded design agree too
    let mut buf = Vec::new();
    write_csv_to(&back, &mut buf).unwrap();
    let again = read_csv(buf.as_slice(), &schema).unwrap();
    let a = simulate_response(&back, &config.params, 1, 0).unwrap();
    let b = simulate_response(&again, &config.params, 1, 0).unwrap();
    assert_eq!(a.y(), b.y());
}
