use std::io::Write;

use rejsamp::frame::{load_population, read_population, Schema};
use rejsamp::Error;

fn schema(y: Option<&str>) -> Schema {
    Schema { x_cols: vec!["x".into()], z_cols: vec!["z1".into(), "z2".into()], y_col: y.map(Into::into), id_col: None }
}

#[test]
fn reads_comma_and_tab_files() {
    let csv = "id,x,z1,z2,y\n1,0.5,1,2,3.5\n2,1.5,3,4,-1\n";
    let pop = read_population(csv.as_bytes(), &schema(Some("y")), None).unwrap();
    assert_eq!(pop.n_units(), 2);
    assert_eq!(pop.x().row(1), [1.5]);
    assert_eq!(pop.z().unwrap().row(0), [1.0, 2.0]);
    assert_eq!(pop.y().unwrap(), [3.5, -1.0]);

    let tsv = csv.replace(',', "\t");
    let from_tab = read_population(tsv.as_bytes(), &schema(Some("y")), None).unwrap();
    assert_eq!(pop, from_tab);
}

#[test]
fn explicit_delimiter_and_ids() {
    let text = "uid;x;z1;z2\n10;1;1;1\n20;2;2;3\n";
    let s = Schema { id_col: Some("uid".into()), ..schema(None) };
    let pop = read_population(text.as_bytes(), &s, Some(b';')).unwrap();
    assert_eq!(pop.unit_ids(), [10, 20]);
    assert!(!pop.has_y());
    assert!(pop.y().is_err());
}

#[test]
fn blank_and_bad_cells_name_the_row() {
    let blank = "x,z1,z2,y\n1,2,3,4\n5,,7,8\n";
    match read_population(blank.as_bytes(), &schema(Some("y")), None) {
        Err(Error::Parse { row, message }) => {
            assert_eq!(row, 2);
            assert!(message.contains("z1"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    let bad = "x,z1,z2,y\n1,2,3,abc\n";
    assert!(matches!(read_population(bad.as_bytes(), &schema(Some("y")), None), Err(Error::Parse { row: 1, .. })));
}

#[test]
fn missing_column_is_a_schema_error() {
    let text = "x,z1,y\n1,2,3\n";
    assert!(matches!(read_population(text.as_bytes(), &schema(Some("y")), None), Err(Error::Schema(_))));
    let no_x = Schema::default();
    assert!(matches!(read_population(text.as_bytes(), &no_x, None), Err(Error::Schema(_))));
}

#[test]
fn loads_from_disk() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "x,z1,z2,y").unwrap();
    for i in 0..5 {
        writeln!(f, "{i},{},{},{}", i + 1, i + 2, 2 * i).unwrap();
    }
    let pop = load_population(f.path(), &schema(Some("y")), None).unwrap();
    assert_eq!(pop.n_units(), 5);
    assert_eq!(pop.y_mean().unwrap(), 4.0);
    let missing = load_population(std::path::Path::new("/nonexistent/frame.csv"), &schema(None), None);
    assert!(matches!(missing, Err(Error::Io { .. })));
}
