#![allow(dead_code)]

use fairaudit::dataset::{Dataset, FeatureSpec, Schema};

/// Dataset with protected column `s`, label `y` and the given feature
/// columns, all coded as strings.
pub fn build(features: &[FeatureSpec], rows: &[(u8, u8, Vec<String>)]) -> Dataset {
    let schema = Schema::new(("s", "1"), ("y", "1"), features.to_vec()).unwrap();
    let mut header = vec!["s".to_string(), "y".to_string()];
    header.extend(features.iter().map(|f| f.name.clone()));
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|(s, y, f)| {
            let mut r = vec![s.to_string(), y.to_string()];
            r.extend(f.iter().cloned());
            r
        })
        .collect();
    Dataset::from_table(schema, &header, &records).unwrap()
}

/// One categorical feature `x`.
pub fn table(rows: &[(u8, u8, &str)]) -> Dataset {
    let rows: Vec<(u8, u8, Vec<String>)> = rows.iter().map(|(s, y, x)| (*s, *y, vec![x.to_string()])).collect();
    build(&[FeatureSpec::categorical("x")], &rows)
}

pub fn repeat(s: u8, y: u8, x: &'static str, n: usize) -> Vec<(u8, u8, &'static str)> {
    vec![(s, y, x); n]
}

/// Two strata: x=0 (S1 8 rows / 2 pos, S0 4 / 1) and x=1 (S1 4 / 3, S0 8 / 6).
pub fn simpson() -> Dataset {
    let mut rows = Vec::new();
    rows.extend(repeat(1, 1, "0", 2));
    rows.extend(repeat(1, 0, "0", 6));
    rows.extend(repeat(0, 1, "0", 1));
    rows.extend(repeat(0, 0, "0", 3));
    rows.extend(repeat(1, 1, "1", 3));
    rows.extend(repeat(1, 0, "1", 1));
    rows.extend(repeat(0, 1, "1", 6));
    rows.extend(repeat(0, 0, "1", 2));
    table(&rows)
}

/// All favored rows positive, all protected rows negative, equal group sizes.
pub fn segregated(per_group: usize) -> Dataset {
    let mut rows = repeat(0, 1, "a", per_group);
    rows.extend(repeat(1, 0, "a", per_group));
    table(&rows)
}
