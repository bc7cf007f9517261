use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{DataDictionary, Dataset, Encoding};

/// Reads the canonical CSV layout: `group_id`, the encoded columns in index
/// order, then the label column named after the dictionary's target.
pub fn load_dataset(csv_bytes: &[u8], dict: &DataDictionary) -> Result<Dataset> {
    dict.validate()?;
    let width = dict.width();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(csv_bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("header: {e}")))?
        .clone();
    if headers.len() != width + 2 {
        return Err(Error::Schema(format!(
            "expected {} columns (group_id, {width} encoded, label), header has {}",
            width + 2,
            headers.len()
        )));
    }
    if &headers[width + 1] != dict.target.name.as_str() {
        return Err(Error::Schema(format!(
            "last column is '{}', expected target '{}'",
            &headers[width + 1],
            dict.target.name
        )));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("row {r}: {e}")))?;
        if record.len() != width + 2 {
            return Err(Error::Parse(format!(
                "row {r} has {} fields, expected {}",
                record.len(),
                width + 2
            )));
        }
        let gid = &record[0];
        if gid.is_empty() {
            return Err(Error::Parse(format!("row {r}: empty group_id")));
        }
        groups.push(gid.to_string());
        for j in 0..width {
            let cell = &record[j + 1];
            if cell.is_empty() {
                return Err(Error::Parse(format!(
                    "row {r} column '{}': missing value",
                    &headers[j + 1]
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Parse(format!(
                    "row {r} column '{}': '{cell}' is not numeric",
                    &headers[j + 1]
                ))
            })?;
            data.push(v);
        }
        let label = &record[width + 1];
        let class = dict
            .target
            .classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::Label(format!("row {r}: unknown label '{label}'")))?;
        labels.push(class);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset("CSV has a header but no rows".into()));
    }
    let matrix = Matrix::from_vec(labels.len(), width, data)?;
    Dataset::new(matrix, labels, groups, dict.clone())
}

/// Canonical CSV writer; `load_dataset(write_dataset(ds))` reproduces `ds` bit for bit.
pub fn write_dataset(ds: &Dataset) -> Vec<u8> {
    let dict = ds.dictionary();
    let enc = dict.column_encodings();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["group_id".to_string()];
    header.extend(dict.column_names());
    header.push(dict.target.name.clone());
    w.write_record(&header).expect("in-memory write");
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..ds.n_rows() {
        record.clear();
        record.push(ds.group_ids()[i].clone());
        for (j, &v) in ds.row(i).iter().enumerate() {
            record.push(match enc[j] {
                Encoding::Onehot | Encoding::Int64 => format!("{}", v as i64),
                Encoding::Float64 => format!("{v}"),
            });
        }
        record.push(dict.target.classes[ds.labels()[i]].clone());
        w.write_record(&record).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureSpec, TargetSpec};
    use proptest::prelude::*;

    /// Onehot weight (4 levels), int64 age, float64 score; classes yes/no.
    fn table_dict() -> DataDictionary {
        DataDictionary {
            features: vec![
                FeatureSpec {
                    name: "weight".into(),
                    indices: vec![0, 1, 2, 3],
                    encoding: Encoding::Onehot,
                },
                FeatureSpec {
                    name: "age".into(),
                    indices: vec![4],
                    encoding: Encoding::Int64,
                },
                FeatureSpec {
                    name: "score".into(),
                    indices: vec![5],
                    encoding: Encoding::Float64,
                },
            ],
            target: TargetSpec {
                name: "cancer".into(),
                classes: vec!["No".into(), "Yes".into()],
            },
        }
    }

    const TEN_ROWS: &str = "group_id,weight_0,weight_1,weight_2,weight_3,age,score,cancer
p1,1,0,0,0,72,0.5,Yes
p2,0,1,0,0,83,1.25,Yes
p3,1,0,0,0,63,0.1,Yes
p4,1,0,0,0,77,2,Yes
p5,0,0,1,0,62,3.5,Yes
p6,0,0,0,1,50,0.75,No
p7,0,1,0,0,66,1,No
p8,0,1,0,0,44,0.2,No
p9,0,1,0,0,61,0.3,No
p10,0,1,0,0,56,0.4,No
";

    #[test]
    fn loads_ten_row_table() {
        let ds = load_dataset(TEN_ROWS.as_bytes(), &table_dict()).unwrap();
        assert_eq!(ds.n_rows(), 10);
        assert_eq!(ds.class_counts(), vec![5, 5]);
        assert_eq!(ds.row(4), &[0.0, 0.0, 1.0, 0.0, 62.0, 3.5]);
        assert_eq!(write_dataset(&ds), TEN_ROWS.as_bytes());
    }

    #[test]
    fn header_only_is_empty() {
        let header = TEN_ROWS.lines().next().unwrap();
        let e = load_dataset(header.as_bytes(), &table_dict()).unwrap_err();
        assert!(matches!(e, Error::EmptyDataset(_)));
    }

    #[test]
    fn double_hot_rejected() {
        let bad = TEN_ROWS.replace("p1,1,0,0,0", "p1,1,1,0,0");
        let e = load_dataset(bad.as_bytes(), &table_dict()).unwrap_err();
        assert!(matches!(e, Error::Encoding(_)), "{e}");
    }

    #[test]
    fn bad_cells() {
        let e = load_dataset(TEN_ROWS.replace(",72,", ",seventy,").as_bytes(), &table_dict());
        assert!(matches!(e, Err(Error::Parse(_))));
        let e = load_dataset(TEN_ROWS.replace(",72,", ",,").as_bytes(), &table_dict());
        assert!(matches!(e, Err(Error::Parse(_))));
        let e = load_dataset(TEN_ROWS.replace(",72,", ",72.5,").as_bytes(), &table_dict());
        assert!(matches!(e, Err(Error::Encoding(_))));
        let e = load_dataset(TEN_ROWS.replace("0.4,No", "0.4,Maybe").as_bytes(), &table_dict());
        assert!(matches!(e, Err(Error::Label(_))));
    }

    proptest! {
        #[test]
        fn canonical_csv_round_trips(
            rows in prop::collection::vec((0usize..4, -1000i64..1000, any::<f64>().prop_filter("finite", |v| v.is_finite()), 0usize..2), 1..30)
        ) {
            let mut data = Vec::new();
            let mut labels = Vec::new();
            for (cat, age, score, label) in &rows {
                let mut r = vec![0.0; 6];
                r[*cat] = 1.0;
                r[4] = *age as f64;
                r[5] = *score;
                data.extend(r);
                labels.push(*label);
            }
            let groups = (0..rows.len()).map(|i| format!("id-{i}")).collect();
            let ds = Dataset::new(Matrix::from_vec(rows.len(), 6, data).unwrap(), labels, groups, table_dict()).unwrap();
            let bytes = write_dataset(&ds);
            let back = load_dataset(&bytes, &table_dict()).unwrap();
            prop_assert_eq!(back.matrix().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            ds.matrix().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(write_dataset(&back), bytes);
        }
    }
}
