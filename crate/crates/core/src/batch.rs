//! Columnar data: sampled batches and labelled CSV tables.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::dist::Value;
use crate::graph::{Dag, Node, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{0}")]
    Io(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("column '{column}' row {row}: {detail}")]
    BadCell { column: String, row: usize, detail: String },
    #[error("no data rows")]
    Empty,
}

/// Draws from a network: one value column per node plus the output simplex
/// of every model node.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub n_rows: usize,
    pub columns: BTreeMap<NodeId, Vec<Value>>,
    pub simplexes: BTreeMap<NodeId, Vec<Vec<f64>>>,
}

impl SampleBatch {
    pub fn column(&self, id: &str) -> Option<&[Value]> {
        self.columns.get(id).map(Vec::as_slice)
    }

    /// Renders node values as text cells, discrete values by label.
    pub fn to_table(&self, dag: &Dag) -> Table {
        let mut headers = Vec::new();
        let mut cols = Vec::new();
        for node in dag.nodes() {
            let Some(values) = self.columns.get(&node.id) else { continue };
            let labels = node.class_labels();
            headers.push(node.id.to_string());
            cols.push(
                values
                    .iter()
                    .map(|v| match v {
                        Value::Discrete(k) => labels.get(*k).cloned().unwrap_or_else(|| k.to_string()),
                        Value::Real(x) => format!("{x:?}"),
                    })
                    .collect(),
            );
        }
        Table::from_columns(headers, cols)
    }
}

/// A CSV table held as text; cells are interpreted per node on access.
/// Empty cells mean "missing".
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    headers: Vec<String>,
    cols: Vec<Vec<String>>,
    n_rows: usize,
}

impl Table {
    pub fn from_columns(headers: Vec<String>, cols: Vec<Vec<String>>) -> Self {
        assert_eq!(headers.len(), cols.len());
        let n_rows = cols.first().map_or(0, Vec::len);
        assert!(cols.iter().all(|c| c.len() == n_rows), "ragged columns");
        Table { headers, cols, n_rows }
    }

    pub fn from_reader(r: impl Read) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers: Vec<String> = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?.iter().map(|h| h.trim_matches('\'').to_owned()).collect();
        let mut cols = vec![Vec::new(); headers.len()];
        for rec in rdr.records() {
            let rec = rec.map_err(|e| DataError::Csv(e.to_string()))?;
            for (c, cell) in cols.iter_mut().zip(rec.iter()) {
                c.push(cell.trim_matches('\'').to_owned());
            }
        }
        Ok(Table::from_columns(headers, cols))
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let f = std::fs::File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(std::io::BufReader::new(f))
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for r in 0..self.n_rows {
            w.write_record(self.cols.iter().map(|c| c[r].as_str())).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn column(&self, name: &str) -> Option<&[String]> {
        self.headers.iter().position(|h| h == name).map(|i| self.cols[i].as_slice())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column(name).is_some()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Table {
        let cols = self.cols.iter().map(|c| idx.iter().map(|&i| c[i].clone()).collect()).collect();
        Table { headers: self.headers.clone(), cols, n_rows: idx.len() }
    }

    /// Values of `node` read from the column named like the node.
    pub fn node_values(&self, node: &Node) -> Result<Vec<Option<Value>>, DataError> {
        self.values_as(node.id.as_str(), node)
    }

    /// Cells of `column` interpreted with `node`'s type: a class label or a
    /// category index for discrete nodes, a real number otherwise.
    pub fn values_as(&self, column: &str, node: &Node) -> Result<Vec<Option<Value>>, DataError> {
        let cells = self.column(column).ok_or_else(|| DataError::MissingColumn(column.to_owned()))?;
        let labels = node.class_labels();
        let k = node.n_categories();
        cells
            .iter()
            .enumerate()
            .map(|(row, cell)| {
                if cell.is_empty() {
                    return Ok(None);
                }
                let bad = |detail: String| DataError::BadCell { column: column.to_owned(), row: row + 1, detail };
                match k {
                    Some(k) => {
                        if let Some(i) = labels.iter().position(|l| l == cell) {
                            return Ok(Some(Value::Discrete(i)));
                        }
                        match cell.parse::<usize>() {
                            Ok(i) if i < k => Ok(Some(Value::Discrete(i))),
                            _ => Err(bad(format!("'{cell}' is not one of {labels:?}"))),
                        }
                    }
                    None => match cell.parse::<f64>() {
                        Ok(x) if x.is_finite() => Ok(Some(Value::Real(x))),
                        _ => Err(bad(format!("'{cell}' is not a finite number"))),
                    },
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DistSpec;

    #[test]
    fn cells_resolve_by_label_or_index() {
        let t = Table::from_reader("a,b\nyes,0.5\n1,\n,2\n".as_bytes()).unwrap();
        let mut node = Node::feature("a", DistSpec::Categorical { probs: vec![0.5, 0.5], labels: vec!["no".into(), "yes".into()] });
        assert_eq!(t.node_values(&node).unwrap(), vec![Some(Value::Discrete(1)), Some(Value::Discrete(1)), None]);
        node.id = "b".into();
        assert!(matches!(t.node_values(&node), Err(DataError::BadCell { row: 1, .. })));
        let real = Node::feature("b", DistSpec::Gamma { shape: 1.0, rate: 1.0 });
        assert_eq!(t.node_values(&real).unwrap(), vec![Some(Value::Real(0.5)), None, Some(Value::Real(2.0))]);
        let missing = Node::feature("c", DistSpec::Gamma { shape: 1.0, rate: 1.0 });
        assert_eq!(t.node_values(&missing), Err(DataError::MissingColumn("c".into())));
    }

    #[test]
    fn csv_round_trip() {
        let text = "x,y\n\"a,b\",1\nc,\n";
        let t = Table::from_reader(text.as_bytes()).unwrap();
        assert_eq!(t.column("x").unwrap(), ["a,b", "c"]);
        let back = Table::from_reader(t.to_csv_string().as_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.select_rows(&[1]).column("y").unwrap(), [""]);
    }
}
