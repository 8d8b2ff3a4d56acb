//! Persons × items grid of dichotomous responses.
//!
//! CSV layout (read and written identically): the first record holds a corner
//! label followed by the item labels, every further record holds a person
//! label followed by one cell per item. Cells are `0`, `1`, or empty for a
//! missing response. Fields are comma separated, records end with `\n`.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, IrtError, Result};

/// Corner label written in the top-left cell of matrix CSV files.
pub const CORNER_LABEL: &str = "person";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    person_ids: Vec<String>,
    item_ids: Vec<String>,
    /// Row-major, `None` marks a missing response.
    cells: Vec<Option<bool>>,
}

impl ResponseMatrix {
    pub fn new(person_ids: Vec<String>, item_ids: Vec<String>, cells: Vec<Option<bool>>) -> Result<Self> {
        if person_ids.len() < 2 || item_ids.len() < 2 {
            return domain(format!(
                "response matrix needs at least 2 persons and 2 items, got {}x{}",
                person_ids.len(),
                item_ids.len()
            ));
        }
        if cells.len() != person_ids.len() * item_ids.len() {
            return domain(format!(
                "expected {} cells for {}x{} matrix, got {}",
                person_ids.len() * item_ids.len(),
                person_ids.len(),
                item_ids.len(),
                cells.len()
            ));
        }
        check_unique(&person_ids, "person")?;
        check_unique(&item_ids, "item")?;
        Ok(Self {
            person_ids,
            item_ids,
            cells,
        })
    }

    /// Builds a matrix from rows of optional responses with generated labels
    /// `P1..Pn` and `I1..Im`.
    pub fn from_rows(rows: &[Vec<Option<bool>>]) -> Result<Self> {
        let n_items = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_items) {
            return domain("ragged rows");
        }
        let cells = rows.iter().flatten().copied().collect();
        Self::new(
            default_labels('P', rows.len()),
            default_labels('I', n_items),
            cells,
        )
    }

    /// Builds a complete matrix from 0/1 rows with generated labels.
    pub fn from_binary(rows: &[Vec<u8>]) -> Result<Self> {
        let converted = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&x| match x {
                        0 => Ok(Some(false)),
                        1 => Ok(Some(true)),
                        other => domain(format!("cell value {other} is not 0 or 1")),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&converted)
    }

    pub fn n_persons(&self) -> usize {
        self.person_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn person_ids(&self) -> &[String] {
        &self.person_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    #[inline]
    pub fn get(&self, person: usize, item: usize) -> Option<bool> {
        self.cells[person * self.item_ids.len() + item]
    }

    pub fn row(&self, person: usize) -> &[Option<bool>] {
        let m = self.item_ids.len();
        &self.cells[person * m..(person + 1) * m]
    }

    pub fn column(&self, item: usize) -> impl Iterator<Item = Option<bool>> + '_ {
        (0..self.n_persons()).map(move |i| self.get(i, item))
    }

    /// Items become persons and vice versa.
    pub fn transpose(&self) -> Self {
        let (n, m) = (self.n_persons(), self.n_items());
        let mut cells = Vec::with_capacity(n * m);
        for j in 0..m {
            cells.extend((0..n).map(|i| self.get(i, j)));
        }
        Self {
            person_ids: self.item_ids.clone(),
            item_ids: self.person_ids.clone(),
            cells,
        }
    }

    /// Swaps successes and failures, leaving missing cells alone.
    pub fn complement(&self) -> Self {
        Self {
            person_ids: self.person_ids.clone(),
            item_ids: self.item_ids.clone(),
            cells: self.cells.iter().map(|c| c.map(|x| !x)).collect(),
        }
    }

    /// Sub-matrix on the given person and item indices, in the given order.
    pub fn select(&self, persons: &[usize], items: &[usize]) -> Result<Self> {
        if let Some(&i) = persons.iter().find(|&&i| i >= self.n_persons()) {
            return domain(format!("person index {i} out of range"));
        }
        if let Some(&j) = items.iter().find(|&&j| j >= self.n_items()) {
            return domain(format!("item index {j} out of range"));
        }
        let cells = persons
            .iter()
            .flat_map(|&i| items.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self::new(
            persons.iter().map(|&i| self.person_ids[i].clone()).collect(),
            items.iter().map(|&j| self.item_ids[j].clone()).collect(),
            cells,
        )
    }

    /// Number of correct and non-missing responses in row `person`.
    pub fn person_counts(&self, person: usize) -> (usize, usize) {
        count(self.row(person).iter().copied())
    }

    /// Number of correct and non-missing responses in column `item`.
    pub fn item_counts(&self, item: usize) -> (usize, usize) {
        count(self.column(item))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut item_ids: Option<Vec<String>> = None;
        let mut person_ids = Vec::new();
        let mut cells = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                IrtError::Parse {
                    line,
                    column: 0,
                    message: e.to_string(),
                }
            })?;
            let line = record.position().map_or(0, |p| p.line());
            match &item_ids {
                None => {
                    item_ids = Some(record.iter().skip(1).map(|s| s.trim().to_string()).collect());
                }
                Some(items) => {
                    if record.len() != items.len() + 1 {
                        return Err(IrtError::Parse {
                            line,
                            column: record.len().min(items.len() + 1) + 1,
                            message: format!("expected {} fields, found {}", items.len() + 1, record.len()),
                        });
                    }
                    person_ids.push(record[0].trim().to_string());
                    for (k, field) in record.iter().enumerate().skip(1) {
                        let cell = match field.trim() {
                            "0" => Some(false),
                            "1" => Some(true),
                            "" => None,
                            other => {
                                return Err(IrtError::Parse {
                                    line,
                                    column: k + 1,
                                    message: format!("cell value {other:?} is not 0, 1 or empty"),
                                })
                            }
                        };
                        cells.push(cell);
                    }
                }
            }
        }
        let item_ids = item_ids.ok_or(IrtError::Parse {
            line: 1,
            column: 1,
            message: "empty input".into(),
        })?;
        Self::new(person_ids, item_ids, cells).map_err(|e| IrtError::Parse {
            line: 1,
            column: 1,
            message: e.to_string(),
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let io = |e: csv::Error| IrtError::Io(e.to_string());
        let mut header = vec![CORNER_LABEL.to_string()];
        header.extend(self.item_ids.iter().cloned());
        w.write_record(&header).map_err(io)?;
        for i in 0..self.n_persons() {
            let mut rec = vec![self.person_ids[i].clone()];
            rec.extend(self.row(i).iter().map(|c| match c {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => String::new(),
            }));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn count(cells: impl Iterator<Item = Option<bool>>) -> (usize, usize) {
    cells.fold((0, 0), |(correct, seen), c| match c {
        Some(true) => (correct + 1, seen + 1),
        Some(false) => (correct, seen + 1),
        None => (correct, seen),
    })
}

fn check_unique(labels: &[String], axis: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for l in labels {
        if !seen.insert(l.as_str()) {
            return domain(format!("duplicate {axis} label {l:?}"));
        }
    }
    Ok(())
}

pub(crate) fn default_labels(prefix: char, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_too_small() {
        assert!(ResponseMatrix::from_binary(&[vec![1, 0]]).is_err());
        assert!(ResponseMatrix::from_binary(&[vec![1], vec![0]]).is_err());
    }

    #[test]
    fn rejects_duplicate_labels() {
        let r = ResponseMatrix::new(
            vec!["a".into(), "a".into()],
            vec!["x".into(), "y".into()],
            vec![Some(true); 4],
        );
        assert!(matches!(r, Err(IrtError::Domain(_))));
    }

    #[test]
    fn transpose_and_complement() {
        let m = ResponseMatrix::from_binary(&[vec![1, 0, 1], vec![0, 0, 1]]).unwrap();
        let t = m.transpose();
        assert_eq!(t.n_persons(), 3);
        assert_eq!(t.get(2, 1), Some(true));
        assert_eq!(t.transpose(), m);
        assert_eq!(m.complement().get(0, 1), Some(true));
        assert_eq!(m.item_counts(2), (2, 2));
        assert_eq!(m.person_counts(0), (2, 3));
    }

    #[test]
    fn csv_round_trip_with_missing() {
        let m = ResponseMatrix::from_rows(&[
            vec![Some(true), None, Some(false)],
            vec![Some(false), Some(true), Some(true)],
        ])
        .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "person,I1,I2,I3\nP1,1,,0\nP2,0,1,1\n");
        assert_eq!(ResponseMatrix::read_csv(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn csv_errors_carry_position() {
        let bad = "person,a,b\np1,1,0\np2,1,x\n";
        match ResponseMatrix::read_csv(bad.as_bytes()) {
            Err(IrtError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 3)),
            other => panic!("unexpected {other:?}"),
        }
        let short = "person,a,b\np1,1\n";
        assert!(matches!(
            ResponseMatrix::read_csv(short.as_bytes()),
            Err(IrtError::Parse { line: 2, .. })
        ));
    }
}
