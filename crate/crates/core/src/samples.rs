//! Row-major sample matrices.

use crate::error::{Error, Result};

/// `n × d` sample matrix stored row-major; each row is one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    dim: usize,
    data: Vec<f64>,
}

impl Samples {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::SizeMismatch(format!(
                "{} values cannot be split into rows of length {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; n * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::SizeMismatch("ragged rows".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Column `j` as an owned vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Select rows by index (duplicates allowed).
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// CSV cell for a float: plain decimal in `[1e-4, 1e15)`, scientific
/// otherwise. Both forms parse back exactly.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Header line `x1,…,xd`.
pub fn csv_header(prefix: &str, d: usize) -> String {
    (1..=d).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

impl Samples {
    /// Header `x1,…,xd` followed by one comma-separated row per point.
    pub fn to_csv(&self) -> String {
        let mut out = csv_header("x", self.dim);
        out.push('\n');
        for r in self.rows() {
            let line: Vec<String> = r.iter().map(|v| fmt_num(*v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Parse comma-separated rows, skipping `#` comments, blank lines and a
    /// non-numeric header line.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut header_skipped = false;
        for (i, line) in text.lines().enumerate() {
            let l = line.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = l.split(',').map(|f| f.trim().parse::<f64>()).collect();
            match parsed {
                Ok(r) => rows.push(r),
                Err(_) if rows.is_empty() && !header_skipped => header_skipped = true,
                Err(e) => return Err(Error::Domain(format!("line {}: {e}", i + 1))),
            }
        }
        if rows.is_empty() {
            return Err(Error::Domain("no sample rows found".into()));
        }
        Self::from_rows(&rows)
    }
}

