//! Observed longitudinal samples `(Y, A1, A2, S1, S2)` and their CSV form.
//!
//! Covariate blocks are stored as row-major dense matrices so that a single
//! observation is a contiguous slice. Column 0 of `S1` is the constant 1.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// A borrowed view of one observation.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub y: f64,
    pub a1: u8,
    pub a2: u8,
    pub s1: &'a [f64],
    pub s2: &'a [f64],
}

/// An owned observation, used by samplers that draw one row at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBuf {
    pub y: f64,
    pub a1: u8,
    pub a2: u8,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

impl ObservationBuf {
    pub fn view(&self) -> Observation<'_> {
        Observation {
            y: self.y,
            a1: self.a1,
            a2: self.a2,
            s1: &self.s1,
            s2: &self.s2,
        }
    }
}

/// N observations with a `d1`-dimensional time-1 block and a `d2`-dimensional
/// time-2 block.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    a1: Vec<u8>,
    a2: Vec<u8>,
    s1: Array2<f64>,
    s2: Array2<f64>,
}

impl Dataset {
    /// Validates and assembles a dataset.
    pub fn new(
        y: Vec<f64>,
        a1: Vec<u8>,
        a2: Vec<u8>,
        s1: Array2<f64>,
        s2: Array2<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidDataset("at least one observation is required".into()));
        }
        if a1.len() != n || a2.len() != n || s1.nrows() != n || s2.nrows() != n {
            return Err(Error::InvalidDataset(format!(
                "row counts disagree: y={}, a1={}, a2={}, s1={}, s2={}",
                n,
                a1.len(),
                a2.len(),
                s1.nrows(),
                s2.nrows()
            )));
        }
        if s1.ncols() == 0 {
            return Err(Error::InvalidDataset("S1 must contain the constant column".into()));
        }
        if let Some(i) = a1.iter().chain(a2.iter()).position(|&a| a > 1) {
            return Err(Error::InvalidDataset(format!(
                "treatment indicators must be 0 or 1 (entry {} of A1 followed by A2)",
                i
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("Y[{i}] is not finite")));
        }
        if let Some(((i, j), _)) = s1.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("S1[{i},{j}] is not finite")));
        }
        if let Some(((i, j), _)) = s2.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("S2[{i},{j}] is not finite")));
        }
        if let Some(i) = s1.column(0).iter().position(|&v| v != 1.0) {
            return Err(Error::InvalidDataset(format!(
                "S1[{i},0] must be the constant 1"
            )));
        }
        // Row views must be contiguous slices.
        let s1 = s1.as_standard_layout().into_owned();
        let s2 = s2.as_standard_layout().into_owned();
        Ok(Dataset { y, a1, a2, s1, s2 })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d1(&self) -> usize {
        self.s1.ncols()
    }

    pub fn d2(&self) -> usize {
        self.s2.ncols()
    }

    /// Dimension of the stacked history `(S1, S2)`.
    pub fn d(&self) -> usize {
        self.d1() + self.d2()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn a1(&self) -> &[u8] {
        &self.a1
    }

    pub fn a2(&self) -> &[u8] {
        &self.a2
    }

    pub fn s1(&self) -> &Array2<f64> {
        &self.s1
    }

    pub fn s2(&self) -> &Array2<f64> {
        &self.s2
    }

    pub fn s1_row(&self, i: usize) -> &[f64] {
        self.s1
            .row(i)
            .to_slice()
            .expect("dataset rows are stored contiguously")
    }

    pub fn s2_row(&self, i: usize) -> &[f64] {
        self.s2
            .row(i)
            .to_slice()
            .expect("dataset rows are stored contiguously")
    }

    pub fn observation(&self, i: usize) -> Observation<'_> {
        Observation {
            y: self.y[i],
            a1: self.a1[i],
            a2: self.a2[i],
            s1: self.s1_row(i),
            s2: self.s2_row(i),
        }
    }

    /// Copy with new treatment indicators; everything else is shared by value.
    pub(crate) fn with_treatments(&self, a1: Vec<u8>, a2: Vec<u8>) -> Dataset {
        debug_assert_eq!(a1.len(), self.n());
        debug_assert_eq!(a2.len(), self.n());
        Dataset {
            y: self.y.clone(),
            a1,
            a2,
            s1: self.s1.clone(),
            s2: self.s2.clone(),
        }
    }

    /// Copy with the outcome replaced.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Dataset> {
        Dataset::new(y, self.a1.clone(), self.a2.clone(), self.s1.clone(), self.s2.clone())
    }

    /// Column names of the CSV header.
    pub fn csv_header(d1: usize, d2: usize) -> Vec<String> {
        let mut names = vec!["Y".to_string(), "A1".to_string(), "A2".to_string()];
        names.extend((0..d1).map(|j| format!("S1_{j}")));
        names.extend((0..d2).map(|j| format!("S2_{j}")));
        names
    }

    /// Writes the dataset as CSV. Doubles use the shortest representation
    /// that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::csv_header(self.d1(), self.d2()))?;
        let mut record: Vec<String> = Vec::with_capacity(3 + self.d());
        for i in 0..self.n() {
            record.clear();
            record.push(format!("{}", self.y[i]));
            record.push(self.a1[i].to_string());
            record.push(self.a2[i].to_string());
            record.extend(self.s1_row(i).iter().map(|v| format!("{v}")));
            record.extend(self.s2_row(i).iter().map(|v| format!("{v}")));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parses the CSV layout `Y,A1,A2,S1_0..,S2_0..`. Malformed rows are
    /// rejected with their line number.
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let (d1, d2) = parse_header(&header)?;
        let width = 3 + d1 + d2;

        let mut y = Vec::new();
        let mut a1 = Vec::new();
        let mut a2 = Vec::new();
        let mut s1 = Vec::new();
        let mut s2 = Vec::new();
        let mut record = csv::StringRecord::new();
        loop {
            let more = rdr.read_record(&mut record).map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::Parse {
                    line,
                    msg: e.to_string(),
                }
            })?;
            if !more {
                break;
            }
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != width {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {width} fields, found {}", record.len()),
                });
            }
            let value = |j: usize| -> Result<f64> {
                let field = &record[j];
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("column {} ({:?}) is not a number", header[j].trim(), field),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        msg: format!("column {} is not finite", header[j].trim()),
                    });
                }
                Ok(v)
            };
            let indicator = |j: usize| -> Result<u8> {
                match value(j)? {
                    v if v == 0.0 => Ok(0),
                    v if v == 1.0 => Ok(1),
                    v => Err(Error::Parse {
                        line,
                        msg: format!("column {} must be 0 or 1, found {v}", header[j].trim()),
                    }),
                }
            };
            y.push(value(0)?);
            a1.push(indicator(1)?);
            a2.push(indicator(2)?);
            let intercept = value(3)?;
            if intercept != 1.0 {
                return Err(Error::Parse {
                    line,
                    msg: format!("S1_0 must be the constant 1, found {intercept}"),
                });
            }
            for j in 3..3 + d1 {
                s1.push(value(j)?);
            }
            for j in 3 + d1..width {
                s2.push(value(j)?);
            }
        }
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidDataset("the CSV contains no observations".into()));
        }
        let s1 = Array2::from_shape_vec((n, d1), s1)
            .map_err(|e| Error::InvalidDataset(e.to_string()))?;
        let s2 = Array2::from_shape_vec((n, d2), s2)
            .map_err(|e| Error::InvalidDataset(e.to_string()))?;
        Dataset::new(y, a1, a2, s1, s2)
    }

    pub fn read_csv_path<P: AsRef<Path>>(path: P) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    /// Rows `rows` as a new dataset, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Dataset> {
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let a1 = rows.iter().map(|&i| self.a1[i]).collect();
        let a2 = rows.iter().map(|&i| self.a2[i]).collect();
        let s1 = self.s1.select(ndarray::Axis(0), rows);
        let s2 = self.s2.select(ndarray::Axis(0), rows);
        Dataset::new(y, a1, a2, s1, s2)
    }
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize)> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.len() < 4 || names[0] != "Y" || names[1] != "A1" || names[2] != "A2" {
        return Err(bad(
            "header must start with Y,A1,A2 followed by S1_0..S1_{d1-1},S2_0..S2_{d2-1}".into(),
        ));
    }
    let mut d1 = 0;
    let mut d2 = 0;
    for name in &names[3..] {
        if d2 == 0 && *name == format!("S1_{d1}") {
            d1 += 1;
        } else if *name == format!("S2_{d2}") {
            d2 += 1;
        } else {
            return Err(bad(format!("unexpected column {name:?}")));
        }
    }
    if d1 == 0 {
        return Err(bad("missing S1_0 (the constant column)".into()));
    }
    Ok((d1, d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> Dataset {
        Dataset::new(
            vec![1.5, -0.25],
            vec![1, 0],
            vec![0, 1],
            array![[1.0, 0.1], [1.0, -2.0]],
            array![[3.0], [0.1 + 0.2]],
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let data = tiny();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("Y,A1,A2,S1_0,S1_1,S2_0\n"));
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn rejects_non_constant_intercept() {
        let err = Dataset::new(
            vec![0.0],
            vec![0],
            vec![0],
            array![[2.0]],
            Array2::zeros((1, 0)),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidDataset(_)));
    }

    #[test]
    fn rejects_bad_indicator_and_nan() {
        assert!(Dataset::new(vec![0.0], vec![2], vec![0], array![[1.0]], Array2::zeros((1, 0))).is_err());
        assert!(Dataset::new(vec![f64::NAN], vec![0], vec![0], array![[1.0]], Array2::zeros((1, 0))).is_err());
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = "Y,A1,A2,S1_0,S2_0\n1,0,1,1,2\n1,0,1,1,abc\n";
        match Dataset::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "Y,A1,A2,S1_0\n1,0,1,1\n1,0.5,1,1\n";
        match Dataset::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "Y,A1,A2,S1_0\n1,0,1\n";
        assert!(matches!(
            Dataset::read_csv(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn header_must_follow_layout() {
        let text = "Y,A1,A2,S2_0\n1,0,1,1\n";
        assert!(Dataset::read_csv(text.as_bytes()).is_err());
        let text = "Y,A1,A2,S1_0,S2_0,S1_1\n1,0,1,1,2,3\n";
        assert!(Dataset::read_csv(text.as_bytes()).is_err());
    }
}
