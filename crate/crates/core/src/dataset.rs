//! Paired `(x, y)` datasets and their delimited-text file format.
//!
//! ```text
//! # ptree-dataset d_x=2 sigma=1 manifest=<hash>
//! x1,x2,y1,y2
//! -5.91,2.43,-6.20,1.87
//! ```
//!
//! Values are written with the shortest representation that round-trips.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub noise_std: f64,
    pub pairs: Vec<Pair>,
    pub manifest: Option<String>,
}

const MAGIC: &str = "# ptree-dataset";

impl Dataset {
    pub fn new(dim: usize, noise_std: f64, pairs: Vec<Pair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Invalid("empty dataset".into()));
        }
        for (i, p) in pairs.iter().enumerate() {
            if p.x.len() != dim || p.y.len() != dim {
                return Err(Error::Dimension(format!("row {i} does not have dimension {dim}")));
            }
            if p.x.iter().chain(&p.y).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("dataset row {i}")));
            }
        }
        Ok(Self { dim, noise_std, pairs, manifest: None })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn xs(&self) -> Vec<Vec<f64>> {
        self.pairs.iter().map(|p| p.x.clone()).collect()
    }

    pub fn ys(&self) -> Vec<Vec<f64>> {
        self.pairs.iter().map(|p| p.y.clone()).collect()
    }

    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        write!(w, "{MAGIC} d_x={} sigma={}", self.dim, self.noise_std)?;
        if let Some(m) = &self.manifest {
            write!(w, " manifest={m}")?;
        }
        writeln!(w)?;
        let mut out = csv::Writer::from_writer(w);
        let header: Vec<String> =
            (1..=self.dim).map(|i| format!("x{i}")).chain((1..=self.dim).map(|i| format!("y{i}"))).collect();
        out.write_record(&header).map_err(csv_err)?;
        for p in &self.pairs {
            out.write_record(p.x.iter().chain(&p.y).map(|v| v.to_string())).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(File::open(path)?, path)
    }

    pub fn read_from(r: impl std::io::Read, origin: &Path) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let meta = first
            .trim_end()
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::parse(origin, "missing dataset header line"))?;
        let (mut dim, mut sigma, mut manifest) = (None, None, None);
        for field in meta.split_whitespace() {
            match field.split_once('=') {
                Some(("d_x", v)) => dim = v.parse::<usize>().ok(),
                Some(("sigma", v)) => sigma = v.parse::<f64>().ok(),
                Some(("manifest", v)) => manifest = Some(v.to_string()),
                _ => return Err(Error::parse(origin, format!("unknown header field {field:?}"))),
            }
        }
        let dim = dim.filter(|d| *d > 0).ok_or_else(|| Error::parse(origin, "header lacks a valid d_x"))?;
        let sigma = sigma.ok_or_else(|| Error::parse(origin, "header lacks sigma"))?;

        let mut rows = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rows.headers().map_err(csv_err)?.clone();
        if headers.len() != 2 * dim {
            return Err(Error::parse(origin, format!("expected {} columns, found {}", 2 * dim, headers.len())));
        }
        let mut pairs = Vec::new();
        for (line, record) in rows.records().enumerate() {
            let record = record.map_err(csv_err)?;
            let values = record
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(origin, format!("row {}: {e}", line + 1)))?;
            if values.len() != 2 * dim {
                return Err(Error::parse(origin, format!("row {} has {} columns", line + 1, values.len())));
            }
            pairs.push(Pair { x: values[..dim].to_vec(), y: values[dim..].to_vec() });
        }
        let mut ds = Self::new(dim, sigma, pairs)?;
        ds.manifest = manifest;
        Ok(ds)
    }

    /// Deterministic split into `(train, validation)`; the validation part
    /// holds `round(fraction * n)` pairs, at least one when `n > 1`.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        use rand::seq::SliceRandom;
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Invalid(format!("validation fraction {fraction} outside [0, 1)")));
        }
        let n = self.len();
        if n < 2 {
            return Err(Error::Invalid("need at least two pairs to split".into()));
        }
        let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut crate::rng::seeded(seed, crate::rng::stream::SPLIT));
        let pick = |ids: &[usize]| ids.iter().map(|&i| self.pairs[i].clone()).collect::<Vec<_>>();
        let (val, train) = idx.split_at(n_val);
        Ok((
            Dataset::new(self.dim, self.noise_std, pick(train))?,
            Dataset::new(self.dim, self.noise_std, pick(val))?,
        ))
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Invalid(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let pairs = vec![
            Pair { x: vec![0.1, -2.5], y: vec![1.0 / 3.0, 1e-300] },
            Pair { x: vec![6.0, 2.5], y: vec![-7.25, 0.0] },
            Pair { x: vec![-0.0, 1e10], y: vec![3.5, -1.0] },
        ];
        let mut ds = Dataset::new(2, 1.0, pairs).unwrap();
        ds.manifest = Some("abc123".into());
        ds
    }

    #[test]
    fn file_roundtrip_is_exact() {
        let ds = sample();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# ptree-dataset d_x=2 sigma=1 manifest=abc123\nx1,x2,y1,y2\n"));
        let back = Dataset::read_from(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_malformed_files() {
        let p = Path::new("mem");
        assert!(Dataset::read_from(&b"x1,y1\n1,2\n"[..], p).is_err());
        assert!(Dataset::read_from(&b"# ptree-dataset d_x=2 sigma=1\nx1,x2,y1,y2\n1,2,3\n"[..], p).is_err());
        assert!(Dataset::read_from(&b"# ptree-dataset d_x=1 sigma=1\nx1,y1\n1,abc\n"[..], p).is_err());
        assert!(Dataset::read_from(&b"# ptree-dataset d_x=1 sigma=1\nx1,y1\n"[..], p).is_err());
        assert!(Dataset::new(1, 1.0, vec![]).is_err());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let pairs = (0..50).map(|i| Pair { x: vec![i as f64], y: vec![i as f64] }).collect();
        let ds = Dataset::new(1, 0.0, pairs).unwrap();
        let (train, val) = ds.split(0.1, 9).unwrap();
        assert_eq!((train.len(), val.len()), (45, 5));
        assert_eq!(ds.split(0.1, 9).unwrap().1, val);
        let mut all: Vec<i64> = train.pairs.iter().chain(&val.pairs).map(|p| p.x[0] as i64).collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }
}
