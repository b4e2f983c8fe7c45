//! File formats for artifacts: Matrix Market arrays for small dense
//! matrices, a raw binary format for large bases, schema-tagged CSV, and
//! atomic writes so partially written artifacts never shadow good ones.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Write bytes to `path` through a sibling temp file and rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".to_string(),
    });
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Dense matrix in Matrix Market array format (column major), values with
/// shortest round-trip decimal representation.
pub fn write_matrix_market_array(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::with_capacity(32 + 24 * m.len());
    out.push_str("%%MatrixMarket matrix array real general\n");
    out.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out.push_str(&format!("{:?}\n", m[(i, j)]));
        }
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_matrix_market_array(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('%'));
    let dims = lines
        .next()
        .ok_or_else(|| Error::Artifact(format!("{}: missing size line", path.display())))?;
    let mut it = dims.split_whitespace();
    let nrows: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Artifact(format!("{}: bad row count", path.display())))?;
    let ncols: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Artifact(format!("{}: bad column count", path.display())))?;
    let mut data = Vec::with_capacity(nrows * ncols);
    for line in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        data.push(
            t.parse::<f64>()
                .map_err(|_| Error::Artifact(format!("{}: bad value {t}", path.display())))?,
        );
    }
    if data.len() != nrows * ncols {
        return Err(Error::Artifact(format!(
            "{}: expected {} values, found {}",
            path.display(),
            nrows * ncols,
            data.len()
        )));
    }
    Ok(DMatrix::from_vec(nrows, ncols, data))
}

const BIN_MAGIC: &[u8; 8] = b"RBMAT\x01\x00\x00";

/// Raw little-endian binary matrix, column major; used for large bases where
/// a text format would be wastefully slow.
pub fn write_bin_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(24 + 8 * m.len());
    bytes.extend_from_slice(BIN_MAGIC);
    bytes.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn read_bin_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 24 || &bytes[..8] != BIN_MAGIC {
        return Err(Error::Artifact(format!("{}: not a matrix file", path.display())));
    }
    let nrows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let ncols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let need = 24 + 8 * nrows * ncols;
    if bytes.len() != need {
        return Err(Error::Artifact(format!(
            "{}: expected {need} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_vec(nrows, ncols, data))
}

/// CSV with a version-tagged schema string as the first line, then a header
/// line, then data rows. Values use '.' decimals, LF endings.
pub struct CsvTable {
    schema: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        CsvTable {
            schema: schema.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.header.len(), "row width must match header");
        self.rows.push(cells.to_vec());
    }

    pub fn to_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("schema={}\n", self.schema));
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_string().as_bytes())
    }
}

/// Format a float for CSV with shortest round-trip representation.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_market_array_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mtx");
        let m = DMatrix::from_fn(7, 3, |i, j| {
            ((i * 31 + j * 17) as f64 / 13.0 - 1.2345).powi(3) * 1e-7
        });
        write_matrix_market_array(&path, &m).unwrap();
        let back = read_matrix_market_array(&path).unwrap();
        assert_eq!(m, back);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix array real general\n7 3\n"));
    }

    #[test]
    fn bin_matrix_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.bin");
        let m = DMatrix::from_fn(40, 9, |i, j| (i as f64).sin() * (j as f64 + 0.5).ln());
        write_bin_matrix(&path, &m).unwrap();
        assert_eq!(read_bin_matrix(&path).unwrap(), m);
        assert!(read_bin_matrix(&dir.path().join("missing.bin")).is_err());
    }

    #[test]
    fn corrupt_artifacts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mtx");
        atomic_write(&path, b"%%MatrixMarket matrix array real general\n2 2\n1.0\n2.0\n").unwrap();
        assert!(read_matrix_market_array(&path).is_err());
    }

    #[test]
    fn csv_has_schema_first_line() {
        let mut t = CsvTable::new("rb3dvar.test.v1", &["a", "b"]);
        t.push_row(&[fmt_f64(1.5), fmt_f64(f64::NAN)]);
        let s = t.to_string();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "schema=rb3dvar.test.v1");
        assert_eq!(lines.next().unwrap(), "a,b");
        assert_eq!(lines.next().unwrap(), "1.5,");
    }

    #[test]
    fn atomic_write_replaces_existing_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.txt");
        atomic_write(&path, b"old").unwrap();
        atomic_write(&path, b"new").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"new");
        assert!(std::fs::read_dir(dir.path()).unwrap().count() == 1, "no temp litter");
    }
}
