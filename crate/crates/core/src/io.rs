//! Headerless numeric CSV files.

use std::path::Path;

use crate::error::{Result, RotError};

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?)
}

fn parse(field: &str, line: u64) -> Result<f64> {
    field
        .parse()
        .map_err(|_| RotError::invalid(format!("line {line}: `{field}` is not a number")))
}

/// One row per line; blank lines are skipped.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for rec in reader(path.as_ref())?.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push(rec.iter().map(|f| parse(f, line)).collect::<Result<Vec<_>>>()?);
    }
    if rows.is_empty() {
        return Err(RotError::invalid(format!("{} holds no data", path.as_ref().display())));
    }
    Ok(rows)
}

/// All numbers in the file, read row by row (a column or a single row).
pub fn read_vector_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    Ok(read_matrix_csv(path)?.into_iter().flatten().collect())
}

pub fn write_matrix_csv(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// One value per line.
pub fn write_vector_csv(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
    write_matrix_csv(path, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = vec![vec![1.0, 0.1 + 0.2], vec![-3.5e-300, 4.0]];
        write_matrix_csv(&p, &m).unwrap();
        assert_eq!(read_matrix_csv(&p).unwrap(), m);
        write_vector_csv(&p, &[0.25, 0.75]).unwrap();
        assert_eq!(read_vector_csv(&p).unwrap(), vec![0.25, 0.75]);
        std::fs::write(&p, "1, 2\n\n3,x\n").unwrap();
        assert!(read_matrix_csv(&p).is_err());
        std::fs::write(&p, "").unwrap();
        assert!(read_vector_csv(&p).is_err());
    }
}
