//! File formats.
//!
//! Indices are 0-based everywhere inside the library. Every file written or
//! read here uses 1-based sensor indices instead, and this module is the only
//! place that converts between the two.
//!
//! Snapshot files are either `.csv` (one row per state component, one column
//! per snapshot, no header) or the binary layout
//!
//! ```text
//! "SNAP" | version u32 | n u64 | m u64 | layout u32 | n*m f64
//! ```
//!
//! with all integers and floats little-endian and the payload column-major.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::placement::{GridGeometry, Placement};
use crate::pod::SnapshotMatrix;

pub const MAGIC: &[u8; 4] = b"SNAP";
pub const VERSION: u32 = 1;
pub const LAYOUT_COLUMN_MAJOR: u32 = 0;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4;

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn read_snapshots(path: &Path) -> Result<SnapshotMatrix> {
    if is_csv(path) {
        SnapshotMatrix::new(read_matrix_csv(path)?)
    } else {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        decode_snapshots(&bytes)
    }
}

pub fn write_snapshots(snapshots: &SnapshotMatrix, path: &Path) -> Result<()> {
    if is_csv(path) {
        write_matrix_csv(snapshots.matrix(), path)
    } else {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&encode_snapshots(snapshots))?;
        out.flush()?;
        Ok(())
    }
}

pub fn encode_snapshots(snapshots: &SnapshotMatrix) -> Vec<u8> {
    let data = snapshots.matrix().as_slice();
    let mut bytes = Vec::with_capacity(HEADER_LEN + 8 * data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(snapshots.n() as u64).to_le_bytes());
    bytes.extend_from_slice(&(snapshots.m() as u64).to_le_bytes());
    bytes.extend_from_slice(&LAYOUT_COLUMN_MAJOR.to_le_bytes());
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode_snapshots(bytes: &[u8]) -> Result<SnapshotMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "snapshot file is {} bytes, shorter than its {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("snapshot file does not start with SNAP".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported snapshot file version {version}")));
    }
    let (n, m) = (u64_at(8), u64_at(16));
    let layout = u32_at(24);
    if layout != LAYOUT_COLUMN_MAJOR {
        return Err(Error::Format(format!("unsupported snapshot layout flag {layout}")));
    }
    let expected = n
        .checked_mul(m)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::Format(format!("snapshot dimensions {n}x{m} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != expected {
        return Err(Error::Format(format!(
            "snapshot payload is {} bytes, expected {expected} for {n}x{m}",
            payload.len()
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::Empty("snapshot matrix"));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SnapshotMatrix::from_column_major(n as usize, m as usize, values)
}

/// Dense numeric CSV without a header. Errors name the 1-based line and
/// column of the offending cell.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix_csv(BufReader::new(File::open(path)?))
}

pub fn parse_matrix_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| Error::Format(format!("csv: {e}")))?;
        let line = record.position().map_or(rows.len() as u64 + 1, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().map_err(|_| {
                    Error::Format(format!("line {line}, column {}: non-numeric cell {cell:?}", c + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "line {line}: expected {} columns, found {}",
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("csv matrix"));
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn write_matrix_csv(matrix: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in matrix.row_iter() {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// `order,index[,x[,y...]]` with 1-based indices in selection order.
pub fn write_placement_csv(
    placement: &Placement,
    geometry: Option<&GridGeometry>,
    path: &Path,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let dim = geometry.map_or(0, |g| g.dim());
    let mut header = vec!["order".to_string(), "index".to_string()];
    header.extend(["x", "y", "z"].iter().take(dim).map(|s| s.to_string()));
    header.extend((3..dim).map(|d| format!("c{}", d + 1)));
    writeln!(out, "{}", header.join(","))?;
    for (k, &i) in placement.indices().iter().enumerate() {
        let mut line = vec![(k + 1).to_string(), (i + 1).to_string()];
        if let Some(g) = geometry {
            line.extend(g.coord(i).iter().map(|c| format!("{c}")));
        }
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the `index` column of a placement file, or a bare list of 1-based
/// indices (one per line, or comma separated).
pub fn read_placement(path: &Path, n: usize) -> Result<Placement> {
    let reader = BufReader::new(File::open(path)?);
    let mut index_col = None;
    let mut indices = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && cells.iter().any(|c| *c == "index") {
            index_col = cells.iter().position(|c| *c == "index");
            continue;
        }
        let selected: Vec<&str> = match index_col {
            Some(c) => vec![cells.get(c).copied().unwrap_or("")],
            None => cells,
        };
        for (c, cell) in selected.into_iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            let one_based: usize = cell.parse().map_err(|_| {
                Error::Format(format!(
                    "line {}, column {}: {cell:?} is not a sensor index",
                    lineno + 1,
                    index_col.map_or(c, |i| i) + 1
                ))
            })?;
            indices.push(from_one_based(one_based, n)?);
        }
    }
    Placement::new(indices, n)
}

pub fn from_one_based(index: usize, n: usize) -> Result<usize> {
    if index == 0 || index > n {
        return Err(Error::OutOfRange(format!("sensor index {index} is outside 1..={n}")));
    }
    Ok(index - 1)
}

pub fn indices_from_one_based(indices: &[usize], n: usize) -> Result<Vec<usize>> {
    indices.iter().map(|&i| from_one_based(i, n)).collect()
}
