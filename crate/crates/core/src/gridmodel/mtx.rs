//! Matrix Market coordinate reader/writer for complex (and real) matrices.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;

use super::CMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Complex,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
}

pub fn read_complex(path: &Path) -> Result<CMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_complex(&text, path)
}

pub fn parse_complex(text: &str, path: &Path) -> Result<CMatrix> {
    let bad = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(bad(1, "missing %%MatrixMarket matrix header"));
    }
    if tokens[2] != "coordinate" {
        return Err(bad(1, "only coordinate format is supported"));
    }
    let field = match tokens[3].as_str() {
        "complex" => Field::Complex,
        "real" | "integer" => Field::Real,
        other => return Err(bad(1, &format!("unsupported field {other}"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(bad(1, &format!("unsupported symmetry {other}"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut matrix = CMatrix::zeros(0, 0);
    let mut seen = 0usize;
    for (k, raw) in lines {
        let line_no = k + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        match size {
            None => {
                if parts.len() != 3 {
                    return Err(bad(line_no, "expected `rows cols nnz`"));
                }
                let dims: Vec<usize> = parts
                    .iter()
                    .map(|p| p.parse().map_err(|_| bad(line_no, "bad size entry")))
                    .collect::<Result<_>>()?;
                size = Some((dims[0], dims[1], dims[2]));
                matrix = CMatrix::zeros(dims[0], dims[1]);
            }
            Some((rows, cols, _)) => {
                let want = if field == Field::Complex { 4 } else { 3 };
                if parts.len() != want {
                    return Err(bad(line_no, &format!("expected {want} fields")));
                }
                let i: usize = parts[0].parse().map_err(|_| bad(line_no, "bad row index"))?;
                let j: usize = parts[1].parse().map_err(|_| bad(line_no, "bad column index"))?;
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(bad(line_no, "index out of range"));
                }
                let re: f64 = parts[2].parse().map_err(|_| bad(line_no, "bad value"))?;
                let im: f64 = if field == Field::Complex {
                    parts[3].parse().map_err(|_| bad(line_no, "bad value"))?
                } else {
                    0.0
                };
                let z = Complex64::new(re, im);
                matrix[(i - 1, j - 1)] = z;
                if symmetry == Symmetry::Symmetric && i != j {
                    matrix[(j - 1, i - 1)] = z;
                }
                seen += 1;
            }
        }
    }
    let (_, _, nnz) = size.ok_or_else(|| bad(1, "missing size line"))?;
    if seen != nnz {
        return Err(bad(0, &format!("declared {nnz} entries, found {seen}")));
    }
    Ok(matrix)
}

/// Write every nonzero entry in general coordinate form. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn format_complex(m: &CMatrix) -> String {
    let mut out = String::from("%%MatrixMarket matrix coordinate complex general\n");
    let entries: Vec<(usize, usize, Complex64)> = (0..m.ncols())
        .flat_map(|j| (0..m.nrows()).map(move |i| (i, j)))
        .filter_map(|(i, j)| {
            let z = m[(i, j)];
            (z.re != 0.0 || z.im != 0.0).then_some((i, j, z))
        })
        .collect();
    let _ = writeln!(out, "{} {} {}", m.nrows(), m.ncols(), entries.len());
    for (i, j, z) in entries {
        let _ = writeln!(out, "{} {} {:?} {:?}", i + 1, j + 1, z.re, z.im);
    }
    out
}

pub fn write_complex(path: &Path, m: &CMatrix) -> Result<()> {
    fs::write(path, format_complex(m)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_symmetric_real() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n2 2 2\n1 1 4.0\n2 1 -1.5\n";
        let m = parse_complex(text, Path::new("x.mtx")).unwrap();
        assert_eq!(m[(0, 1)], Complex64::new(-1.5, 0.0));
        assert_eq!(m[(1, 0)], Complex64::new(-1.5, 0.0));
        assert_eq!(m[(1, 1)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn rejects_out_of_range_and_short_files() {
        let text = "%%MatrixMarket matrix coordinate complex general\n2 2 1\n3 1 1 0\n";
        assert!(parse_complex(text, Path::new("x")).is_err());
        let text = "%%MatrixMarket matrix coordinate complex general\n2 2 2\n1 1 1 0\n";
        assert!(parse_complex(text, Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            vals in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6, 0u8..3), 12)
        ) {
            let m = CMatrix::from_fn(3, 4, |i, j| {
                let (re, im, keep) = vals[i * 4 + j];
                if keep == 0 { Complex64::new(0.0, 0.0) } else { Complex64::new(re / 7.0, im * 1e-9) }
            });
            let back = parse_complex(&format_complex(&m), Path::new("x")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
