//! The multi-period measurement matrix, observation masks and noise.
//!
//! Column j of the matrix belongs to phase j. Each time step contributes five
//! rows: Re v, Im v, |v|, Re s, Im s.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmodel::CMatrix;

pub const ROWS_PER_STEP: usize = 5;

/// Row offsets inside one time block.
pub const ROW_RE_V: usize = 0;
pub const ROW_IM_V: usize = 1;
pub const ROW_ABS_V: usize = 2;
pub const ROW_P: usize = 3;
pub const ROW_Q: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementMatrix {
    data: DMatrix<f64>,
}

impl MeasurementMatrix {
    pub fn from_data(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.nrows() % ROWS_PER_STEP != 0 {
            return Err(Error::Dimension(format!(
                "measurement matrix needs a positive multiple of 5 rows, got {}",
                data.nrows()
            )));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn time_steps(&self) -> usize {
        self.data.nrows() / ROWS_PER_STEP
    }

    pub fn n_phases(&self) -> usize {
        self.data.ncols()
    }
}

/// M built from voltages and injections, both T×|P|.
pub fn build_matrix(v: &CMatrix, s: &CMatrix) -> Result<MeasurementMatrix> {
    if v.shape() != s.shape() || v.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "voltages are {}x{}, injections {}x{}",
            v.nrows(),
            v.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    let data = DMatrix::from_fn(ROWS_PER_STEP * v.nrows(), v.ncols(), |r, j| {
        let t = r / ROWS_PER_STEP;
        match r % ROWS_PER_STEP {
            ROW_RE_V => v[(t, j)].re,
            ROW_IM_V => v[(t, j)].im,
            ROW_ABS_V => v[(t, j)].norm(),
            ROW_P => s[(t, j)].re,
            _ => s[(t, j)].im,
        }
    });
    Ok(MeasurementMatrix { data })
}

/// Voltage phasors read off the Re/Im rows of an m×n matrix, as T×n.
pub fn voltage_rows(x: &DMatrix<f64>) -> Result<CMatrix> {
    check_rows(x.nrows())?;
    let t_steps = x.nrows() / ROWS_PER_STEP;
    Ok(CMatrix::from_fn(t_steps, x.ncols(), |t, j| {
        Complex64::new(x[(ROWS_PER_STEP * t + ROW_RE_V, j)], x[(ROWS_PER_STEP * t + ROW_IM_V, j)])
    }))
}

fn check_rows(m: usize) -> Result<()> {
    if m % ROWS_PER_STEP != 0 {
        return Err(Error::Dimension(format!("{m} rows is not a multiple of 5")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskPolicy {
    /// Any cell may be observed.
    Uniform,
    /// Only |v|, P and Q rows may be observed.
    Scada,
}

impl MaskPolicy {
    pub fn eligible_row(self, row: usize) -> bool {
        match self {
            MaskPolicy::Uniform => true,
            MaskPolicy::Scada => row % ROWS_PER_STEP >= ROW_ABS_V,
        }
    }

    pub fn eligible_cells(self, m: usize, n: usize) -> usize {
        (0..m).filter(|&r| self.eligible_row(r)).count() * n
    }
}

impl std::str::FromStr for MaskPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(MaskPolicy::Uniform),
            "scada" => Ok(MaskPolicy::Scada),
            other => Err(Error::InvalidArgument(format!("unknown mask policy '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationMask {
    m: usize,
    n: usize,
    entries: BTreeSet<(usize, usize)>,
    policy: MaskPolicy,
}

impl ObservationMask {
    pub fn new(m: usize, n: usize, entries: impl IntoIterator<Item = (usize, usize)>, policy: MaskPolicy) -> Result<Self> {
        let entries: BTreeSet<_> = entries.into_iter().collect();
        if let Some(&(r, c)) = entries.iter().find(|&&(r, c)| r >= m || c >= n) {
            return Err(Error::Dimension(format!("mask entry ({r}, {c}) outside {m}x{n}")));
        }
        if let Some(&(r, c)) = entries.iter().find(|&&(r, _)| !policy.eligible_row(r)) {
            return Err(Error::InvalidArgument(format!("entry ({r}, {c}) is not observable under {policy:?}")));
        }
        Ok(Self { m, n, entries, policy })
    }

    pub fn full(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            entries: (0..m).flat_map(|r| (0..n).map(move |c| (r, c))).collect(),
            policy: MaskPolicy::Uniform,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn policy(&self) -> MaskPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.entries.contains(&(row, col))
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().copied()
    }

    /// 0/1 indicator matrix.
    pub fn indicator(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.m, self.n);
        for &(r, c) in &self.entries {
            out[(r, c)] = 1.0;
        }
        out
    }

    /// Fewer than 2/3 of the SCADA-eligible cells observed.
    pub fn is_low_observability(&self) -> bool {
        3 * self.entries.len() < 2 * MaskPolicy::Scada.eligible_cells(self.m, self.n)
    }

    /// Rows `row,col`, 0-based.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["row", "col"])?;
        for (r, c) in &self.entries {
            w.write_record([r.to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, m: usize, n: usize, policy: MaskPolicy) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rd = csv::Reader::from_reader(file);
        let mut entries = Vec::new();
        for (k, rec) in rd.deserialize::<(usize, usize)>().enumerate() {
            entries.push(rec.map_err(|e| Error::Parse {
                path: path.into(),
                line: k + 2,
                msg: e.to_string(),
            })?);
        }
        Self::new(m, n, entries, policy)
    }
}

/// Sample round(fraction × eligible) cells without replacement (rounded half
/// up) from the cells allowed by `policy`.
pub fn sample_mask(m: usize, n: usize, fraction: f64, policy: MaskPolicy, seed: u64) -> Result<ObservationMask> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    let rows: Vec<usize> = (0..m).filter(|&r| policy.eligible_row(r)).collect();
    let eligible = rows.len() * n;
    let count = ((fraction * eligible as f64) + 0.5).floor() as usize;
    let count = count.min(eligible);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, eligible, count);
    let entries = picks.into_iter().map(|k| (rows[k / n], k % n));
    ObservationMask::new(m, n, entries, policy)
}

/// P_Ω(X).
pub fn apply_mask(x: &DMatrix<f64>, mask: &ObservationMask) -> Result<DMatrix<f64>> {
    if x.shape() != mask.shape() {
        return Err(Error::Dimension(format!(
            "matrix is {}x{}, mask is {}x{}",
            x.nrows(),
            x.ncols(),
            mask.m,
            mask.n
        )));
    }
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for (r, c) in mask.entries() {
        out[(r, c)] = x[(r, c)];
    }
    Ok(out)
}

/// Perturb every entry by an independent Gaussian with standard deviation
/// `percent`% of its magnitude.
pub fn add_noise(x: &DMatrix<f64>, percent: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(percent >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise percent {percent} must be nonnegative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = percent / 100.0;
    // column-major traversal keeps the draw order fixed
    Ok(x.map(|v| {
        let e: f64 = StandardNormal.sample(&mut rng);
        v + scale * v.abs() * e
    }))
}

/// Row selectors for one matrix: a_k are complex combinations of the voltage
/// rows, c_k pick the injection rows. Entries are (row, coefficient) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct RowSelectors {
    pub a: Vec<Vec<(usize, Complex64)>>,
    pub c: Vec<Vec<(usize, f64)>>,
}

pub fn row_selectors(t_steps: usize) -> RowSelectors {
    let one = Complex64::new(1.0, 0.0);
    let j = Complex64::new(0.0, 1.0);
    let mut a = Vec::with_capacity(2 * t_steps);
    let mut c = Vec::with_capacity(2 * t_steps);
    for t in 0..t_steps {
        let b = ROWS_PER_STEP * t;
        a.push(vec![(b + ROW_RE_V, one), (b + ROW_IM_V, j)]);
        a.push(vec![(b + ROW_ABS_V, one)]);
        c.push(vec![(b + ROW_P, 1.0)]);
        c.push(vec![(b + ROW_Q, 1.0)]);
    }
    RowSelectors { a, c }
}

/// (f1, f2): f1 row 2t is v^t, row 2t+1 is |v^t| (as a complex row with zero
/// imaginary part); f2 rows 2t and 2t+1 are Re s^t and Im s^t.
pub fn extract_f1_f2(x: &DMatrix<f64>) -> Result<(CMatrix, DMatrix<f64>)> {
    check_rows(x.nrows())?;
    let sel = row_selectors(x.nrows() / ROWS_PER_STEP);
    let n = x.ncols();
    let f1 = CMatrix::from_fn(sel.a.len(), n, |k, col| {
        sel.a[k].iter().map(|&(r, w)| w * x[(r, col)]).sum()
    });
    let f2 = DMatrix::from_fn(sel.c.len(), n, |k, col| {
        sel.c[k].iter().map(|&(r, w)| w * x[(r, col)]).sum()
    });
    Ok((f1, f2))
}

/// Singular values in nonincreasing order.
pub fn sv_spectrum(x: &DMatrix<f64>) -> Vec<f64> {
    crate::svd::singular_values(x)
}

/// Share of Σσ² carried by the leading `k` singular values.
pub fn energy_fraction(sv: &[f64], k: usize) -> f64 {
    let total: f64 = sv.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0.0;
    }
    sv.iter().take(k).map(|s| s * s).sum::<f64>() / total
}

/// Plain CSV of a real matrix, no header.
pub fn write_matrix_csv(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    for r in 0..x.nrows() {
        w.write_record(x.row(r).iter().map(|v| format!("{v:?}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line: k + 1,
            msg,
        };
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| parse_err(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(format!("{} fields, expected {}", row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    let n = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]))
}
