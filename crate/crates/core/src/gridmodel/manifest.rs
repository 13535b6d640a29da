use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{mtx, AreaPartition, CMatrix, CVector, LoadScenario, NetworkModel, Phase, PhaseIndex};
use crate::error::{Error, Result};

/// JSON manifest tying the network files together. Paths are relative to the
/// manifest's directory. Area ids in the areas file and in `adjacency` are
/// 1-based; phase indices are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub y_ll: PathBuf,
    pub y_l0: PathBuf,
    pub v0: Vec<[f64; 2]>,
    pub phases: PathBuf,
    pub areas: PathBuf,
    pub adjacency: Vec<[usize; 2]>,
    pub loads: PathBuf,
}

fn manifest_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn load_network(manifest_path: &Path) -> Result<(NetworkModel, LoadScenario, AreaPartition)> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let y_ll = mtx::read_complex(&dir.join(&manifest.y_ll))?;
    let y_l0 = mtx::read_complex(&dir.join(&manifest.y_l0))?;
    let v0 = CVector::from_iterator(
        manifest.v0.len(),
        manifest.v0.iter().map(|[re, im]| Complex64::new(*re, *im)),
    );
    let index = read_phases(&dir.join(&manifest.phases), v0.len())?;
    let n = index.len();
    let network = NetworkModel::new(y_ll, y_l0, v0, index)?;

    let (pairs, n_areas) = read_areas(&dir.join(&manifest.areas))?;
    let mut adjacency = Vec::with_capacity(manifest.adjacency.len());
    for [a, b] in &manifest.adjacency {
        if *a == 0 || *b == 0 {
            return Err(manifest_err(manifest_path, "area ids in adjacency are 1-based"));
        }
        adjacency.push((a - 1, b - 1));
    }
    let partition = AreaPartition::from_pairs(n, &pairs, n_areas, adjacency)?;

    let loads = read_loads(&dir.join(&manifest.loads), n)?;
    Ok((network, loads, partition))
}

fn read_phases(path: &Path, slack_phases: usize) -> Result<PhaseIndex> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_open_err(path, e))?;
    let mut entries = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != 2 {
            return Err(parse_err(path, line, "expected bus_id,phase"));
        }
        let phase = Phase::parse(&rec[1]).ok_or_else(|| parse_err(path, line, "phase must be a, b or c"))?;
        entries.push((rec[0].trim().to_string(), phase));
    }
    PhaseIndex::new(entries, slack_phases)
}

fn read_areas(path: &Path) -> Result<(Vec<(usize, usize)>, usize)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_open_err(path, e))?;
    let mut pairs = Vec::new();
    let mut ids = BTreeSet::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != 2 {
            return Err(parse_err(path, line, "expected phase_index,area_id"));
        }
        let phase: usize = rec[0].trim().parse().map_err(|_| parse_err(path, line, "bad phase index"))?;
        let area: usize = rec[1].trim().parse().map_err(|_| parse_err(path, line, "bad area id"))?;
        if area == 0 {
            return Err(parse_err(path, line, "area ids are 1-based"));
        }
        ids.insert(area);
        pairs.push((phase, area - 1));
    }
    let n_areas = ids.iter().next_back().copied().unwrap_or(0);
    Ok((pairs, n_areas))
}

fn read_loads(path: &Path, n_phases: usize) -> Result<LoadScenario> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_open_err(path, e))?;
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != 2 * n_phases {
            return Err(Error::Dimension(format!(
                "{}:{line}: expected {} columns, found {}",
                path.display(),
                2 * n_phases,
                rec.len()
            )));
        }
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse().map_err(|_| parse_err(path, line, "bad number")))
            .collect::<Result<_>>()?;
        rows.push(vals.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect());
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no time steps"));
    }
    let s = CMatrix::from_fn(rows.len(), n_phases, |t, i| rows[t][i]);
    LoadScenario::new(s)
}

/// Write a network, scenario and partition as a manifest plus data files in
/// `dir`; returns the manifest path.
pub fn write_network(
    dir: &Path,
    net: &NetworkModel,
    loads: &LoadScenario,
    partition: &AreaPartition,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    mtx::write_complex(&dir.join("y_ll.mtx"), net.y_ll())?;
    mtx::write_complex(&dir.join("y_l0.mtx"), net.y_l0())?;

    let mut w = csv::Writer::from_path(dir.join("phases.csv"))?;
    w.write_record(["bus_id", "phase"])?;
    for (bus, ph) in net.index().entries() {
        w.write_record([bus.clone(), ph.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("phases.csv"), e))?;

    let mut w = csv::Writer::from_path(dir.join("areas.csv"))?;
    w.write_record(["phase_index", "area_id"])?;
    for (i, a) in partition.assignment().iter().enumerate() {
        w.write_record([i.to_string(), (a + 1).to_string()])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("areas.csv"), e))?;

    let mut w = csv::Writer::from_path(dir.join("loads.csv"))?;
    let header: Vec<String> = (0..loads.n_phases())
        .flat_map(|i| [format!("re_{i}"), format!("im_{i}")])
        .collect();
    w.write_record(&header)?;
    for t in 0..loads.time_steps() {
        let rec: Vec<String> = loads
            .matrix()
            .row(t)
            .iter()
            .flat_map(|z| [format!("{:?}", z.re), format!("{:?}", z.im)])
            .collect();
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(dir.join("loads.csv"), e))?;

    let manifest = Manifest {
        y_ll: "y_ll.mtx".into(),
        y_l0: "y_l0.mtx".into(),
        v0: net.v0().iter().map(|z| [z.re, z.im]).collect(),
        phases: "phases.csv".into(),
        areas: "areas.csv".into(),
        adjacency: partition.adjacency().iter().map(|&(a, b)| [a + 1, b + 1]).collect(),
        loads: "loads.csv".into(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn parse_err(path: &Path, line: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    }
}

fn csv_open_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}
