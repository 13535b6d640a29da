use nalgebra::DMatrix;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::NetworkModel;
use crate::error::{Error, Result};

/// Assignment of every phase to one of `n_areas` areas (0-based ids) and the
/// symmetric area adjacency relation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AreaPartition {
    assignment: Vec<usize>,
    n_areas: usize,
    adjacency: BTreeSet<(usize, usize)>,
    members: Vec<Vec<usize>>,
    neighbors: Vec<Vec<usize>>,
    local: Vec<usize>,
}

impl AreaPartition {
    pub fn new(
        assignment: Vec<usize>,
        n_areas: usize,
        adjacency: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if n_areas == 0 {
            return Err(Error::Partition("need at least one area".into()));
        }
        let mut members = vec![Vec::new(); n_areas];
        let mut local = vec![0; assignment.len()];
        for (phase, &area) in assignment.iter().enumerate() {
            if area >= n_areas {
                return Err(Error::UnknownArea(area));
            }
            local[phase] = members[area].len();
            members[area].push(phase);
        }
        if let Some(empty) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::Partition(format!("area {empty} is empty")));
        }
        let mut pairs = BTreeSet::new();
        for (a, b) in adjacency {
            if a == b {
                return Err(Error::Partition(format!("self-adjacent area {a}")));
            }
            if a >= n_areas || b >= n_areas {
                return Err(Error::UnknownArea(a.max(b)));
            }
            pairs.insert((a.min(b), a.max(b)));
        }
        let mut neighbors = vec![Vec::new(); n_areas];
        for &(a, b) in &pairs {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(Self {
            assignment,
            n_areas,
            adjacency: pairs,
            members,
            neighbors,
            local,
        })
    }

    /// Every phase in one area.
    pub fn single(n_phases: usize) -> Result<Self> {
        Self::new(vec![0; n_phases], 1, [])
    }

    /// Build from a sparse (phase, area) list, checking that every phase in
    /// `0..n_phases` is assigned exactly once.
    pub fn from_pairs(
        n_phases: usize,
        pairs: &[(usize, usize)],
        n_areas: usize,
        adjacency: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut assignment = vec![None; n_phases];
        for &(phase, area) in pairs {
            let slot = assignment
                .get_mut(phase)
                .ok_or(Error::UnknownPhase(phase))?;
            if slot.is_some() {
                return Err(Error::Partition(format!("phase {phase} assigned twice")));
            }
            *slot = Some(area);
        }
        let assignment = assignment
            .into_iter()
            .enumerate()
            .map(|(i, a)| a.ok_or(Error::UnassignedPhase(i)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(assignment, n_areas, adjacency)
    }

    pub fn n_areas(&self) -> usize {
        self.n_areas
    }

    pub fn n_phases(&self) -> usize {
        self.assignment.len()
    }

    pub fn area_of(&self, phase: usize) -> usize {
        self.assignment[phase]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Phases of `area` in increasing global order.
    pub fn members(&self, area: usize) -> &[usize] {
        &self.members[area]
    }

    /// Position of `phase` inside `members(area_of(phase))`.
    pub fn local_index(&self, phase: usize) -> usize {
        self.local[phase]
    }

    pub fn neighbors(&self, area: usize) -> &[usize] {
        &self.neighbors[area]
    }

    pub fn adjacency(&self) -> &BTreeSet<(usize, usize)> {
        &self.adjacency
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency.contains(&(a.min(b), a.max(b)))
    }

    /// Same area or adjacent areas.
    pub fn coupled(&self, phase_i: usize, phase_j: usize) -> bool {
        let (a, b) = (self.area_of(phase_i), self.area_of(phase_j));
        a == b || self.are_adjacent(a, b)
    }

    /// Split the network into `n_areas` connected areas by repeatedly cutting
    /// off a subtree. Candidate subtrees are those within half the target area
    /// size of it; among them the cut that discards the least sensitivity
    /// weight Σ|Z_ij|²/|w_j|² between areas that end up non-adjacent is taken.
    /// Adjacency follows nonzero admittance couplings between areas.
    pub fn contiguous(net: &NetworkModel, n_areas: usize) -> Result<Self> {
        let graph = BusGraph::from_network(net);
        let n_bus = graph.buses.len();
        if n_areas == 0 || n_areas > n_bus {
            return Err(Error::Partition(format!(
                "cannot split {n_bus} buses into {n_areas} areas"
            )));
        }
        let parent = graph.spanning_parents()?;
        let order = graph.bfs_order(&parent);
        let children = graph.children(&parent);
        let weight: Vec<usize> = graph.buses.iter().map(|b| b.phases.len()).collect();
        let total: usize = weight.iter().sum();
        let target = total as f64 / n_areas as f64;

        // bus-to-bus sensitivity weight, summed over the phases of each bus
        let z = net.z_ll();
        let w = net.no_load_voltage();
        let mut coupling = DMatrix::<f64>::zeros(n_bus, n_bus);
        for (a, bus_a) in graph.buses.iter().enumerate() {
            for (b, bus_b) in graph.buses.iter().enumerate() {
                for &i in &bus_a.phases {
                    for &j in &bus_b.phases {
                        coupling[(a, b)] += z[(i, j)].norm_sqr() / w[j].norm_sqr();
                    }
                }
            }
        }
        // weight lost when buses are split into `areas` (slack bus excluded)
        let lost = |areas: &[usize]| {
            let k = areas.iter().copied().max().unwrap_or(0) + 1;
            let mut adj = vec![false; k * k];
            for b in 1..n_bus {
                let p = parent[b].unwrap_or(0);
                if p != 0 {
                    let (x, y) = (areas[b], areas[p]);
                    adj[x * k + y] = true;
                    adj[y * k + x] = true;
                }
            }
            let mut sum = 0.0;
            for a in 1..n_bus {
                for b in 1..n_bus {
                    let (x, y) = (areas[a], areas[b]);
                    if x != y && !adj[x * k + y] {
                        sum += coupling[(a, b)];
                    }
                }
            }
            sum
        };

        let mut bus_area: Vec<Option<usize>> = vec![None; n_bus];
        let mut next_area = 0;
        for _ in 1..n_areas {
            // subtree sizes over buses not yet assigned
            let mut size = vec![0usize; n_bus];
            for &b in order.iter().rev() {
                if bus_area[b].is_some() {
                    continue;
                }
                size[b] += weight[b];
                if let Some(p) = parent[b] {
                    size[p] += size[b];
                }
            }
            let open: Vec<usize> = (0..n_bus)
                .filter(|&b| bus_area[b].is_none() && parent[b].is_some() && size[b] < size[0])
                .collect();
            let gap = |b: usize| (size[b] as f64 - target).abs();
            let subtree = |root: usize| {
                let mut out = vec![root];
                let mut k = 0;
                while k < out.len() {
                    out.extend(children[out[k]].iter().copied().filter(|&c| bus_area[c].is_none()));
                    k += 1;
                }
                out
            };
            let balanced: Vec<usize> = open.iter().copied().filter(|&b| gap(b) <= 0.5 * target).collect();
            let best = if balanced.is_empty() {
                open.iter()
                    .copied()
                    .min_by(|&a, &b| gap(a).total_cmp(&gap(b)).then(a.cmp(&b)))
            } else {
                let scored: Vec<(f64, usize)> = balanced
                    .iter()
                    .map(|&b| {
                        let mut areas: Vec<usize> = bus_area.iter().map(|a| a.unwrap_or(next_area + 1)).collect();
                        for c in subtree(b) {
                            areas[c] = next_area;
                        }
                        (lost(&areas), b)
                    })
                    .collect();
                scored
                    .into_iter()
                    .min_by(|x, y| x.0.total_cmp(&y.0).then(gap(x.1).total_cmp(&gap(y.1))).then(x.1.cmp(&y.1)))
                    .map(|(_, b)| b)
            }
            .ok_or_else(|| Error::Partition("ran out of buses to cut".into()))?;
            for b in subtree(best) {
                bus_area[b] = Some(next_area);
            }
            next_area += 1;
        }
        let remainder = next_area;
        // number areas by the smallest phase index they contain, root area first
        let mut raw = vec![0usize; net.n_phases()];
        for (b, bus) in graph.buses.iter().enumerate() {
            for &ph in &bus.phases {
                raw[ph] = bus_area[b].unwrap_or(remainder);
            }
        }
        let mut relabel = BTreeMap::new();
        relabel.insert(remainder, 0);
        for &a in &raw {
            let next = relabel.len();
            relabel.entry(a).or_insert(next);
        }
        let assignment: Vec<usize> = raw.iter().map(|a| relabel[a]).collect();
        let count = relabel.len();
        let adjacency = coupling_adjacency(net, &assignment);
        Self::new(assignment, count, adjacency)
    }
}

/// Area pairs joined by at least one nonzero off-diagonal admittance entry.
pub(crate) fn coupling_adjacency(net: &NetworkModel, assignment: &[usize]) -> BTreeSet<(usize, usize)> {
    let y = net.y_ll();
    let mut pairs = BTreeSet::new();
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            let (a, b) = (assignment[i], assignment[j]);
            if a != b && y[(i, j)].norm() > 0.0 {
                pairs.insert((a.min(b), a.max(b)));
            }
        }
    }
    pairs
}

struct Bus {
    phases: Vec<usize>,
}

/// Bus-level graph recovered from the admittance sparsity pattern. Index 0 of
/// `buses` is reserved for the slack bus, which owns no phases.
struct BusGraph {
    buses: Vec<Bus>,
    adj: Vec<BTreeSet<usize>>,
}

impl BusGraph {
    fn from_network(net: &NetworkModel) -> Self {
        let index = net.index();
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut buses = vec![Bus { phases: vec![] }];
        let mut bus_of = vec![0; index.len()];
        for (i, (name, _)) in index.entries().iter().enumerate() {
            let next = buses.len();
            let b = *ids.entry(name.as_str()).or_insert(next);
            if b == buses.len() {
                buses.push(Bus { phases: vec![] });
            }
            buses[b].phases.push(i);
            bus_of[i] = b;
        }
        let mut adj = vec![BTreeSet::new(); buses.len()];
        let y = net.y_ll();
        for i in 0..y.nrows() {
            for j in 0..y.ncols() {
                let (a, b) = (bus_of[i], bus_of[j]);
                if a != b && y[(i, j)].norm() > 0.0 {
                    adj[a].insert(b);
                }
            }
        }
        let y0 = net.y_l0();
        for i in 0..y0.nrows() {
            if y0.row(i).iter().any(|z| z.norm() > 0.0) {
                adj[bus_of[i]].insert(0);
                adj[0].insert(bus_of[i]);
            }
        }
        Self { buses, adj }
    }

    fn spanning_parents(&self) -> Result<Vec<Option<usize>>> {
        let n = self.buses.len();
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0]);
        while let Some(b) = queue.pop_front() {
            for &c in &self.adj[b] {
                if !seen[c] {
                    seen[c] = true;
                    parent[c] = Some(b);
                    queue.push_back(c);
                }
            }
        }
        if let Some(lost) = seen.iter().position(|s| !s) {
            return Err(Error::Partition(format!(
                "bus {lost} is not connected to the slack bus"
            )));
        }
        Ok(parent)
    }

    fn bfs_order(&self, parent: &[Option<usize>]) -> Vec<usize> {
        let children = self.children(parent);
        let mut order = vec![0];
        let mut k = 0;
        while k < order.len() {
            let b = order[k];
            order.extend(children[b].iter().copied());
            k += 1;
        }
        order
    }

    fn children(&self, parent: &[Option<usize>]) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.buses.len()];
        for (b, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(b);
            }
        }
        children
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmodel::{generate_radial_feeder, FeederSpec};

    #[test]
    fn rejects_empty_and_self_adjacent_areas() {
        assert!(matches!(
            AreaPartition::new(vec![0, 0, 2], 3, []),
            Err(Error::Partition(_))
        ));
        assert!(matches!(
            AreaPartition::new(vec![0, 1], 2, [(1, 1)]),
            Err(Error::Partition(_))
        ));
    }

    #[test]
    fn from_pairs_detects_missing_phase() {
        let err = AreaPartition::from_pairs(3, &[(0, 0), (2, 0)], 1, []).unwrap_err();
        assert!(matches!(err, Error::UnassignedPhase(1)));
        let err = AreaPartition::from_pairs(3, &[(0, 0), (5, 0)], 1, []).unwrap_err();
        assert!(matches!(err, Error::UnknownPhase(5)));
    }

    #[test]
    fn neighbors_are_symmetric() {
        let p = AreaPartition::new(vec![0, 1, 2, 2], 3, [(1, 0), (2, 1)]).unwrap();
        for a in 0..3 {
            for &b in p.neighbors(a) {
                assert!(p.neighbors(b).contains(&a));
            }
        }
        assert_eq!(p.local_index(3), 1);
    }

    #[test]
    fn contiguous_areas_cover_and_connect() {
        let f = generate_radial_feeder(&FeederSpec::new(33, 1)).unwrap();
        for k in 1..=5 {
            let p = AreaPartition::contiguous(&f.network, k).unwrap();
            assert_eq!(p.n_areas(), k);
            assert_eq!(p.n_phases(), 32);
            // each area is a connected subtree: exactly one member hangs off
            // another area, except the slack-side area whose members may hang
            // off the slack bus directly
            for a in 0..k {
                let roots: Vec<usize> = p
                    .members(a)
                    .iter()
                    .copied()
                    .filter(|&ph| {
                        let parent = f.parents[ph + 1];
                        parent == 0 || p.area_of(parent - 1) != a
                    })
                    .collect();
                if a == 0 {
                    assert!(roots.iter().all(|&ph| f.parents[ph + 1] == 0));
                } else {
                    assert_eq!(roots.len(), 1, "area {a} of {k} is split");
                }
            }
        }
    }
}
