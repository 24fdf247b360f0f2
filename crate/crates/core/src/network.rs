//! Power network description and the constraint matrices shared by both
//! dispatch problems.
//!
//! Buses, lines and generators are indexed in declaration order. Every
//! vector and matrix built from a [`NetworkCase`] follows that order, so two
//! identical case files always produce identical matrices and traces.
//!
//! The flow-balance constraint at bus `i` reads
//! `sum(out-flows) - sum(in-flows) = sum(generation at i) - load_i`, which in
//! matrix form is `J1 z - J2 x + y = 0`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    /// Fixed demand at the bus (per-unit power).
    pub load: f64,
}

/// A directed line. The direction only fixes the sign convention of the flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    #[serde(rename = "from")]
    pub from_bus: u32,
    #[serde(rename = "to")]
    pub to_bus: u32,
    pub limit: f64,
}

/// A generator with cost `a x^2 + c x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub id: u32,
    pub bus: u32,
    pub a: f64,
    pub c: f64,
}

impl Generator {
    pub fn cost(&self, power: f64) -> f64 {
        self.a * power * power + self.c * power
    }

    pub fn marginal_cost(&self, power: f64) -> f64 {
        2.0 * self.a * power + self.c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCase {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
}

impl NetworkCase {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    /// Position of a bus id in declaration order.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn loads(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.load).collect()
    }

    pub fn limits(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.limit).collect()
    }

    pub fn a_max(&self) -> f64 {
        self.generators.iter().map(|g| g.a).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn a_min(&self) -> f64 {
        self.generators.iter().map(|g| g.a).fold(f64::INFINITY, f64::min)
    }

    /// Bus position of every generator. Panics on a dangling reference; call
    /// [`validate_case`] first for untrusted input.
    pub fn generator_buses(&self) -> Vec<usize> {
        self.generators
            .iter()
            .map(|g| self.bus_index(g.bus).expect("generator bus exists"))
            .collect()
    }

    /// Generators grouped by bus position.
    pub fn generators_at_buses(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_buses()];
        for (n, bus) in self.generator_buses().into_iter().enumerate() {
            groups[bus].push(n);
        }
        groups
    }
}

/// Sum of all bus loads.
pub fn total_load(case: &NetworkCase) -> f64 {
    case.buses.iter().map(|b| b.load).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrices {
    /// Bus-by-line signed incidence: +1 at the sending bus, -1 at the receiving bus.
    pub j1: DMatrix<f64>,
    /// Bus-by-generator assignment.
    pub j2: DMatrix<f64>,
    /// `[I; -I]` over lines.
    pub j3: DMatrix<f64>,
    /// `(zbar, zbar)`.
    pub zbar_c: DVector<f64>,
    /// Loads in bus order.
    pub y: DVector<f64>,
}

impl ConstraintMatrices {
    /// `J1 z - J2 x + y`, one entry per bus.
    pub fn flow_balance_residual(&self, x: &[f64], z: &[f64]) -> DVector<f64> {
        let x = DVector::from_column_slice(x);
        let z = DVector::from_column_slice(z);
        &self.j1 * z - &self.j2 * x + &self.y
    }

    /// `J3 z - zbar_c`; nonpositive exactly when every flow is within its limit.
    pub fn limit_slack(&self, z: &[f64]) -> DVector<f64> {
        let z = DVector::from_column_slice(z);
        &self.j3 * z - &self.zbar_c
    }
}

pub fn build_matrices(case: &NetworkCase) -> Result<ConstraintMatrices> {
    let report = validate_case(case);
    if let Some(first) = report.structural_errors.first() {
        return Err(Error::Structure(first.clone()));
    }
    let nb = case.n_buses();
    let ne = case.n_lines();
    let ng = case.n_generators();
    let mut j1 = DMatrix::zeros(nb, ne);
    for (e, line) in case.lines.iter().enumerate() {
        let from = case.bus_index(line.from_bus).expect("validated");
        let to = case.bus_index(line.to_bus).expect("validated");
        j1[(from, e)] = 1.0;
        j1[(to, e)] = -1.0;
    }
    let mut j2 = DMatrix::zeros(nb, ng);
    for (n, bus) in case.generator_buses().into_iter().enumerate() {
        j2[(bus, n)] = 1.0;
    }
    let mut j3 = DMatrix::zeros(2 * ne, ne);
    for e in 0..ne {
        j3[(e, e)] = 1.0;
        j3[(ne + e, e)] = -1.0;
    }
    let limits = case.limits();
    let zbar_c = DVector::from_iterator(2 * ne, limits.iter().chain(limits.iter()).copied());
    let y = DVector::from_vec(case.loads());
    Ok(ConstraintMatrices {
        j1,
        j2,
        j3,
        zbar_c,
        y,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Dangling references, duplicate ids and broken field invariants.
    pub structural_errors: Vec<String>,
    /// Buses (by id) hosting exactly one generator. Existence of an efficient
    /// Nash equilibrium needs zero or at least two generators per bus.
    pub single_generator_buses: Vec<u32>,
    pub total_load: f64,
}

impl ValidationReport {
    pub fn is_sound(&self) -> bool {
        self.structural_errors.is_empty()
    }

    pub fn existence_hypothesis_holds(&self) -> bool {
        self.single_generator_buses.is_empty()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.single_generator_buses
            .iter()
            .map(|id| {
                format!("bus {id} has a single generator; an efficient Nash equilibrium may not exist")
            })
            .collect()
    }
}

pub fn validate_case(case: &NetworkCase) -> ValidationReport {
    let mut errors = Vec::new();

    let mut bus_ids = HashSet::new();
    for bus in &case.buses {
        if !bus_ids.insert(bus.id) {
            errors.push(format!("duplicate bus id {}", bus.id));
        }
        if !(bus.load.is_finite() && bus.load >= 0.0) {
            errors.push(format!("bus {} has invalid load {}", bus.id, bus.load));
        }
    }

    let mut pairs = HashSet::new();
    for (e, line) in case.lines.iter().enumerate() {
        let name = format!("line #{} ({} -> {})", e + 1, line.from_bus, line.to_bus);
        for end in [line.from_bus, line.to_bus] {
            if !bus_ids.contains(&end) {
                errors.push(format!("{name} references missing bus {end}"));
            }
        }
        if line.from_bus == line.to_bus {
            errors.push(format!("{name} is a self-loop"));
        }
        if !(line.limit.is_finite() && line.limit > 0.0) {
            errors.push(format!("{name} has non-positive limit {}", line.limit));
        }
        if !pairs.insert((line.from_bus, line.to_bus)) {
            errors.push(format!("{name} is parallel to an earlier line"));
        }
    }

    let mut gen_ids = HashSet::new();
    let mut per_bus: HashMap<u32, usize> = HashMap::new();
    for g in &case.generators {
        if !gen_ids.insert(g.id) {
            errors.push(format!("duplicate generator id {}", g.id));
        }
        if !bus_ids.contains(&g.bus) {
            errors.push(format!("generator {} references missing bus {}", g.id, g.bus));
        } else {
            *per_bus.entry(g.bus).or_default() += 1;
        }
        if !(g.a.is_finite() && g.a > 0.0) {
            errors.push(format!("generator {} has non-positive a = {}", g.id, g.a));
        }
        if !(g.c.is_finite() && g.c >= 0.0) {
            errors.push(format!("generator {} has negative c = {}", g.id, g.c));
        }
    }

    let single_generator_buses = case
        .buses
        .iter()
        .filter(|b| per_bus.get(&b.id) == Some(&1))
        .map(|b| b.id)
        .collect();

    ValidationReport {
        structural_errors: errors,
        single_generator_buses,
        total_load: total_load(case),
    }
}

/// A set of buses whose load cannot be served: it hosts no generator and the
/// lines leaving it cannot import enough power.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityCertificate {
    pub buses: Vec<u32>,
    pub load: f64,
    pub import_capacity: f64,
}

impl fmt::Display for InfeasibilityCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "buses {:?} carry load {} but the lines into them can import at most {}",
            self.buses, self.load, self.import_capacity
        )
    }
}

/// Checks that the loads can be served, returning the violated cut otherwise.
///
/// Generators have no capacity bound, so this is a max-flow problem from the
/// generating buses to the loads over undirected line capacities.
pub fn check_feasible(case: &NetworkCase) -> Result<()> {
    let report = validate_case(case);
    if let Some(first) = report.structural_errors.first() {
        return Err(Error::Structure(first.clone()));
    }
    let nb = case.n_buses();
    let source = nb;
    let sink = nb + 1;
    let total = total_load(case);
    let unbounded = total + case.limits().iter().sum::<f64>() + 1.0;

    let mut cap = vec![vec![0.0f64; nb + 2]; nb + 2];
    for bus in case.generator_buses() {
        cap[source][bus] = unbounded;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        cap[i][sink] += bus.load;
    }
    for line in &case.lines {
        let u = case.bus_index(line.from_bus).expect("validated");
        let v = case.bus_index(line.to_bus).expect("validated");
        cap[u][v] += line.limit;
        cap[v][u] += line.limit;
    }

    let flow = max_flow(&mut cap, source, sink);
    let tol = 1e-9 * (1.0 + total);
    if flow >= total - tol {
        return Ok(());
    }

    // Buses not reachable from the source in the residual graph form the deficit side.
    let reachable = residual_reachable(&cap, source);
    let deficit: Vec<usize> = (0..nb).filter(|&i| !reachable[i]).collect();
    let load = deficit.iter().map(|&i| case.buses[i].load).sum();
    let import_capacity = case
        .lines
        .iter()
        .filter(|l| {
            let u = case.bus_index(l.from_bus).unwrap();
            let v = case.bus_index(l.to_bus).unwrap();
            reachable[u] != reachable[v]
        })
        .map(|l| l.limit)
        .sum();
    Err(Error::Infeasible(InfeasibilityCertificate {
        buses: deficit.iter().map(|&i| case.buses[i].id).collect(),
        load,
        import_capacity,
    }))
}

/// Edmonds-Karp on a dense residual capacity matrix (modified in place).
fn max_flow(cap: &mut [Vec<f64>], source: usize, sink: usize) -> f64 {
    let n = cap.len();
    let mut total = 0.0;
    loop {
        let mut parent = vec![usize::MAX; n];
        parent[source] = source;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if parent[v] == usize::MAX && cap[u][v] > 1e-12 {
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if parent[sink] == usize::MAX {
            return total;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = sink;
        while v != source {
            let u = parent[v];
            bottleneck = bottleneck.min(cap[u][v]);
            v = u;
        }
        let mut v = sink;
        while v != source {
            let u = parent[v];
            cap[u][v] -= bottleneck;
            cap[v][u] += bottleneck;
            v = u;
        }
        total += bottleneck;
    }
}

fn residual_reachable(cap: &[Vec<f64>], source: usize) -> Vec<bool> {
    let n = cap.len();
    let mut seen = vec![false; n];
    seen[source] = true;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if !seen[v] && cap[u][v] > 1e-12 {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

pub const IEEE9_MODIFIED: &str = "ieee9-modified";
pub const IEEE9_AS_PRINTED: &str = "ieee9-as-printed";

/// Names accepted by [`preset`].
pub fn preset_names() -> &'static [&'static str] {
    &[IEEE9_MODIFIED, IEEE9_AS_PRINTED]
}

pub fn preset(name: &str) -> Option<NetworkCase> {
    match name {
        IEEE9_MODIFIED => Some(ieee9_modified()),
        IEEE9_AS_PRINTED => Some(ieee9_with_loads([2.0, 3.0, 1.0])),
        _ => None,
    }
}

/// The IEEE 9-bus system with a second generator at each generating bus.
///
/// Loads are 2, 3 and 2 at buses 5, 7 and 9: total demand 7, which is what the
/// reference dispatch `x* = (1.4268, 0.0732, 0.2703, 2.2297, 1.8987, 1.1013)`
/// balances. See [`IEEE9_AS_PRINTED`] for the variant with load 1 at bus 9.
pub fn ieee9_modified() -> NetworkCase {
    ieee9_with_loads([2.0, 3.0, 2.0])
}

fn ieee9_with_loads(loads: [f64; 3]) -> NetworkCase {
    let mut buses: Vec<Bus> = (1..=9).map(|id| Bus { id, load: 0.0 }).collect();
    buses[4].load = loads[0];
    buses[6].load = loads[1];
    buses[8].load = loads[2];

    let edges = [
        (1, 4, 2.5),
        (4, 5, 2.5),
        (5, 6, 1.5),
        (3, 6, 3.0),
        (6, 7, 1.5),
        (7, 8, 2.5),
        (8, 2, 2.5),
        (8, 9, 2.5),
        (9, 4, 2.5),
    ];
    let lines = edges
        .iter()
        .map(|&(from_bus, to_bus, limit)| Line {
            from_bus,
            to_bus,
            limit,
        })
        .collect();

    let a = [0.1100, 0.0950, 0.0850, 0.1000, 0.1225, 0.0750];
    let c = [3.5, 3.8, 1.2, 0.8, 1.0, 1.3];
    let generators = (0..6)
        .map(|n| Generator {
            id: n as u32 + 1,
            bus: n as u32 / 2 + 1,
            a: a[n],
            c: c[n],
        })
        .collect();

    NetworkCase {
        buses,
        lines,
        generators,
    }
}
