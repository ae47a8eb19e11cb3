//! In-memory transmission network model (per-unit) and the impedance /
//! admittance conversions on branch parameters.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    /// Nominal voltage; 0 when the source file leaves it unset.
    pub base_kv: f64,
    pub vmin: f64,
    pub vmax: f64,
    /// Shunt conductance (p.u. active power consumed at 1 p.u. voltage).
    pub shunt_g: f64,
    /// Shunt susceptance (p.u. reactive power injected at 1 p.u. voltage).
    pub shunt_b: f64,
    pub is_slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// 1-based row of the branch in its source case.
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance; each end of the Π model carries half.
    pub b_sh: f64,
    pub g_sh: f64,
    /// Off-nominal turns ratio, 1.0 for lines.
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    /// Apparent-power limit in p.u.; 0 means unconstrained.
    pub rate_a: f64,
    pub ang_min: f64,
    pub ang_max: f64,
    pub status: bool,
}

impl Branch {
    pub fn admittance(&self) -> Result<BranchAdmittance, ModelError> {
        let (g, b) =
            to_series_admittance(self.r, self.x).map_err(|_| ModelError::DegenerateBranch { id: self.id })?;
        Ok(BranchAdmittance {
            g,
            b,
            b_sh: self.b_sh,
        })
    }
}

/// Series conductance/susceptance and total shunt susceptance of a branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchAdmittance {
    pub g: f64,
    pub b: f64,
    pub b_sh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// 1-based row of the generator in its source case.
    pub id: usize,
    pub bus: usize,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    /// Cost coefficients on MW output: `c2·P² + c1·P + c0` in $/h.
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub status: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub pd: f64,
    pub qd: f64,
}

/// A network description in per-unit on `base_mva`. Only in-service
/// branches and generators are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroImpedance;

/// `1 / (r + jx)` split into `(g, b)`.
pub fn to_series_admittance(r: f64, x: f64) -> Result<(f64, f64), ZeroImpedance> {
    let d = r * r + x * x;
    if d == 0.0 {
        return Err(ZeroImpedance);
    }
    Ok((r / d, -x / d))
}

/// `1 / (g + jb)` split into `(r, x)`.
pub fn to_series_impedance(g: f64, b: f64) -> Result<(f64, f64), ZeroImpedance> {
    let d = g * g + b * b;
    if d == 0.0 {
        return Err(ZeroImpedance);
    }
    Ok((g / d, -b / d))
}

/// Branch data that is not protected: endpoints, transformer settings and
/// limits, but no series or shunt admittance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicBranch {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub tap: f64,
    pub shift: f64,
    pub rate_a: f64,
    pub ang_min: f64,
    pub ang_max: f64,
}

/// A network with the protected branch admittances removed. This is all the
/// restoration stage may see of the original case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicNetwork {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<PublicBranch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

impl PublicNetwork {
    pub fn bus_index(&self) -> HashMap<usize, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn is_connected(&self) -> bool {
        let idx = self.bus_index();
        let edges = self
            .branches
            .iter()
            .filter_map(|br| Some((*idx.get(&br.from_bus)?, *idx.get(&br.to_bus)?)));
        connected(self.buses.len(), edges)
    }

    pub fn total_demand(&self) -> f64 {
        self.loads.iter().map(|l| l.pd).sum()
    }
}

fn connected(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    if n == 0 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for (f, t) in edges {
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut seen = BTreeSet::from([0usize]);
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if seen.insert(j) {
                stack.push(j);
            }
        }
    }
    seen.len() == n
}

/// Branches grouped by voltage level.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageLevel {
    pub kv: f64,
    /// Positions in `NetworkCase::branches`, ascending.
    pub branches: Vec<usize>,
}

impl VoltageLevel {
    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }
}

impl NetworkCase {
    pub fn bus_index(&self) -> HashMap<usize, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn admittances(&self) -> Result<Vec<BranchAdmittance>, ModelError> {
        self.branches.iter().map(Branch::admittance).collect()
    }

    /// Voltage level of a branch: the higher of its two endpoint base voltages.
    pub fn branch_kv(&self, branch: &Branch) -> f64 {
        let idx = self.bus_index();
        let kv = |id: usize| idx.get(&id).map_or(0.0, |&i| self.buses[i].base_kv);
        kv(branch.from_bus).max(kv(branch.to_bus))
    }

    /// Partition of in-service branches by voltage level, ordered by kV.
    pub fn voltage_levels(&self) -> Vec<VoltageLevel> {
        let idx = self.bus_index();
        let kv = |id: usize| idx.get(&id).map_or(0.0, |&i| self.buses[i].base_kv);
        let mut groups: BTreeMap<u64, (f64, Vec<usize>)> = BTreeMap::new();
        for (pos, br) in self.branches.iter().enumerate() {
            if !br.status {
                continue;
            }
            let level = kv(br.from_bus).max(kv(br.to_bus));
            groups
                .entry(level.to_bits())
                .or_insert_with(|| (level, Vec::new()))
                .1
                .push(pos);
        }
        let mut out: Vec<VoltageLevel> = groups
            .into_values()
            .map(|(kv, branches)| VoltageLevel { kv, branches })
            .collect();
        out.sort_by(|a, b| a.kv.total_cmp(&b.kv));
        out
    }

    /// Checks references, bounds and single-slack connectivity.
    pub fn validate(&self) -> Result<(), ModelError> {
        let idx = self.bus_index();
        if idx.len() != self.buses.len() {
            return Err(ModelError::Invalid("duplicate bus ids".into()));
        }
        for b in &self.buses {
            if !(b.vmin > 0.0 && b.vmin <= b.vmax) {
                return Err(ModelError::Invalid(format!(
                    "bus {}: voltage bounds [{}, {}]",
                    b.id, b.vmin, b.vmax
                )));
            }
            // some published cases leave baseKV at 0; it then forms its own level
            if b.base_kv.is_nan() || b.base_kv < 0.0 {
                return Err(ModelError::Invalid(format!(
                    "bus {}: base_kv {}",
                    b.id, b.base_kv
                )));
            }
        }
        let mut dangling = Vec::new();
        for br in &self.branches {
            if !idx.contains_key(&br.from_bus) || !idx.contains_key(&br.to_bus) {
                dangling.push(format!("branch {}", br.id));
            }
            if br.status && br.r * br.r + br.x * br.x == 0.0 {
                return Err(ModelError::DegenerateBranch { id: br.id });
            }
            if br.tap <= 0.0 {
                return Err(ModelError::Invalid(format!("branch {}: tap {}", br.id, br.tap)));
            }
        }
        for g in &self.generators {
            if !idx.contains_key(&g.bus) {
                dangling.push(format!("generator {}", g.id));
            }
            if g.pmin > g.pmax || g.qmin > g.qmax {
                return Err(ModelError::Invalid(format!(
                    "generator {}: inverted limits",
                    g.id
                )));
            }
        }
        for l in &self.loads {
            if !idx.contains_key(&l.bus) {
                dangling.push(format!("load at bus {}", l.bus));
            }
        }
        if !dangling.is_empty() {
            return Err(ModelError::DanglingReferences(dangling));
        }
        let slack = self.buses.iter().filter(|b| b.is_slack).count();
        if slack != 1 {
            return Err(ModelError::Invalid(format!(
                "expected one slack bus, found {slack}"
            )));
        }
        if !self.is_connected() {
            return Err(ModelError::Disconnected);
        }
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        let idx = self.bus_index();
        let edges = self
            .branches
            .iter()
            .filter(|b| b.status)
            .filter_map(|br| Some((*idx.get(&br.from_bus)?, *idx.get(&br.to_bus)?)));
        connected(self.buses.len(), edges)
    }

    /// The case without branch admittances.
    pub fn public_view(&self) -> PublicNetwork {
        PublicNetwork {
            name: self.name.clone(),
            base_mva: self.base_mva,
            buses: self.buses.clone(),
            branches: self
                .branches
                .iter()
                .filter(|b| b.status)
                .map(|b| PublicBranch {
                    id: b.id,
                    from_bus: b.from_bus,
                    to_bus: b.to_bus,
                    tap: b.tap,
                    shift: b.shift,
                    rate_a: b.rate_a,
                    ang_min: b.ang_min,
                    ang_max: b.ang_max,
                })
                .collect(),
            generators: self.generators.iter().filter(|g| g.status).cloned().collect(),
            loads: self.loads.clone(),
        }
    }

    pub fn total_demand(&self) -> f64 {
        self.loads.iter().map(|l| l.pd).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    #[test]
    fn admittance_examples() {
        assert_eq!(to_series_admittance(0.0, 0.5).unwrap(), (0.0, -2.0));
        let (g, b) = to_series_admittance(3.0, 4.0).unwrap();
        assert!((g - 0.12).abs() < 1e-15 && (b + 0.16).abs() < 1e-15);
        assert_eq!(to_series_admittance(0.0, 0.0), Err(ZeroImpedance));
    }

    #[test]
    fn admittance_matches_complex_reciprocal() {
        let (r, x) = (0.01938, 0.05917);
        let y = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
        let (g, b) = to_series_admittance(r, x).unwrap();
        assert!((g - y.re).abs() <= 1e-12 * y.re.abs());
        assert!((b - y.im).abs() <= 1e-12 * y.im.abs());
    }

    #[test]
    fn impedance_examples() {
        assert_eq!(to_series_impedance(0.0, -2.0).unwrap(), (0.0, 0.5));
        let (r, x) = to_series_impedance(0.12, -0.16).unwrap();
        assert!((r - 3.0).abs() < 1e-12 && (x - 4.0).abs() < 1e-12);
        assert_eq!(to_series_impedance(0.0, 0.0), Err(ZeroImpedance));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn round_trip_identity(r in 1e-9f64..=1.0, x in 1e-9f64..=1.0) {
            let (g, b) = to_series_admittance(r, x).unwrap();
            prop_assert!(g >= 0.0 && b < 0.0);
            let (r2, x2) = to_series_impedance(g, b).unwrap();
            prop_assert!((r2 - r).abs() <= 1e-12 * r);
            prop_assert!((x2 - x).abs() <= 1e-12 * x);
        }
    }

    fn bus(id: usize, kv: f64) -> Bus {
        Bus {
            id,
            base_kv: kv,
            vmin: 0.9,
            vmax: 1.1,
            shunt_g: 0.0,
            shunt_b: 0.0,
            is_slack: id == 1,
        }
    }

    fn line(id: usize, f: usize, t: usize) -> Branch {
        Branch {
            id,
            from_bus: f,
            to_bus: t,
            r: 0.01,
            x: 0.1,
            b_sh: 0.02,
            g_sh: 0.0,
            tap: 1.0,
            shift: 0.0,
            rate_a: 0.0,
            ang_min: -std::f64::consts::FRAC_PI_2,
            ang_max: std::f64::consts::FRAC_PI_2,
            status: true,
        }
    }

    fn case(buses: Vec<Bus>, branches: Vec<Branch>) -> NetworkCase {
        NetworkCase {
            name: "t".into(),
            base_mva: 100.0,
            buses,
            branches,
            generators: vec![],
            loads: vec![],
        }
    }

    #[test]
    fn single_level() {
        let c = case(
            vec![bus(1, 138.0), bus(2, 138.0), bus(3, 138.0)],
            vec![line(1, 1, 2), line(2, 2, 3), line(3, 1, 3)],
        );
        let lv = c.voltage_levels();
        assert_eq!(lv.len(), 1);
        assert_eq!(lv[0].branches, vec![0, 1, 2]);
    }

    #[test]
    fn transformer_goes_to_higher_level() {
        let c = case(
            vec![bus(1, 138.0), bus(2, 138.0), bus(3, 69.0), bus(4, 69.0)],
            vec![line(1, 1, 2), line(2, 2, 3), line(3, 3, 4)],
        );
        let lv = c.voltage_levels();
        assert_eq!(lv.len(), 2);
        assert_eq!(lv[0].kv, 69.0);
        assert_eq!(lv[0].branches, vec![2]);
        assert_eq!(lv[1].kv, 138.0);
        assert_eq!(lv[1].branches, vec![0, 1]);
    }

    #[test]
    fn out_of_service_branches_excluded() {
        let mut off = line(2, 2, 3);
        off.status = false;
        let c = case(
            vec![bus(1, 138.0), bus(2, 138.0), bus(3, 138.0)],
            vec![line(1, 1, 2), off],
        );
        let lv = c.voltage_levels();
        assert_eq!(lv[0].branches, vec![0]);
        assert_eq!(c.public_view().branches.len(), 1);
    }

    #[test]
    fn validation_errors() {
        let c = case(vec![bus(1, 138.0), bus(2, 138.0)], vec![line(1, 1, 5)]);
        assert!(matches!(c.validate(), Err(ModelError::DanglingReferences(_))));
        let c = case(
            vec![bus(1, 138.0), bus(2, 138.0), bus(3, 138.0)],
            vec![line(1, 1, 2)],
        );
        assert!(matches!(c.validate(), Err(ModelError::Disconnected)));
        let mut z = line(1, 1, 2);
        z.r = 0.0;
        z.x = 0.0;
        let c = case(vec![bus(1, 138.0), bus(2, 138.0)], vec![z]);
        assert!(matches!(
            c.validate(),
            Err(ModelError::DegenerateBranch { id: 1 })
        ));
    }
}
