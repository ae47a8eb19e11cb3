//! AC optimal power flow in polar form as an [`NlpProblem`].
//!
//! Variables are laid out as `[Va | Vm | Pg | Qg]` followed, when branch
//! admittances are decision variables, by `(g, b, b_sh)` per branch.
//! Equality rows: slack angle, then active and reactive balance per bus.
//! Inequality rows: two angle-difference rows per branch, two squared
//! apparent-power rows per rated branch, and optionally two rows bounding
//! the grid loss.

use gridpriv_nlp::{NlpError, NlpProblem, SolveReport, SolveStatus, SolverOptions, Triplets};
use serde::{Deserialize, Serialize};

use crate::ad::Jet;
use crate::error::ModelError;
use crate::net_model::{BranchAdmittance, NetworkCase, PublicNetwork};

/// Objective of a baseline OPF solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveArm {
    /// Generation cost in $/h.
    Cost,
    /// Total generation minus total demand, p.u.
    Loss,
}

impl ObjectiveArm {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveArm::Cost => "cost",
            ObjectiveArm::Loss => "loss",
        }
    }
}

impl std::fmt::Display for ObjectiveArm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpfObjective {
    Cost,
    Loss,
    /// `Σ (g - g̃)² + (b - b̃)²`, plus `(b_sh - b̃_sh)²` when enabled.
    AdmittanceDistance,
}

impl From<ObjectiveArm> for OpfObjective {
    fn from(a: ObjectiveArm) -> Self {
        match a {
            ObjectiveArm::Cost => OpfObjective::Cost,
            ObjectiveArm::Loss => OpfObjective::Loss,
        }
    }
}

/// Boxes and targets for admittances that are decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableAdmittances {
    pub lower: Vec<BranchAdmittance>,
    pub upper: Vec<BranchAdmittance>,
    pub target: Vec<BranchAdmittance>,
    pub shunt_in_objective: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdmittanceMode {
    Fixed(Vec<BranchAdmittance>),
    Variable(VariableAdmittances),
}

/// Active and reactive flow into a branch at each end (p.u.).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub pf: f64,
    pub qf: f64,
    pub pt: f64,
    pub qt: f64,
}

#[allow(clippy::too_many_arguments)]
fn flow_jets<const N: usize>(
    va_i: Jet<N>,
    va_j: Jet<N>,
    vm_i: Jet<N>,
    vm_j: Jet<N>,
    g: Jet<N>,
    b: Jet<N>,
    b_sh: Jet<N>,
    tap: f64,
    shift: f64,
) -> [Jet<N>; 4] {
    let th = va_i - va_j + (-shift);
    let (c, s) = (th.cos(), th.sin());
    let vii = (vm_i * vm_i).scale(1.0 / (tap * tap));
    let vjj = vm_j * vm_j;
    let vij = (vm_i * vm_j).scale(1.0 / tap);
    let bh = b + b_sh.scale(0.5);
    let pf = g * vii - vij * (g * c + b * s);
    let qf = -(bh * vii) - vij * (g * s - b * c);
    let pt = g * vjj - vij * (g * c - b * s);
    let qt = -(bh * vjj) + vij * (g * s + b * c);
    [pf, qf, pt, qt]
}

/// Π-model branch flow with off-nominal tap `tap` and phase shift `shift`
/// on the from side, shunt `b_sh/2` at each end.
pub fn branch_flow(
    adm: BranchAdmittance,
    tap: f64,
    shift: f64,
    vm_i: f64,
    va_i: f64,
    vm_j: f64,
    va_j: f64,
) -> BranchFlow {
    let c = Jet::<0>::constant;
    let [pf, qf, pt, qt] = flow_jets(
        c(va_i),
        c(va_j),
        c(vm_i),
        c(vm_j),
        c(adm.g),
        c(adm.b),
        c(adm.b_sh),
        tap,
        shift,
    );
    BranchFlow {
        pf: pf.v,
        qf: qf.v,
        pt: pt.v,
        qt: qt.v,
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BranchData {
    f: usize,
    t: usize,
    tap: f64,
    shift: f64,
    rate: f64,
    ang_min: f64,
    ang_max: f64,
}

/// An AC-OPF instance.
#[derive(Debug, Clone)]
pub struct OpfModel {
    nb: usize,
    ng: usize,
    nl: usize,
    slack: usize,
    vmin: Vec<f64>,
    vmax: Vec<f64>,
    gs: Vec<f64>,
    bs: Vec<f64>,
    pd: Vec<f64>,
    qd: Vec<f64>,
    total_pd: f64,
    gen_bus: Vec<usize>,
    pmin: Vec<f64>,
    pmax: Vec<f64>,
    qmin: Vec<f64>,
    qmax: Vec<f64>,
    /// Per-unit cost coefficients `[c2, c1, c0]` on p.u. output.
    cost: Vec<[f64; 3]>,
    br: Vec<BranchData>,
    thermal: Vec<usize>,
    mode: AdmittanceMode,
    objective: OpfObjective,
    loss_band: Option<(f64, f64)>,
}

impl OpfModel {
    /// Builds the OPF over `net`. `loss_band = Some((lo, hi))` adds
    /// `lo ≤ ΣPg − ΣPd ≤ hi`.
    pub fn new(
        net: &PublicNetwork,
        mode: AdmittanceMode,
        objective: OpfObjective,
        loss_band: Option<(f64, f64)>,
    ) -> Result<Self, ModelError> {
        let idx = net.bus_index();
        let nb = net.buses.len();
        let nl = net.branches.len();
        let adm_len = match &mode {
            AdmittanceMode::Fixed(a) => a.len(),
            AdmittanceMode::Variable(v) => {
                if v.lower.len() != nl || v.upper.len() != nl {
                    return Err(ModelError::Invalid("admittance bounds length".into()));
                }
                v.target.len()
            }
        };
        if adm_len != nl {
            return Err(ModelError::Invalid(format!(
                "{adm_len} admittances for {nl} branches"
            )));
        }
        if objective == OpfObjective::AdmittanceDistance && matches!(mode, AdmittanceMode::Fixed(_)) {
            return Err(ModelError::Invalid(
                "admittance distance needs variable admittances".into(),
            ));
        }
        let slacks: Vec<usize> = (0..nb).filter(|&i| net.buses[i].is_slack).collect();
        if slacks.len() != 1 {
            return Err(ModelError::Invalid(format!(
                "expected one slack bus, found {}",
                slacks.len()
            )));
        }
        let mut dangling = Vec::new();
        let lookup = |id: usize, what: String, dangling: &mut Vec<String>| {
            idx.get(&id).copied().unwrap_or_else(|| {
                dangling.push(what);
                0
            })
        };
        let mut pd = vec![0.0; nb];
        let mut qd = vec![0.0; nb];
        for l in &net.loads {
            let i = lookup(l.bus, format!("load at bus {}", l.bus), &mut dangling);
            pd[i] += l.pd;
            qd[i] += l.qd;
        }
        let gens: Vec<_> = net.generators.iter().filter(|g| g.status).collect();
        let gen_bus = gens
            .iter()
            .map(|g| lookup(g.bus, format!("generator {}", g.id), &mut dangling))
            .collect();
        let base = net.base_mva;
        let br: Vec<BranchData> = net
            .branches
            .iter()
            .map(|b| BranchData {
                f: lookup(b.from_bus, format!("branch {}", b.id), &mut dangling),
                t: lookup(b.to_bus, format!("branch {}", b.id), &mut dangling),
                tap: b.tap,
                shift: b.shift,
                rate: b.rate_a,
                ang_min: b.ang_min,
                ang_max: b.ang_max,
            })
            .collect();
        if !dangling.is_empty() {
            return Err(ModelError::DanglingReferences(dangling));
        }
        if !net.is_connected() {
            return Err(ModelError::Disconnected);
        }
        Ok(Self {
            nb,
            ng: gens.len(),
            nl,
            slack: slacks[0],
            vmin: net.buses.iter().map(|b| b.vmin).collect(),
            vmax: net.buses.iter().map(|b| b.vmax).collect(),
            gs: net.buses.iter().map(|b| b.shunt_g).collect(),
            bs: net.buses.iter().map(|b| b.shunt_b).collect(),
            total_pd: pd.iter().sum(),
            pd,
            qd,
            gen_bus,
            pmin: gens.iter().map(|g| g.pmin).collect(),
            pmax: gens.iter().map(|g| g.pmax).collect(),
            qmin: gens.iter().map(|g| g.qmin).collect(),
            qmax: gens.iter().map(|g| g.qmax).collect(),
            cost: gens
                .iter()
                .map(|g| [g.c2 * base * base, g.c1 * base, g.c0])
                .collect(),
            thermal: (0..nl).filter(|&l| br[l].rate > 0.0).collect(),
            br,
            mode,
            objective,
            loss_band,
        })
    }

    pub fn num_buses(&self) -> usize {
        self.nb
    }

    pub fn num_generators(&self) -> usize {
        self.ng
    }

    pub fn num_branches(&self) -> usize {
        self.nl
    }

    pub fn num_thermal_rows(&self) -> usize {
        2 * self.thermal.len()
    }

    fn variable_admittances(&self) -> bool {
        matches!(self.mode, AdmittanceMode::Variable(_))
    }

    pub fn iva(&self, i: usize) -> usize {
        i
    }

    pub fn ivm(&self, i: usize) -> usize {
        self.nb + i
    }

    pub fn ipg(&self, k: usize) -> usize {
        2 * self.nb + k
    }

    pub fn iqg(&self, k: usize) -> usize {
        2 * self.nb + self.ng + k
    }

    /// Index of branch `l`'s `g` (q = 0), `b` (1) or `b_sh` (2).
    pub fn iadm(&self, l: usize, q: usize) -> usize {
        2 * self.nb + 2 * self.ng + 3 * l + q
    }

    fn angle_row(&self, l: usize) -> usize {
        2 * l
    }

    fn thermal_row(&self, j: usize) -> usize {
        2 * self.nl + 2 * j
    }

    fn loss_row(&self) -> usize {
        2 * self.nl + 2 * self.thermal.len()
    }

    fn admittance_of(&self, x: &[f64], l: usize) -> BranchAdmittance {
        match &self.mode {
            AdmittanceMode::Fixed(a) => a[l],
            AdmittanceMode::Variable(_) => BranchAdmittance {
                g: x[self.iadm(l, 0)],
                b: x[self.iadm(l, 1)],
                b_sh: x[self.iadm(l, 2)],
            },
        }
    }

    /// Local variable indices and flow jets of branch `l`. `N` is 4 for
    /// fixed admittances and 7 when they are variables.
    fn local<const N: usize>(&self, x: &[f64], l: usize) -> ([usize; N], [Jet<N>; 4]) {
        let br = &self.br[l];
        let mut idx = [0usize; N];
        idx[0] = self.iva(br.f);
        idx[1] = self.iva(br.t);
        idx[2] = self.ivm(br.f);
        idx[3] = self.ivm(br.t);
        let v = |k: usize, pos: usize| Jet::<N>::var(x[k], pos);
        let (g, b, bsh) = match &self.mode {
            AdmittanceMode::Fixed(a) => (
                Jet::constant(a[l].g),
                Jet::constant(a[l].b),
                Jet::constant(a[l].b_sh),
            ),
            AdmittanceMode::Variable(_) => {
                debug_assert_eq!(N, 7);
                for q in 0..3 {
                    idx[4 + q] = self.iadm(l, q);
                }
                (v(idx[4], 4), v(idx[5], 5), v(idx[6], 6))
            }
        };
        let jets = flow_jets(
            v(idx[0], 0),
            v(idx[1], 1),
            v(idx[2], 2),
            v(idx[3], 3),
            g,
            b,
            bsh,
            br.tap,
            br.shift,
        );
        (idx, jets)
    }

    /// Flows on every branch at `x`.
    pub fn flows(&self, x: &[f64]) -> Vec<BranchFlow> {
        (0..self.nl)
            .map(|l| {
                let br = &self.br[l];
                branch_flow(
                    self.admittance_of(x, l),
                    br.tap,
                    br.shift,
                    x[self.ivm(br.f)],
                    x[self.iva(br.f)],
                    x[self.ivm(br.t)],
                    x[self.iva(br.t)],
                )
            })
            .collect()
    }

    /// `ΣPg − ΣPd` at `x`.
    pub fn loss_at(&self, x: &[f64]) -> f64 {
        (0..self.ng).map(|k| x[self.ipg(k)]).sum::<f64>() - self.total_pd
    }

    fn jacobians<const N: usize>(&self, x: &[f64]) -> (Triplets, Triplets) {
        let (nb, ng) = (self.nb, self.ng);
        let mut je = Triplets::with_capacity(self.num_eq(), x.len(), 1 + 4 * nb + 2 * ng + 4 * N * self.nl);
        let mut ji =
            Triplets::with_capacity(self.num_ineq(), x.len(), 4 * self.nl + 4 * N * self.thermal.len());
        je.push(0, self.iva(self.slack), 1.0);
        let prow = |i: usize| 1 + i;
        let qrow = |i: usize| 1 + nb + i;
        for i in 0..nb {
            je.push(prow(i), self.ivm(i), -2.0 * self.gs[i] * x[self.ivm(i)]);
            je.push(qrow(i), self.ivm(i), 2.0 * self.bs[i] * x[self.ivm(i)]);
        }
        for k in 0..ng {
            je.push(prow(self.gen_bus[k]), self.ipg(k), 1.0);
            je.push(qrow(self.gen_bus[k]), self.iqg(k), 1.0);
        }
        let mut thermal_pos = vec![usize::MAX; self.nl];
        for (j, &l) in self.thermal.iter().enumerate() {
            thermal_pos[l] = j;
        }
        for l in 0..self.nl {
            let br = &self.br[l];
            let (idx, [pf, qf, pt, qt]) = self.local::<N>(x, l);
            for a in 0..N {
                je.push(prow(br.f), idx[a], -pf.g[a]);
                je.push(qrow(br.f), idx[a], -qf.g[a]);
                je.push(prow(br.t), idx[a], -pt.g[a]);
                je.push(qrow(br.t), idx[a], -qt.g[a]);
            }
            let r = self.angle_row(l);
            ji.push(r, self.iva(br.f), 1.0);
            ji.push(r, self.iva(br.t), -1.0);
            ji.push(r + 1, self.iva(br.f), -1.0);
            ji.push(r + 1, self.iva(br.t), 1.0);
            if thermal_pos[l] != usize::MAX {
                let r = self.thermal_row(thermal_pos[l]);
                let sf = pf.sqr() + qf.sqr();
                let st = pt.sqr() + qt.sqr();
                for a in 0..N {
                    ji.push(r, idx[a], sf.g[a]);
                    ji.push(r + 1, idx[a], st.g[a]);
                }
            }
        }
        if self.loss_band.is_some() {
            let r = self.loss_row();
            for k in 0..ng {
                ji.push(r, self.ipg(k), -1.0);
                ji.push(r + 1, self.ipg(k), 1.0);
            }
        }
        (je, ji)
    }

    fn hessian_impl<const N: usize>(&self, x: &[f64], sigma: f64, lam: &[f64], mu: &[f64]) -> Triplets {
        let n = x.len();
        let mut h =
            Triplets::with_capacity(n, n, self.nb + self.ng + self.nl * N * (N + 1) / 2 + 3 * self.nl);
        let nb = self.nb;
        let lp = |i: usize| lam[1 + i];
        let lq = |i: usize| lam[1 + nb + i];
        for i in 0..nb {
            let v = -2.0 * self.gs[i] * lp(i) + 2.0 * self.bs[i] * lq(i);
            h.push(self.ivm(i), self.ivm(i), v);
        }
        if self.objective == OpfObjective::Cost {
            for k in 0..self.ng {
                h.push(self.ipg(k), self.ipg(k), sigma * 2.0 * self.cost[k][0]);
            }
        }
        if let (OpfObjective::AdmittanceDistance, AdmittanceMode::Variable(v)) = (self.objective, &self.mode)
        {
            for l in 0..self.nl {
                h.push(self.iadm(l, 0), self.iadm(l, 0), 2.0 * sigma);
                h.push(self.iadm(l, 1), self.iadm(l, 1), 2.0 * sigma);
                let w = if v.shunt_in_objective { 2.0 * sigma } else { 0.0 };
                h.push(self.iadm(l, 2), self.iadm(l, 2), w);
            }
        }
        let mut thermal_pos = vec![usize::MAX; self.nl];
        for (j, &l) in self.thermal.iter().enumerate() {
            thermal_pos[l] = j;
        }
        for l in 0..self.nl {
            let br = &self.br[l];
            let (idx, [pf, qf, pt, qt]) = self.local::<N>(x, l);
            let w = [-lp(br.f), -lq(br.f), -lp(br.t), -lq(br.t)];
            let mut local = [[0.0; N]; N];
            for (jet, wk) in [pf, qf, pt, qt].iter().zip(w) {
                for a in 0..N {
                    for b in 0..=a {
                        local[a][b] += wk * jet.h[a][b];
                    }
                }
            }
            if thermal_pos[l] != usize::MAX {
                let r = self.thermal_row(thermal_pos[l]);
                let sf = pf.sqr() + qf.sqr();
                let st = pt.sqr() + qt.sqr();
                for a in 0..N {
                    for b in 0..=a {
                        local[a][b] += mu[r] * sf.h[a][b] + mu[r + 1] * st.h[a][b];
                    }
                }
            }
            for a in 0..N {
                for b in 0..=a {
                    let (i, j) = (idx[a].max(idx[b]), idx[a].min(idx[b]));
                    h.push(i, j, local[a][b]);
                }
            }
        }
        h
    }

    /// Solves the instance and packages the result.
    pub fn solve(&self, opts: &SolverOptions) -> Result<OpfSolution, NlpError> {
        let sol = gridpriv_nlp::solve(self, opts)?;
        Ok(self.solution_from(&sol.x, sol.report))
    }

    pub fn solution_from(&self, x: &[f64], report: SolveReport) -> OpfSolution {
        let admittances = self
            .variable_admittances()
            .then(|| (0..self.nl).map(|l| self.admittance_of(x, l)).collect());
        OpfSolution {
            va: (0..self.nb).map(|i| x[self.iva(i)]).collect(),
            vm: (0..self.nb).map(|i| x[self.ivm(i)]).collect(),
            pg: (0..self.ng).map(|k| x[self.ipg(k)]).collect(),
            qg: (0..self.ng).map(|k| x[self.iqg(k)]).collect(),
            flows: self.flows(x),
            admittances,
            objective: self.objective(x),
            status: report.status,
            report,
        }
    }
}

impl NlpProblem for OpfModel {
    fn num_vars(&self) -> usize {
        2 * self.nb
            + 2 * self.ng
            + if self.variable_admittances() {
                3 * self.nl
            } else {
                0
            }
    }

    fn num_eq(&self) -> usize {
        1 + 2 * self.nb
    }

    fn num_ineq(&self) -> usize {
        2 * self.nl + 2 * self.thermal.len() + if self.loss_band.is_some() { 2 } else { 0 }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::NEG_INFINITY; self.nb];
        let mut hi = vec![f64::INFINITY; self.nb];
        lo.extend(&self.vmin);
        hi.extend(&self.vmax);
        lo.extend(&self.pmin);
        hi.extend(&self.pmax);
        lo.extend(&self.qmin);
        hi.extend(&self.qmax);
        if let AdmittanceMode::Variable(v) = &self.mode {
            for l in 0..self.nl {
                lo.extend([v.lower[l].g, v.lower[l].b, v.lower[l].b_sh]);
                hi.extend([v.upper[l].g, v.upper[l].b, v.upper[l].b_sh]);
            }
        }
        (lo, hi)
    }

    /// Flat voltage start, dispatch left to the bound midpoint and
    /// admittances at their targets projected into their boxes.
    fn initial_point(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.nb];
        x.extend((0..self.nb).map(|i| {
            if (self.vmin[i]..=self.vmax[i]).contains(&1.0) {
                1.0
            } else {
                f64::NAN
            }
        }));
        x.extend(std::iter::repeat_n(f64::NAN, 2 * self.ng));
        if let AdmittanceMode::Variable(v) = &self.mode {
            for l in 0..self.nl {
                let (t, lo, hi) = (v.target[l], v.lower[l], v.upper[l]);
                x.push(t.g.clamp(lo.g, hi.g));
                x.push(t.b.clamp(lo.b, hi.b));
                x.push(t.b_sh.clamp(lo.b_sh, hi.b_sh));
            }
        }
        x
    }

    fn objective(&self, x: &[f64]) -> f64 {
        match (&self.objective, &self.mode) {
            (OpfObjective::Cost, _) => (0..self.ng)
                .map(|k| {
                    let p = x[self.ipg(k)];
                    let [c2, c1, c0] = self.cost[k];
                    c2 * p * p + c1 * p + c0
                })
                .sum(),
            (OpfObjective::Loss, _) => self.loss_at(x),
            (OpfObjective::AdmittanceDistance, AdmittanceMode::Variable(v)) => (0..self.nl)
                .map(|l| {
                    let a = self.admittance_of(x, l);
                    let t = v.target[l];
                    let mut d = (a.g - t.g).powi(2) + (a.b - t.b).powi(2);
                    if v.shunt_in_objective {
                        d += (a.b_sh - t.b_sh).powi(2);
                    }
                    d
                })
                .sum(),
            (OpfObjective::AdmittanceDistance, AdmittanceMode::Fixed(_)) => 0.0,
        }
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        match (&self.objective, &self.mode) {
            (OpfObjective::Cost, _) => {
                for k in 0..self.ng {
                    let [c2, c1, _] = self.cost[k];
                    grad[self.ipg(k)] = 2.0 * c2 * x[self.ipg(k)] + c1;
                }
            }
            (OpfObjective::Loss, _) => {
                for k in 0..self.ng {
                    grad[self.ipg(k)] = 1.0;
                }
            }
            (OpfObjective::AdmittanceDistance, AdmittanceMode::Variable(v)) => {
                for l in 0..self.nl {
                    let t = v.target[l];
                    grad[self.iadm(l, 0)] = 2.0 * (x[self.iadm(l, 0)] - t.g);
                    grad[self.iadm(l, 1)] = 2.0 * (x[self.iadm(l, 1)] - t.b);
                    if v.shunt_in_objective {
                        grad[self.iadm(l, 2)] = 2.0 * (x[self.iadm(l, 2)] - t.b_sh);
                    }
                }
            }
            (OpfObjective::AdmittanceDistance, AdmittanceMode::Fixed(_)) => {}
        }
    }

    fn eq_constraints(&self, x: &[f64], out: &mut [f64]) {
        let nb = self.nb;
        out[0] = x[self.iva(self.slack)];
        for i in 0..nb {
            let vm2 = x[self.ivm(i)].powi(2);
            out[1 + i] = -self.pd[i] - self.gs[i] * vm2;
            out[1 + nb + i] = -self.qd[i] + self.bs[i] * vm2;
        }
        for k in 0..self.ng {
            out[1 + self.gen_bus[k]] += x[self.ipg(k)];
            out[1 + nb + self.gen_bus[k]] += x[self.iqg(k)];
        }
        for (l, fl) in self.flows(x).iter().enumerate() {
            let br = &self.br[l];
            out[1 + br.f] -= fl.pf;
            out[1 + nb + br.f] -= fl.qf;
            out[1 + br.t] -= fl.pt;
            out[1 + nb + br.t] -= fl.qt;
        }
    }

    fn ineq_constraints(&self, x: &[f64], out: &mut [f64]) {
        for (l, br) in self.br.iter().enumerate() {
            let th = x[self.iva(br.f)] - x[self.iva(br.t)];
            out[self.angle_row(l)] = th - br.ang_max;
            out[self.angle_row(l) + 1] = br.ang_min - th;
        }
        let flows = self.flows(x);
        for (j, &l) in self.thermal.iter().enumerate() {
            let fl = flows[l];
            let r2 = self.br[l].rate.powi(2);
            out[self.thermal_row(j)] = fl.pf * fl.pf + fl.qf * fl.qf - r2;
            out[self.thermal_row(j) + 1] = fl.pt * fl.pt + fl.qt * fl.qt - r2;
        }
        if let Some((lo, hi)) = self.loss_band {
            let loss = self.loss_at(x);
            out[self.loss_row()] = lo - loss;
            out[self.loss_row() + 1] = loss - hi;
        }
    }

    fn eq_jacobian(&self, x: &[f64]) -> Triplets {
        if self.variable_admittances() {
            self.jacobians::<7>(x).0
        } else {
            self.jacobians::<4>(x).0
        }
    }

    fn ineq_jacobian(&self, x: &[f64]) -> Triplets {
        if self.variable_admittances() {
            self.jacobians::<7>(x).1
        } else {
            self.jacobians::<4>(x).1
        }
    }

    fn hessian(&self, x: &[f64], sigma: f64, lam: &[f64], mu: &[f64]) -> Option<Triplets> {
        Some(if self.variable_admittances() {
            self.hessian_impl::<7>(x, sigma, lam, mu)
        } else {
            self.hessian_impl::<4>(x, sigma, lam, mu)
        })
    }
}

/// Builds the baseline OPF of a case with its own branch admittances.
pub fn build_opf(case: &NetworkCase, objective: ObjectiveArm) -> Result<OpfModel, ModelError> {
    case.validate()?;
    OpfModel::new(
        &case.public_view(),
        AdmittanceMode::Fixed(case.admittances()?),
        objective.into(),
        None,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    pub va: Vec<f64>,
    pub vm: Vec<f64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub flows: Vec<BranchFlow>,
    /// Present when admittances were decision variables.
    pub admittances: Option<Vec<BranchAdmittance>>,
    pub objective: f64,
    pub status: SolveStatus,
    pub report: SolveReport,
}

/// Total active generation minus total active demand (p.u.).
pub fn grid_loss(case: &NetworkCase, solution: &OpfSolution) -> f64 {
    solution.pg.iter().sum::<f64>() - case.total_demand()
}

/// Largest violation per constraint family, re-evaluated from scratch with
/// the case's own admittances.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub slack_angle: f64,
    pub vm_bounds: f64,
    pub angle_difference: f64,
    pub gen_p_bounds: f64,
    pub gen_q_bounds: f64,
    /// Apparent-power excess `|S| − rate` (p.u.).
    pub thermal: f64,
    pub p_balance: f64,
    pub q_balance: f64,
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn excess(v: f64, lo: f64, hi: f64) -> f64 {
    (lo - v).max(v - hi).max(0.0)
}

pub fn check_feasibility(case: &NetworkCase, sol: &OpfSolution, tol: f64) -> FeasibilityReport {
    let idx = case.bus_index();
    let nb = case.buses.len();
    let mut r = FeasibilityReport {
        tolerance: tol,
        ..Default::default()
    };
    let dims_ok = sol.vm.len() == nb
        && sol.va.len() == nb
        && sol.pg.len() == case.generators.len()
        && sol.qg.len() == case.generators.len();
    if !dims_ok {
        r.max_violation = f64::INFINITY;
        return r;
    }
    let mut p = vec![0.0; nb];
    let mut q = vec![0.0; nb];
    for (i, b) in case.buses.iter().enumerate() {
        if b.is_slack {
            r.slack_angle = r.slack_angle.max(sol.va[i].abs());
        }
        r.vm_bounds = r.vm_bounds.max(excess(sol.vm[i], b.vmin, b.vmax));
        p[i] -= b.shunt_g * sol.vm[i].powi(2);
        q[i] += b.shunt_b * sol.vm[i].powi(2);
    }
    for l in &case.loads {
        p[idx[&l.bus]] -= l.pd;
        q[idx[&l.bus]] -= l.qd;
    }
    for (k, g) in case.generators.iter().enumerate() {
        r.gen_p_bounds = r.gen_p_bounds.max(excess(sol.pg[k], g.pmin, g.pmax));
        r.gen_q_bounds = r.gen_q_bounds.max(excess(sol.qg[k], g.qmin, g.qmax));
        p[idx[&g.bus]] += sol.pg[k];
        q[idx[&g.bus]] += sol.qg[k];
    }
    for br in case.branches.iter().filter(|b| b.status) {
        let (f, t) = (idx[&br.from_bus], idx[&br.to_bus]);
        let th = sol.va[f] - sol.va[t];
        r.angle_difference = r.angle_difference.max(excess(th, br.ang_min, br.ang_max));
        let Ok(adm) = br.admittance() else {
            r.max_violation = f64::INFINITY;
            return r;
        };
        let fl = branch_flow(adm, br.tap, br.shift, sol.vm[f], sol.va[f], sol.vm[t], sol.va[t]);
        if br.rate_a > 0.0 {
            let sf = fl.pf.hypot(fl.qf);
            let st = fl.pt.hypot(fl.qt);
            r.thermal = r.thermal.max(sf - br.rate_a).max(st - br.rate_a).max(0.0);
        }
        p[f] -= fl.pf;
        q[f] -= fl.qf;
        p[t] -= fl.pt;
        q[t] -= fl.qt;
    }
    r.p_balance = p.iter().fold(0.0, |m, v| m.max(v.abs()));
    r.q_balance = q.iter().fold(0.0, |m, v| m.max(v.abs()));
    r.max_violation = [
        r.slack_angle,
        r.vm_bounds,
        r.angle_difference,
        r.gen_p_bounds,
        r.gen_q_bounds,
        r.thermal,
        r.p_balance,
        r.q_balance,
    ]
    .into_iter()
    .fold(0.0, f64::max);
    r.pass = r.max_violation <= tol;
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridpriv_nlp::problem::jacobian_fd_error;

    #[test]
    fn lossless_line_flow() {
        let adm = BranchAdmittance {
            g: 0.0,
            b: -10.0,
            b_sh: 0.0,
        };
        let fl = branch_flow(adm, 1.0, 0.0, 1.0, 0.1, 1.0, 0.0);
        assert!((fl.pf - 10.0 * 0.1f64.sin()).abs() < 1e-12);
        assert!((fl.pf + fl.pt).abs() < 1e-12);
    }

    #[test]
    fn identical_voltages_carry_no_flow() {
        let adm = BranchAdmittance {
            g: 2.0,
            b: -10.0,
            b_sh: 0.0,
        };
        let fl = branch_flow(adm, 1.0, 0.0, 1.02, 0.3, 1.02, 0.3);
        for v in [fl.pf, fl.qf, fl.pt, fl.qt] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn jets_match_finite_differences() {
        let x = [0.2, -0.1, 1.03, 0.97, 1.5, -8.0, 0.3];
        let jet = |x: &[f64]| {
            let v = |k: usize| Jet::<7>::var(x[k], k);
            flow_jets(v(0), v(1), v(2), v(3), v(4), v(5), v(6), 0.98, 0.05)
        };
        let base = jet(&x);
        for k in 0..7 {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let (jp, jm) = (jet(&xp), jet(&xm));
            for q in 0..4 {
                let fd = (jp[q].v - jm[q].v) / (2.0 * h);
                assert!((fd - base[q].g[k]).abs() < 1e-6, "grad {q} {k}");
                for a in 0..7 {
                    let fd2 = (jp[q].g[a] - jm[q].g[a]) / (2.0 * h);
                    assert!((fd2 - base[q].h[k][a]).abs() < 1e-5, "hess {q} {k} {a}");
                }
            }
        }
    }

    fn two_bus_net() -> PublicNetwork {
        use crate::net_model::{Bus, Generator, Load, PublicBranch};
        PublicNetwork {
            name: "two".into(),
            base_mva: 100.0,
            buses: (1..=2)
                .map(|id| Bus {
                    id,
                    base_kv: 230.0,
                    vmin: 0.9,
                    vmax: 1.1,
                    shunt_g: 0.0,
                    shunt_b: 0.0,
                    is_slack: id == 1,
                })
                .collect(),
            branches: vec![PublicBranch {
                id: 1,
                from_bus: 1,
                to_bus: 2,
                tap: 1.0,
                shift: 0.0,
                rate_a: 2.0,
                ang_min: -0.5,
                ang_max: 0.5,
            }],
            generators: vec![Generator {
                id: 1,
                bus: 1,
                pmin: 0.0,
                pmax: 3.0,
                qmin: -3.0,
                qmax: 3.0,
                c2: 0.0,
                c1: 1.0,
                c0: 0.0,
                status: true,
            }],
            loads: vec![Load {
                bus: 2,
                pd: 1.0,
                qd: 0.3,
            }],
        }
    }

    #[test]
    fn layout_counts() {
        let adm = vec![BranchAdmittance {
            g: 1.0,
            b: -10.0,
            b_sh: 0.02,
        }];
        let m = OpfModel::new(
            &two_bus_net(),
            AdmittanceMode::Fixed(adm),
            OpfObjective::Cost,
            None,
        )
        .unwrap();
        assert_eq!(m.num_vars(), 6);
        assert_eq!(m.num_eq(), 1 + 4);
        assert_eq!(m.num_ineq(), 2 + 2);
    }

    #[test]
    fn variable_mode_jacobians_match_finite_differences() {
        let net = two_bus_net();
        let a = BranchAdmittance {
            g: 1.0,
            b: -10.0,
            b_sh: 0.02,
        };
        let va = VariableAdmittances {
            lower: vec![BranchAdmittance {
                g: 0.1,
                b: -100.0,
                b_sh: 0.0,
            }],
            upper: vec![BranchAdmittance {
                g: 10.0,
                b: -0.1,
                b_sh: 1.0,
            }],
            target: vec![a],
            shunt_in_objective: false,
        };
        let m = OpfModel::new(
            &net,
            AdmittanceMode::Variable(va),
            OpfObjective::AdmittanceDistance,
            Some((0.0, 0.1)),
        )
        .unwrap();
        let x = [0.0, -0.08, 1.01, 0.98, 1.02, 0.35, 1.2, -9.0, 0.05];
        let e = jacobian_fd_error(&x, m.num_eq(), |x, o| m.eq_constraints(x, o), &m.eq_jacobian(&x));
        let i = jacobian_fd_error(
            &x,
            m.num_ineq(),
            |x, o| m.ineq_constraints(x, o),
            &m.ineq_jacobian(&x),
        );
        assert!(e < 1e-6 && i < 1e-6, "{e} {i}");
    }
}
