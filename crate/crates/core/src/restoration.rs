//! Fidelity restoration: after perturbation, find admittances close to the
//! noisy targets for which the AC-OPF is feasible and the grid loss stays
//! within a factor of the public baseline loss.

use std::time::Instant;

use gridpriv_nlp::{NlpError, SolveReport, SolveStatus, SolverOptions};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dp_mechanism::{
    perturb_branch_parameters, LevelStats, NoiseSource, PerturbedAdmittances, PrivacyParams, Quantity,
    SeededNoise,
};
use crate::error::{MechanismError, ModelError};
use crate::net_model::{to_series_impedance, BranchAdmittance, NetworkCase, PublicNetwork};
use crate::opf_core::{
    build_opf, AdmittanceMode, ObjectiveArm, OpfModel, OpfObjective, OpfSolution, VariableAdmittances,
};

/// Below this baseline loss the relative loss band switches to an absolute one.
pub const TINY_LOSS: f64 = 1e-8;
/// Smallest half-width scale of the absolute loss band (p.u.).
pub const MIN_ABSOLUTE_LOSS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorationConfig {
    /// Add `‖b_sh − b̃_sh‖²` to the objective.
    pub shunt_in_objective: bool,
    pub solver: SolverOptions,
}

impl Default for RestorationConfig {
    fn default() -> Self {
        Self {
            shunt_in_objective: false,
            // releases are checked at 1e-6 after the round trip through (r, x)
            solver: SolverOptions {
                tol_feas: 1e-8,
                ..SolverOptions::default()
            },
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RestorationError {
    #[error("noisy mean of {quantity:?} at {kv} kV is {mean}; its box excludes the physical sign")]
    SignFlip { kv: f64, quantity: Quantity, mean: f64 },
    #[error("perturbation covers {found} branches, network has {expected}")]
    BranchMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Solver(#[from] NlpError),
}

/// Loss band `[lo, hi]` for baseline loss `l_star`, and whether the
/// absolute form was used.
pub fn loss_band(l_star: f64, beta: f64) -> (f64, f64, bool) {
    if l_star <= TINY_LOSS {
        warn!("baseline loss {l_star:e} is tiny; using an absolute loss band");
        let w = beta * l_star.max(MIN_ABSOLUTE_LOSS);
        (l_star - w, l_star + w, true)
    } else {
        ((1.0 - beta) * l_star, (1.0 + beta) * l_star, false)
    }
}

fn oriented(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Boxes `[μ_g/λ, λμ_g]`, `[λμ_b, μ_b/λ]`, `[μ_bsh/λ, λμ_bsh]` for one level,
/// each oriented by sorting its endpoints.
pub fn level_bounds(
    level: &LevelStats,
    lambda: f64,
) -> Result<(BranchAdmittance, BranchAdmittance), RestorationError> {
    let (gl, gu) = oriented(level.mu_g / lambda, lambda * level.mu_g);
    let (bl, bu) = oriented(lambda * level.mu_b, level.mu_b / lambda);
    let (sl, su) = oriented(level.mu_bsh / lambda, lambda * level.mu_bsh);
    let flip = |quantity, mean| RestorationError::SignFlip {
        kv: level.kv,
        quantity,
        mean,
    };
    if level.mu_g <= 0.0 || level.mu_b >= 0.0 || level.mu_bsh < 0.0 {
        warn!(
            "noisy means at {} kV have unexpected sign (g {}, b {}, b_sh {})",
            level.kv, level.mu_g, level.mu_b, level.mu_bsh
        );
    }
    if gu < 0.0 {
        return Err(flip(Quantity::Conductance, level.mu_g));
    }
    if bl >= 0.0 {
        return Err(flip(Quantity::Susceptance, level.mu_b));
    }
    if su < 0.0 {
        return Err(flip(Quantity::ShuntSusceptance, level.mu_bsh));
    }
    Ok((
        BranchAdmittance {
            g: gl,
            b: bl,
            b_sh: sl,
        },
        BranchAdmittance {
            g: gu,
            b: bu,
            b_sh: su,
        },
    ))
}

/// The restoration NLP together with the data it was built from.
#[derive(Debug, Clone)]
pub struct RestorationProblem {
    pub model: OpfModel,
    pub lower: Vec<BranchAdmittance>,
    pub upper: Vec<BranchAdmittance>,
    pub l_star: f64,
    pub loss_band: (f64, f64),
    pub absolute_loss_band: bool,
}

/// Builds the restoration problem from public data only: the network without
/// admittances, the baseline loss, and the perturbation output.
pub fn build_restoration(
    net: &PublicNetwork,
    pert: &PerturbedAdmittances,
    l_star: f64,
    params: &PrivacyParams,
    config: &RestorationConfig,
) -> Result<RestorationProblem, RestorationError> {
    params.validate()?;
    let nl = net.branches.len();
    if pert.len() != nl || pert.branch_ids.iter().zip(&net.branches).any(|(&a, b)| a != b.id) {
        return Err(RestorationError::BranchMismatch {
            expected: nl,
            found: pert.len(),
        });
    }
    let boxes = pert
        .levels
        .iter()
        .map(|lv| level_bounds(lv, params.lambda))
        .collect::<Result<Vec<_>, _>>()?;
    let mut lower = Vec::with_capacity(nl);
    let mut upper = Vec::with_capacity(nl);
    let mut target = Vec::with_capacity(nl);
    for l in 0..nl {
        let (lo, hi) = boxes[pert.level_of_branch[l]];
        lower.push(lo);
        upper.push(hi);
        target.push(BranchAdmittance {
            g: pert.g_tilde[l],
            b: pert.b_tilde[l],
            b_sh: pert.b_sh_tilde[l],
        });
    }
    let (lo, hi, absolute) = loss_band(l_star, params.beta);
    let model = OpfModel::new(
        net,
        AdmittanceMode::Variable(VariableAdmittances {
            lower: lower.clone(),
            upper: upper.clone(),
            target,
            shunt_in_objective: config.shunt_in_objective,
        }),
        OpfObjective::AdmittanceDistance,
        Some((lo, hi)),
    )?;
    Ok(RestorationProblem {
        model,
        lower,
        upper,
        l_star,
        loss_band: (lo, hi),
        absolute_loss_band: absolute,
    })
}

/// Grid loss at the baseline OPF optimum of the original case.
pub fn baseline_grid_loss(
    case: &NetworkCase,
    arm: ObjectiveArm,
    opts: &SolverOptions,
) -> Result<(f64, OpfSolution), PipelineFailure> {
    let model = build_opf(case, arm).map_err(|e| PipelineFailure::invalid(Stage::Baseline, e))?;
    let sol = model
        .solve(opts)
        .map_err(|e| PipelineFailure::invalid(Stage::Baseline, e))?;
    if sol.status != SolveStatus::Optimal {
        return Err(PipelineFailure::from_report(Stage::Baseline, &sol.report));
    }
    Ok((crate::opf_core::grid_loss(case, &sol), sol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Baseline,
    Perturbation,
    Build,
    Solve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    Infeasible,
    Timeout,
    /// Iteration limit, numerical breakdown or invalid input.
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{stage:?} stage failed ({kind:?}): {message}")]
pub struct PipelineFailure {
    pub stage: Stage,
    pub kind: FailureKind,
    pub message: String,
    pub report: Option<SolveReport>,
}

impl PipelineFailure {
    fn invalid(stage: Stage, e: impl std::fmt::Display) -> Self {
        Self {
            stage,
            kind: FailureKind::Numerical,
            message: e.to_string(),
            report: None,
        }
    }

    fn from_report(stage: Stage, report: &SolveReport) -> Self {
        let kind = match report.status {
            SolveStatus::Infeasible => FailureKind::Infeasible,
            SolveStatus::Timeout => FailureKind::Timeout,
            _ => FailureKind::Numerical,
        };
        Self {
            stage,
            kind,
            message: format!("solver finished with status {}", report.status),
            report: Some(report.clone()),
        }
    }
}

/// Where the baseline loss comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineLoss {
    /// Solve the OPF of the original case with this objective.
    Solve(ObjectiveArm),
    /// Use a published value.
    Given(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub case: String,
    pub seed: Option<u64>,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub objective_arm: Option<ObjectiveArm>,
    #[serde(rename = "L_star")]
    pub l_star: f64,
    pub absolute_loss_band: bool,
    pub grid_loss: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub wall_time_s: f64,
}

/// A released network with the OPF solution that certifies it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObfuscatedCase {
    pub case: NetworkCase,
    pub solution: OpfSolution,
    pub perturbation: PerturbedAdmittances,
    pub lower: Vec<BranchAdmittance>,
    pub upper: Vec<BranchAdmittance>,
    pub loss_band: (f64, f64),
    pub provenance: Provenance,
}

/// Perturb → restore → write back, with noise from `noise`.
pub fn run_pipeline_with(
    case: &NetworkCase,
    params: &PrivacyParams,
    baseline: BaselineLoss,
    noise: &dyn NoiseSource,
    seed: Option<u64>,
    config: &RestorationConfig,
) -> Result<ObfuscatedCase, PipelineFailure> {
    let start = Instant::now();
    params
        .validate()
        .map_err(|e| PipelineFailure::invalid(Stage::Perturbation, e))?;
    let (l_star, arm) = match baseline {
        BaselineLoss::Given(v) => (v, None),
        BaselineLoss::Solve(arm) => (baseline_grid_loss(case, arm, &config.solver)?.0, Some(arm)),
    };
    let pert = perturb_branch_parameters(case, params, noise)
        .map_err(|e| PipelineFailure::invalid(Stage::Perturbation, e))?;
    let problem = match build_restoration(&case.public_view(), &pert, l_star, params, config) {
        Ok(p) => p,
        Err(e @ RestorationError::SignFlip { .. }) => {
            return Err(PipelineFailure {
                stage: Stage::Build,
                kind: FailureKind::Infeasible,
                message: e.to_string(),
                report: None,
            })
        }
        Err(e) => return Err(PipelineFailure::invalid(Stage::Build, e)),
    };
    let mut solver = config.solver.clone();
    solver.timeout_s = (solver.timeout_s - start.elapsed().as_secs_f64()).max(0.0);
    let sol = problem
        .model
        .solve(&solver)
        .map_err(|e| PipelineFailure::invalid(Stage::Solve, e))?;
    if sol.status != SolveStatus::Optimal {
        return Err(PipelineFailure::from_report(Stage::Solve, &sol.report));
    }
    let adm = sol.admittances.clone().unwrap_or_default();
    let mut out = case.clone();
    for (br, a) in out.branches.iter_mut().zip(&adm) {
        let (r, x) = to_series_impedance(a.g, a.b).map_err(|_| {
            PipelineFailure::invalid(Stage::Solve, ModelError::DegenerateBranch { id: br.id })
        })?;
        br.r = r;
        br.x = x;
        br.b_sh = a.b_sh;
    }
    let loss = sol.pg.iter().sum::<f64>() - case.total_demand();
    let provenance = Provenance {
        case: case.name.clone(),
        seed,
        alpha: params.alpha,
        beta: params.beta,
        epsilon: params.epsilon,
        lambda: params.lambda,
        objective_arm: arm,
        l_star,
        absolute_loss_band: problem.absolute_loss_band,
        grid_loss: loss,
        status: sol.status,
        iterations: sol.report.iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(ObfuscatedCase {
        case: out,
        solution: sol,
        perturbation: pert,
        lower: problem.lower,
        upper: problem.upper,
        loss_band: problem.loss_band,
        provenance,
    })
}

/// [`run_pipeline_with`] using seeded noise.
pub fn run_pipeline(
    case: &NetworkCase,
    params: &PrivacyParams,
    baseline: BaselineLoss,
    seed: u64,
    config: &RestorationConfig,
) -> Result<ObfuscatedCase, PipelineFailure> {
    run_pipeline_with(
        case,
        params,
        baseline,
        &SeededNoise::new(seed),
        Some(seed),
        config,
    )
}
