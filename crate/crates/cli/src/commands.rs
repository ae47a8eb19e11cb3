use std::path::{Path, PathBuf};

use anyhow::Context;
use gridpriv_core::matpower_io::{case_to_raw, parse_matpower, raw_to_case, write_matpower, RawCase};
use gridpriv_core::metrics::{scatter_export, utility_report, write_atomic};
use gridpriv_core::net_model::NetworkCase;
use gridpriv_core::opf_core::{build_opf, check_feasibility, grid_loss, FeasibilityReport, ObjectiveArm};
use gridpriv_core::restoration::{run_pipeline, BaselineLoss, FailureKind, ObfuscatedCase, Provenance};
use gridpriv_nlp::{SolveReport, SolveStatus, SolverOptions};
use log::info;
use serde::Serialize;

use crate::args::{timeout, ObfuscateArgs, SolveArgs};
use crate::{emit, Exit};

pub struct LoadedCase {
    pub raw: RawCase,
    pub case: NetworkCase,
}

pub fn load_case(path: &Path) -> anyhow::Result<LoadedCase> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let raw = parse_matpower(&text).with_context(|| format!("cannot parse {}", path.display()))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| raw.function_name.clone());
    let case = raw_to_case(&raw, &name).with_context(|| format!("invalid case {}", path.display()))?;
    Ok(LoadedCase { raw, case })
}

pub fn failure_exit(kind: FailureKind) -> Exit {
    match kind {
        FailureKind::Timeout => Exit::Timeout,
        FailureKind::Infeasible | FailureKind::Numerical => Exit::Infeasible,
    }
}

fn status_exit(status: SolveStatus) -> Exit {
    match status {
        SolveStatus::Optimal => Exit::Optimal,
        SolveStatus::Timeout => Exit::Timeout,
        _ => Exit::Infeasible,
    }
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

#[derive(Serialize)]
struct UtilitySummary {
    rmse_r: f64,
    rmse_x: f64,
    rmse_bsh: f64,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    provenance: &'a Provenance,
    loss_band: (f64, f64),
    feasibility: FeasibilityReport,
    utility: UtilitySummary,
    solve_report: &'a SolveReport,
}

/// Writes the released case, its JSON sidecar and the utility scatter data.
/// Returns the paths written.
pub fn write_release(
    out: &ObfuscatedCase,
    original: &LoadedCase,
    dir: &Path,
    stem: &str,
) -> anyhow::Result<Vec<PathBuf>> {
    let raw = case_to_raw(&out.case, &original.raw)?;
    let utility = utility_report(&original.case, &out.case, Some(params_of(&out.provenance)))?;
    let sidecar = Sidecar {
        provenance: &out.provenance,
        loss_band: out.loss_band,
        feasibility: check_feasibility(&out.case, &out.solution, 1e-6),
        utility: UtilitySummary {
            rmse_r: utility.rmse_r,
            rmse_x: utility.rmse_x,
            rmse_bsh: utility.rmse_bsh,
        },
        solve_report: &out.solution.report,
    };
    let case_path = dir.join(format!("{stem}_private.m"));
    let json_path = dir.join(format!("{stem}_private.json"));
    let utility_stem = dir.join(format!("{stem}_utility"));
    write_atomic(&case_path, write_matpower(&raw).as_bytes())?;
    write_atomic(
        &json_path,
        (serde_json::to_string_pretty(&sidecar)? + "\n").as_bytes(),
    )?;
    scatter_export(&utility, &utility_stem)?;
    Ok(vec![
        case_path,
        json_path,
        utility_stem.with_extension("csv"),
        utility_stem.with_extension("svg"),
    ])
}

fn params_of(p: &Provenance) -> gridpriv_core::dp_mechanism::PrivacyParams {
    gridpriv_core::dp_mechanism::PrivacyParams {
        alpha: p.alpha,
        beta: p.beta,
        epsilon: p.epsilon,
        lambda: p.lambda,
    }
}

pub fn obfuscate(args: &ObfuscateArgs) -> anyhow::Result<Exit> {
    let params = args.run.privacy.params()?;
    let config = args.run.restoration()?;
    let baseline = match args.run.l_star()? {
        Some(v) => BaselineLoss::Given(v),
        None => BaselineLoss::Solve(args.objective.into()),
    };
    let loaded = load_case(&args.case)?;
    let seed = args.seed.unwrap_or_else(rand::random);
    info!("obfuscating {} with seed {seed}", loaded.case.name);
    match run_pipeline(&loaded.case, &params, baseline, seed, &config) {
        Ok(out) => {
            ensure_dir(&args.run.out_dir)?;
            for p in write_release(&out, &loaded, &args.run.out_dir, &loaded.case.name)? {
                emit(&format!("{}\n", p.display()))?;
            }
            Ok(Exit::Optimal)
        }
        Err(f) => {
            eprintln!("{}: {f}", loaded.case.name);
            Ok(failure_exit(f.kind))
        }
    }
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    case: &'a str,
    objective_arm: ObjectiveArm,
    status: SolveStatus,
    objective: f64,
    grid_loss: f64,
    feasibility: FeasibilityReport,
    report: &'a SolveReport,
}

pub fn solve(args: &SolveArgs) -> anyhow::Result<Exit> {
    let opts = SolverOptions {
        timeout_s: timeout(args.timeout_s)?,
        ..SolverOptions::default()
    };
    let loaded = load_case(&args.case)?;
    let arm: ObjectiveArm = args.objective.into();
    let sol = build_opf(&loaded.case, arm)?.solve(&opts)?;
    let out = SolveOutput {
        case: &loaded.case.name,
        objective_arm: arm,
        status: sol.status,
        objective: sol.objective,
        grid_loss: grid_loss(&loaded.case, &sol),
        feasibility: check_feasibility(&loaded.case, &sol, 1e-6),
        report: &sol.report,
    };
    emit(&(serde_json::to_string_pretty(&out)? + "\n"))?;
    Ok(status_exit(sol.status))
}
