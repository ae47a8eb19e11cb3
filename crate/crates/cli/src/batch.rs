use std::path::{Path, PathBuf};

use anyhow::Context;
use gridpriv_core::metrics::{
    aggregate_solvability, solvability_csv, utility_report, write_atomic, RunRecord, RunStatus,
};
use gridpriv_core::opf_core::ObjectiveArm;
use gridpriv_core::restoration::{
    baseline_grid_loss, run_pipeline, BaselineLoss, PipelineFailure, RestorationConfig, Stage,
};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::BatchArgs;
use crate::commands::{ensure_dir, load_case, write_release, LoadedCase};
use crate::{emit, Exit};

/// One pipeline run, without timing so that repeated batches compare equal.
#[derive(Debug, Clone, Serialize)]
pub struct BatchRun {
    pub case: String,
    pub arm: ObjectiveArm,
    pub seed: u64,
    pub status: RunStatus,
    pub failed_stage: Option<Stage>,
    pub message: Option<String>,
    pub l_star: Option<f64>,
    pub grid_loss: Option<f64>,
    pub iterations: Option<usize>,
    pub rmse_r: Option<f64>,
    pub rmse_x: Option<f64>,
    pub rmse_bsh: Option<f64>,
    pub release: Option<PathBuf>,
}

impl BatchRun {
    fn failed(case: &str, arm: ObjectiveArm, seed: u64, l_star: Option<f64>, f: &PipelineFailure) -> Self {
        BatchRun {
            case: case.to_string(),
            arm,
            seed,
            status: RunStatus::from(&Err::<(), _>(f.clone())),
            failed_stage: Some(f.stage),
            message: Some(f.message.clone()),
            l_star,
            grid_loss: None,
            iterations: f.report.as_ref().map(|r| r.iterations),
            rmse_r: None,
            rmse_x: None,
            rmse_bsh: None,
            release: None,
        }
    }
}

/// Matpower files directly inside `dir`, sorted by name.
pub fn case_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "m"))
        .collect();
    files.sort();
    anyhow::ensure!(!files.is_empty(), "no .m case files in {}", dir.display());
    Ok(files)
}

fn run_one(
    loaded: &LoadedCase,
    arm: ObjectiveArm,
    l_star: f64,
    seed: u64,
    args: &BatchArgs,
    config: &RestorationConfig,
    release_dir: &Path,
) -> BatchRun {
    let name = &loaded.case.name;
    let params = args.run.privacy.params().expect("validated before dispatch");
    match run_pipeline(&loaded.case, &params, BaselineLoss::Given(l_star), seed, config) {
        Ok(out) => {
            let stem = format!("{name}_{}_s{seed}", arm.as_str());
            let release = match write_release(&out, loaded, release_dir, &stem) {
                Ok(paths) => paths.into_iter().next(),
                Err(e) => {
                    warn!("{stem}: could not write release: {e:#}");
                    None
                }
            };
            let utility = utility_report(&loaded.case, &out.case, Some(params)).ok();
            BatchRun {
                case: name.clone(),
                arm,
                seed,
                status: RunStatus::Optimal,
                failed_stage: None,
                message: None,
                l_star: Some(l_star),
                grid_loss: Some(out.provenance.grid_loss),
                iterations: Some(out.provenance.iterations),
                rmse_r: utility.as_ref().map(|u| u.rmse_r),
                rmse_x: utility.as_ref().map(|u| u.rmse_x),
                rmse_bsh: utility.as_ref().map(|u| u.rmse_bsh),
                release: release.and_then(|p| p.strip_prefix(&args.run.out_dir).ok().map(Path::to_path_buf)),
            }
        }
        Err(f) => BatchRun::failed(name, arm, seed, Some(l_star), &f),
    }
}

pub fn runs(args: &BatchArgs) -> anyhow::Result<Vec<BatchRun>> {
    args.run.privacy.params()?;
    let config = args.run.restoration()?;
    let l_override = args.run.l_star()?;
    let cases = case_files(&args.case_dir)?
        .iter()
        .map(|p| load_case(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let release_dir = args.run.out_dir.join("releases");
    ensure_dir(&release_dir)?;
    let arms = args.objective.arms();
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    anyhow::ensure!(workers >= 1, "--workers must be at least 1");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    info!(
        "{} cases x {} arms x {} seeds on {workers} workers",
        cases.len(),
        arms.len(),
        args.seeds.end - args.seeds.start
    );

    pool.install(|| {
        // one baseline per case and arm, shared by all of its seeds
        let pairs: Vec<(usize, ObjectiveArm)> = (0..cases.len())
            .flat_map(|c| arms.iter().map(move |&a| (c, a)))
            .collect();
        let baselines: Vec<Result<f64, PipelineFailure>> = pairs
            .par_iter()
            .map(|&(c, arm)| match l_override {
                Some(v) => Ok(v),
                None => baseline_grid_loss(&cases[c].case, arm, &config.solver).map(|(l, _)| l),
            })
            .collect();
        let jobs: Vec<(usize, u64)> = (0..pairs.len())
            .flat_map(|p| args.seeds.clone().map(move |s| (p, s)))
            .collect();
        Ok(jobs
            .into_par_iter()
            .map(|(p, seed)| {
                let (c, arm) = pairs[p];
                let loaded = &cases[c];
                match &baselines[p] {
                    Ok(l) => run_one(loaded, arm, *l, seed, args, &config, &release_dir),
                    Err(f) => BatchRun::failed(&loaded.case.name, arm, seed, None, f),
                }
            })
            .collect())
    })
}

pub fn batch(args: &BatchArgs) -> anyhow::Result<Exit> {
    let runs = runs(args)?;
    let records: Vec<RunRecord> = runs
        .iter()
        .map(|r| RunRecord {
            case: r.case.clone(),
            arm: r.arm.as_str().to_string(),
            seed: r.seed,
            status: r.status,
        })
        .collect();
    let report = aggregate_solvability(&records);
    let dir = &args.run.out_dir;
    let csv = solvability_csv(&report);
    write_atomic(
        &dir.join("solvability.json"),
        (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
    )?;
    write_atomic(&dir.join("solvability.csv"), csv.as_bytes())?;
    write_atomic(
        &dir.join("runs.json"),
        (serde_json::to_string_pretty(&runs)? + "\n").as_bytes(),
    )?;
    emit(&csv)?;
    Ok(Exit::Optimal)
}
