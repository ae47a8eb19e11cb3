//! Utility (original vs. released branch parameters) and solvability
//! statistics, with CSV and SVG output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dp_mechanism::PrivacyParams;
use crate::error::MetricsError;
use crate::net_model::NetworkCase;
use crate::restoration::{FailureKind, PipelineFailure};

/// Root-mean-square difference of two equal-length vectors.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchQuantity {
    R,
    X,
    Bsh,
}

impl BranchQuantity {
    pub const ALL: [BranchQuantity; 3] = [BranchQuantity::R, BranchQuantity::X, BranchQuantity::Bsh];

    pub fn as_str(self) -> &'static str {
        match self {
            BranchQuantity::R => "r",
            BranchQuantity::X => "x",
            BranchQuantity::Bsh => "b_sh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePair {
    pub branch_id: usize,
    pub quantity: BranchQuantity,
    pub original: f64,
    pub released: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub case: String,
    pub params: Option<PrivacyParams>,
    pub rmse_r: f64,
    pub rmse_x: f64,
    pub rmse_bsh: f64,
    pub pairs: Vec<ValuePair>,
}

impl UtilityReport {
    pub fn empty(case: &str) -> Self {
        Self {
            case: case.to_string(),
            params: None,
            rmse_r: 0.0,
            rmse_x: 0.0,
            rmse_bsh: 0.0,
            pairs: Vec::new(),
        }
    }
}

/// Compares in-service branches of `original` and `released`, matched by id.
pub fn utility_report(
    original: &NetworkCase,
    released: &NetworkCase,
    params: Option<PrivacyParams>,
) -> Result<UtilityReport, MetricsError> {
    let rel: BTreeMap<usize, _> = released.branches.iter().map(|b| (b.id, b)).collect();
    let mut pairs = Vec::new();
    let mut cols: [(Vec<f64>, Vec<f64>); 3] = Default::default();
    let in_service: Vec<_> = original.branches.iter().filter(|b| b.status).collect();
    for ob in &in_service {
        let rb = rel.get(&ob.id).ok_or(MetricsError::LengthMismatch(
            in_service.len(),
            released.branches.len(),
        ))?;
        for (k, q) in BranchQuantity::ALL.into_iter().enumerate() {
            let (o, r) = match q {
                BranchQuantity::R => (ob.r, rb.r),
                BranchQuantity::X => (ob.x, rb.x),
                BranchQuantity::Bsh => (ob.b_sh, rb.b_sh),
            };
            cols[k].0.push(o);
            cols[k].1.push(r);
            pairs.push(ValuePair {
                branch_id: ob.id,
                quantity: q,
                original: o,
                released: r,
            });
        }
    }
    Ok(UtilityReport {
        case: original.name.clone(),
        params,
        rmse_r: rmse(&cols[0].0, &cols[0].1)?,
        rmse_x: rmse(&cols[1].0, &cols[1].1)?,
        rmse_bsh: rmse(&cols[2].0, &cols[2].1)?,
        pairs,
    })
}

pub fn scatter_csv(report: &UtilityReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["branch_id", "quantity", "original", "released"])
        .expect("in-memory write");
    for p in &report.pairs {
        w.write_record([
            p.branch_id.to_string(),
            p.quantity.as_str().to_string(),
            format!("{:e}", p.original),
            format!("{:e}", p.released),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

/// Original-vs-released scatter, one panel per quantity, each with a dashed
/// `y = x` diagonal. Every data point is one `<circle>`.
pub fn scatter_svg(report: &UtilityReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="800" height="800" viewBox="0 0 800 800">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="800" height="800" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="400" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}: released vs. original (p.u.)</text>"#,
        xml_escape(&report.case)
    );
    // 2×2 grid, three panels used
    let panel = 340.0;
    let origins = [(60.0, 60.0), (440.0, 60.0), (60.0, 440.0)];
    for (q, (ox, oy)) in BranchQuantity::ALL.into_iter().zip(origins) {
        let pts: Vec<_> = report.pairs.iter().filter(|p| p.quantity == q).collect();
        let (mut lo, mut hi) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (
                    lo.min(p.original).min(p.released),
                    hi.max(p.original).max(p.released),
                )
            });
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo <= 0.0 {
            let pad = lo.abs().max(1e-12) * 0.05;
            lo -= pad;
            hi += pad;
        }
        let map_x = |v: f64| ox + (v - lo) / (hi - lo) * panel;
        let map_y = |v: f64| oy + panel - (v - lo) / (hi - lo) * panel;
        let _ = writeln!(
            s,
            r#"<g id="panel-{name}"><rect x="{ox}" y="{oy}" width="{panel}" height="{panel}" fill="none" stroke="black"/>"#,
            name = q.as_str()
        );
        let _ = writeln!(
            s,
            r#"<line x1="{ox}" y1="{y1}" x2="{x2}" y2="{oy}" stroke="gray" stroke-dasharray="6,4"/>"#,
            y1 = oy + panel,
            x2 = ox + panel
        );
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="middle" font-family="sans-serif" font-size="13">{name} [{lo:.4e}, {hi:.4e}]</text>"#,
            x = ox + panel / 2.0,
            y = oy + panel + 22.0,
            name = q.as_str()
        );
        for p in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.3}" cy="{:.3}" r="3" fill="steelblue" fill-opacity="0.7" data-branch="{}" data-original="{:e}" data-released="{:e}"/>"#,
                map_x(p.original),
                map_y(p.released),
                p.branch_id,
                p.original,
                p.released
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<stem>.csv` and `<stem>.svg`.
pub fn scatter_export(report: &UtilityReport, stem: &Path) -> io::Result<()> {
    write_atomic(&stem.with_extension("csv"), scatter_csv(report).as_bytes())?;
    write_atomic(&stem.with_extension("svg"), scatter_svg(report).as_bytes())
}

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let res = std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path));
    if res.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    res
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Optimal,
    Infeasible,
    Timeout,
    Numerical,
}

impl<T> From<&Result<T, PipelineFailure>> for RunStatus {
    fn from(r: &Result<T, PipelineFailure>) -> Self {
        match r {
            Ok(_) => RunStatus::Optimal,
            Err(f) => match f.kind {
                FailureKind::Infeasible => RunStatus::Infeasible,
                FailureKind::Timeout => RunStatus::Timeout,
                FailureKind::Numerical => RunStatus::Numerical,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub case: String,
    pub arm: String,
    pub seed: u64,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvabilityEntry {
    pub case: String,
    pub arm: String,
    pub runs: usize,
    pub optimal: usize,
    pub infeasible: usize,
    pub timeout: usize,
    pub numerical: usize,
    pub success_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvabilityReport {
    pub entries: Vec<SolvabilityEntry>,
    pub total_runs: usize,
    pub total_optimal: usize,
    pub success_pct: f64,
}

fn pct(ok: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * ok as f64 / n as f64
    }
}

/// Outcome counts per (case, arm), ordered by case then arm.
pub fn aggregate_solvability(runs: &[RunRecord]) -> SolvabilityReport {
    let mut groups: BTreeMap<(&str, &str), [usize; 4]> = BTreeMap::new();
    for r in runs {
        let c = groups.entry((&r.case, &r.arm)).or_default();
        c[r.status as usize] += 1;
    }
    let entries: Vec<_> = groups
        .into_iter()
        .map(|((case, arm), c)| {
            let n = c.iter().sum();
            SolvabilityEntry {
                case: case.to_string(),
                arm: arm.to_string(),
                runs: n,
                optimal: c[0],
                infeasible: c[1],
                timeout: c[2],
                numerical: c[3],
                success_pct: pct(c[0], n),
            }
        })
        .collect();
    let total_optimal = entries.iter().map(|e| e.optimal).sum();
    SolvabilityReport {
        entries,
        total_runs: runs.len(),
        total_optimal,
        success_pct: pct(total_optimal, runs.len()),
    }
}

pub fn solvability_csv(report: &SolvabilityReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &report.entries {
        w.serialize(e).expect("in-memory write");
    }
    if report.entries.is_empty() {
        w.write_record([
            "case",
            "arm",
            "runs",
            "optimal",
            "infeasible",
            "timeout",
            "numerical",
            "success_pct",
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}
