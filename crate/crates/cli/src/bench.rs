//! Square-root benchmark and gradient-check runners.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use spdnorm::grad::{grad_check, GradReport, GradScheme};
use spdnorm::linalg::SpdMatrix;
use spdnorm::matfun::{
    mat_fun_spectral, sqrt_iterative, sqrt_residual, MatFunKind, ScaleMode, SqrtScheme,
};
use spdnorm::random::{
    clustered_spectrum, derive_seed, rng, spd_with_cond, spd_with_spectrum, well_separated_spectrum,
};

use crate::config::{newton_config, scale_name, sqrt_scheme_name};
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct SqrtBenchSpec {
    pub dims: Vec<usize>,
    pub conds: Vec<f64>,
    pub iterations: Vec<usize>,
    pub schemes: Vec<SqrtScheme>,
    /// `None` uses each scheme's default scaling.
    pub scale: Option<ScaleMode>,
    /// Inputs are rescaled so their largest eigenvalue equals this.
    pub input_scale: f64,
    pub seed: u64,
    pub timing: bool,
}

impl SqrtBenchSpec {
    pub fn validate(&self) -> CliResult<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(CliError::Usage(
                "dims must be a non-empty list of positive sizes".into(),
            ));
        }
        if self.conds.is_empty() || self.conds.iter().any(|&c| !(c >= 1.0 && c.is_finite())) {
            return Err(CliError::Usage(
                "condition numbers must be finite and >= 1".into(),
            ));
        }
        if self.iterations.is_empty() || self.schemes.is_empty() {
            return Err(CliError::Usage(
                "need at least one iteration count and scheme".into(),
            ));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(CliError::Usage("input scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SqrtBenchRow {
    /// `spectral`, `db` or `ns`.
    pub scheme: String,
    pub scale: String,
    pub dim: usize,
    pub cond: f64,
    /// Absent for the spectral reference row.
    pub iterations: Option<usize>,
    pub rel_residual: f64,
    pub wall_time_ms: Option<f64>,
}

/// Seed of the input matrix for one `(dim, cond)` cell, independent of the
/// other cells in the sweep.
pub fn cell_seed(master: u64, dim: usize, cond: f64) -> u64 {
    derive_seed(master, derive_seed(dim as u64, cond.to_bits()))
}

pub fn bench_matrix(master: u64, dim: usize, cond: f64, input_scale: f64) -> SpdMatrix {
    spd_with_cond(&mut rng(cell_seed(master, dim, cond)), dim, cond)
        .scaled(input_scale)
        .expect("positive scale")
}

fn timed<T>(timing: bool, f: impl FnOnce() -> T) -> (T, Option<f64>) {
    let start = Instant::now();
    let out = f();
    (out, timing.then(|| start.elapsed().as_secs_f64() * 1e3))
}

fn bench_cell(spec: &SqrtBenchSpec, dim: usize, cond: f64) -> CliResult<Vec<SqrtBenchRow>> {
    let a = bench_matrix(spec.seed, dim, cond, spec.input_scale);
    let mut rows = Vec::new();
    let (z, t) = timed(spec.timing, || mat_fun_spectral(&a, MatFunKind::Sqrt));
    rows.push(SqrtBenchRow {
        scheme: "spectral".into(),
        scale: "none".into(),
        dim,
        cond,
        iterations: None,
        rel_residual: sqrt_residual(z?.as_matrix(), &a)?,
        wall_time_ms: t,
    });
    for &scheme in &spec.schemes {
        for &k in &spec.iterations {
            let cfg = newton_config(scheme, k, spec.scale);
            let (out, t) = timed(spec.timing, || sqrt_iterative(&a, &cfg));
            let (y, _) = out?;
            rows.push(SqrtBenchRow {
                scheme: sqrt_scheme_name(scheme).into(),
                scale: scale_name(cfg.scale_mode).into(),
                dim,
                cond,
                iterations: Some(k),
                rel_residual: sqrt_residual(&y, &a)?,
                wall_time_ms: t,
            });
        }
    }
    Ok(rows)
}

/// Runs every `(dim, cond)` cell (in parallel) and returns rows sorted by
/// dim, cond, scheme and iteration count.
pub fn sqrt_bench(spec: &SqrtBenchSpec) -> CliResult<Vec<SqrtBenchRow>> {
    spec.validate()?;
    let cells: Vec<(usize, f64)> = spec
        .dims
        .iter()
        .flat_map(|&d| spec.conds.iter().map(move |&c| (d, c)))
        .collect();
    let results: Vec<CliResult<Vec<SqrtBenchRow>>> = cells
        .par_iter()
        .map(|&(d, c)| bench_cell(spec, d, c))
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| {
        a.dim
            .cmp(&b.dim)
            .then(a.cond.total_cmp(&b.cond))
            .then(a.scheme.cmp(&b.scheme))
            .then(a.iterations.cmp(&b.iterations))
    });
    rows.dedup();
    Ok(rows)
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sqrt_bench_csv<W: Write>(rows: &[SqrtBenchRow], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scheme",
        "scale",
        "d",
        "cond",
        "k",
        "rel_residual",
        "wall_time_ms",
    ])?;
    for r in rows {
        w.write_record([
            r.scheme.clone(),
            r.scale.clone(),
            r.dim.to_string(),
            r.cond.to_string(),
            fmt_opt(r.iterations),
            r.rel_residual.to_string(),
            fmt_opt(r.wall_time_ms),
        ])?;
    }
    w.flush().map_err(|e| CliError::Io {
        path: "csv".into(),
        source: e,
    })?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumProfile {
    WellSeparated,
    Clustered,
    Degenerate,
}

impl SpectrumProfile {
    pub fn parse(v: &str) -> CliResult<Self> {
        match v {
            "wellsep" => Ok(Self::WellSeparated),
            "clustered" => Ok(Self::Clustered),
            "degenerate" => Ok(Self::Degenerate),
            other => Err(CliError::Usage(format!(
                "unknown spectrum profile `{other}` (wellsep, clustered, degenerate)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::WellSeparated => "wellsep",
            Self::Clustered => "clustered",
            Self::Degenerate => "degenerate",
        }
    }
}

/// Smallest eigenvalue of the well-separated and clustered profiles.
pub const PROFILE_FLOOR: f64 = 0.1;
/// Gap inside each eigenvalue pair of the clustered profile.
pub const CLUSTER_GAP: f64 = 1e-9;

pub fn profile_matrix(profile: SpectrumProfile, dim: usize, seed: u64) -> SpdMatrix {
    let spectrum = match profile {
        SpectrumProfile::WellSeparated => well_separated_spectrum(dim, PROFILE_FLOOR),
        SpectrumProfile::Clustered => clustered_spectrum(dim, PROFILE_FLOOR, CLUSTER_GAP),
        SpectrumProfile::Degenerate => vec![2.0; dim],
    };
    spd_with_spectrum(&mut rng(seed), &spectrum)
}

/// Pass threshold on `max_rel_diff`, or `None` when the combination is
/// report-only.
pub fn gradcheck_threshold(scheme: GradScheme, profile: SpectrumProfile) -> Option<f64> {
    match (scheme, profile) {
        (GradScheme::Lyapunov, _) => Some(1e-6),
        (GradScheme::SvdTruncated { .. }, SpectrumProfile::WellSeparated) => Some(1e-5),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOutcome {
    pub kind: MatFunKind,
    pub scheme: GradScheme,
    pub profile: SpectrumProfile,
    pub dim: usize,
    pub h: f64,
    pub report: GradReport,
    pub threshold: Option<f64>,
}

impl GradcheckOutcome {
    /// `pass`, `fail` or `report` (no threshold, finite values).
    pub fn status(&self) -> &'static str {
        match self.threshold {
            _ if !self.report.is_finite() => "fail",
            Some(t) if self.report.max_rel_diff <= t => "pass",
            Some(_) => "fail",
            None => "report",
        }
    }
}

pub fn run_gradcheck(
    kind: MatFunKind,
    scheme: GradScheme,
    profile: SpectrumProfile,
    dim: usize,
    h: f64,
    seed: u64,
) -> CliResult<GradcheckOutcome> {
    if dim == 0 {
        return Err(CliError::Usage("dim must be positive".into()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(CliError::Usage("h must be positive".into()));
    }
    scheme.validate_for(kind)?;
    let a = profile_matrix(profile, dim, seed);
    let report = grad_check(kind, scheme, &a, h)?;
    Ok(GradcheckOutcome {
        kind,
        scheme,
        profile,
        dim,
        h,
        report,
        threshold: gradcheck_threshold(scheme, profile),
    })
}

pub fn write_gradcheck_csv<W: Write>(rows: &[GradcheckOutcome], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "kind",
        "scheme",
        "profile",
        "d",
        "h",
        "max_abs_diff",
        "max_rel_diff",
        "analytic_norm",
        "fd_norm",
        "worst_i",
        "worst_j",
        "threshold",
        "status",
    ])?;
    for o in rows {
        let r = &o.report;
        w.write_record([
            o.kind.to_string(),
            crate::config::grad_name(o.scheme).to_string(),
            o.profile.name().to_string(),
            o.dim.to_string(),
            o.h.to_string(),
            r.max_abs_diff.to_string(),
            r.max_rel_diff.to_string(),
            r.analytic_norm.to_string(),
            r.fd_norm.to_string(),
            r.worst_entry.0.to_string(),
            r.worst_entry.1.to_string(),
            fmt_opt(o.threshold),
            o.status().to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::Io {
        path: "csv".into(),
        source: e,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SqrtBenchSpec {
        SqrtBenchSpec {
            dims: vec![8, 4],
            conds: vec![10.0, 1.0],
            iterations: vec![0, 1, 5],
            schemes: vec![SqrtScheme::ModifiedNewtonSchulz, SqrtScheme::DenmanBeavers],
            scale: None,
            input_scale: 100.0,
            seed: 3,
            timing: false,
        }
    }

    #[test]
    fn rows_are_sorted_and_complete() {
        let rows = sqrt_bench(&spec()).unwrap();
        assert_eq!(rows.len(), 4 * (1 + 2 * 3));
        assert_eq!(rows[0].dim, 4);
        assert_eq!(rows[0].cond, 1.0);
        assert_eq!(rows[0].scheme, "db");
        assert!(rows.iter().all(|r| r.wall_time_ms.is_none()));
    }

    #[test]
    fn zero_iterations_is_unnormalized_baseline() {
        let s = spec();
        let rows = sqrt_bench(&s).unwrap();
        let row = rows
            .iter()
            .find(|r| r.scheme == "ns" && r.iterations == Some(0) && r.dim == 8 && r.cond == 10.0)
            .unwrap();
        let a = bench_matrix(s.seed, 8, 10.0, s.input_scale);
        assert_eq!(row.rel_residual, sqrt_residual(&a, &a).unwrap());
    }

    #[test]
    fn residuals_fall_with_iterations_on_d64() {
        let s = SqrtBenchSpec {
            dims: vec![64],
            conds: vec![1e3],
            iterations: vec![0, 1, 5, 10, 20],
            ..spec()
        };
        let rows = sqrt_bench(&s).unwrap();
        let spectral = rows
            .iter()
            .find(|r| r.scheme == "spectral")
            .unwrap()
            .rel_residual;
        for scheme in ["db", "ns"] {
            let res: Vec<f64> = rows
                .iter()
                .filter(|r| r.scheme == scheme && r.iterations >= Some(1))
                .map(|r| r.rel_residual)
                .collect();
            for w in res.windows(2) {
                // Once both sit at the rounding floor the order is noise.
                assert!(w[1] < w[0] || w[0].max(w[1]) < 1e-13, "{scheme}: {res:?}");
            }
            assert!(*res.last().unwrap() <= 10.0 * spectral);
        }
    }

    #[test]
    fn invalid_sweeps_are_usage_errors() {
        let mut s = spec();
        s.conds = vec![0.5];
        assert!(matches!(sqrt_bench(&s), Err(CliError::Usage(_))));
        let mut s = spec();
        s.dims = vec![];
        assert!(matches!(sqrt_bench(&s), Err(CliError::Usage(_))));
    }

    #[test]
    fn gradcheck_status() {
        let o = run_gradcheck(
            MatFunKind::Sqrt,
            GradScheme::Lyapunov,
            SpectrumProfile::WellSeparated,
            6,
            1e-5,
            1,
        )
        .unwrap();
        assert_eq!(o.status(), "pass");
        let o = run_gradcheck(
            MatFunKind::Sqrt,
            GradScheme::SvdTruncated { tau: 1e-10 },
            SpectrumProfile::Degenerate,
            6,
            1e-5,
            1,
        )
        .unwrap();
        assert_eq!(o.status(), "report");
        assert!(o.report.is_finite());
    }
}
