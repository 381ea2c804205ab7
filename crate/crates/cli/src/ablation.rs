//! The synthetic ablation benchmark: normalization combinations with a
//! classifier-only protocol, fine-tuning with different backward schemes,
//! and the exponent sweep, each averaged over a fixed list of seeds.

use rayon::prelude::*;
use spdnorm::grad::{GradScheme, DEFAULT_TAU};
use spdnorm::layers::PipelineConfig;
use spdnorm::matfun::MatFunKind;
use spdnorm::train::{
    evaluate, exponent_sweep, generate_benchmark, train, SyntheticSpec, TrainConfig,
};

use crate::error::CliResult;

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSettings {
    pub spec: SyntheticSpec,
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    /// `fine_tune` is set per variant.
    pub train: TrainConfig,
    pub p_values: Vec<f64>,
}

impl AblationSettings {
    /// Settings of the frozen benchmark.
    pub fn benchmark() -> Self {
        Self {
            spec: SyntheticSpec::benchmark(),
            seeds: vec![0, 1, 2, 3],
            epsilon: 1e-3,
            train: TrainConfig {
                learning_rate: 0.1,
                momentum: 0.9,
                epochs: 60,
                batch_size: 16,
                init_epochs: 10,
                ..TrainConfig::default()
            },
            p_values: vec![1.0, 0.75, 0.5, 0.25],
        }
    }
}

/// One trained configuration of the benchmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub pipeline: PipelineConfig,
    pub fine_tune: bool,
}

pub fn variants(epsilon: f64) -> Vec<Variant> {
    let plain = PipelineConfig {
        epsilon,
        matfun: None,
        grad_scheme: GradScheme::PassThrough,
        use_signed_sqrt: false,
        use_l2: true,
        ..PipelineConfig::default()
    };
    let sqrt = PipelineConfig {
        matfun: Some(MatFunKind::Sqrt),
        grad_scheme: GradScheme::Lyapunov,
        ..plain
    };
    let log = PipelineConfig {
        matfun: Some(MatFunKind::Log),
        grad_scheme: GradScheme::SvdTruncated { tau: DEFAULT_TAU },
        ..plain
    };
    let sgn = |c: PipelineConfig| PipelineConfig {
        use_signed_sqrt: true,
        ..c
    };
    let fixed = |name, pipeline| Variant {
        name,
        pipeline,
        fine_tune: false,
    };
    let tuned = |name, grad_scheme| Variant {
        name,
        pipeline: PipelineConfig {
            grad_scheme,
            ..sgn(sqrt)
        },
        fine_tune: true,
    };
    vec![
        fixed("none", plain),
        fixed("sgnsqrt", sgn(plain)),
        fixed("sqrt", sqrt),
        fixed("log", log),
        fixed("sqrt+sgnsqrt", sgn(sqrt)),
        fixed("log+sgnsqrt", sgn(log)),
        tuned("finetune-lyapunov", GradScheme::Lyapunov),
        tuned(
            "finetune-svd",
            GradScheme::SvdTruncated { tau: DEFAULT_TAU },
        ),
        tuned("finetune-pass", GradScheme::PassThrough),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Trains every variant on every seed; rows are ordered by variant (as
/// listed in [`variants`]) and then seed.
pub fn run_ablation(s: &AblationSettings, only: Option<&[&str]>) -> CliResult<Vec<AblationRow>> {
    let vs: Vec<Variant> = variants(s.epsilon)
        .into_iter()
        .filter(|v| only.is_none_or(|names| names.contains(&v.name)))
        .collect();
    let jobs: Vec<(usize, u64)> = (0..vs.len())
        .flat_map(|v| s.seeds.iter().map(move |&seed| (v, seed)))
        .collect();
    jobs.par_iter()
        .map(|&(vi, seed)| {
            let v = &vs[vi];
            let (train_set, test_set) = generate_benchmark(&s.spec, seed)?;
            let tcfg = TrainConfig {
                seed,
                fine_tune: v.fine_tune,
                ..s.train
            };
            let model = train(&train_set, &v.pipeline, &tcfg)?.model;
            Ok(AblationRow {
                variant: v.name,
                seed,
                train_accuracy: evaluate(&model, &train_set)?,
                test_accuracy: evaluate(&model, &test_set)?,
            })
        })
        .collect()
}

/// Mean test accuracy per variant, in row order.
pub fn mean_test_accuracy(rows: &[AblationRow]) -> Vec<(&'static str, f64)> {
    let mut out: Vec<(&'static str, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(n, _, _)| *n == r.variant) {
            Some(e) => {
                e.1 += r.test_accuracy;
                e.2 += 1;
            }
            None => out.push((r.variant, r.test_accuracy, 1)),
        }
    }
    out.into_iter().map(|(n, s, c)| (n, s / c as f64)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub p: f64,
    pub test_accuracy: f64,
}

/// Exponent sweep on top of sqrt + signed sqrt, classifier only.
pub fn run_sweep(s: &AblationSettings) -> CliResult<Vec<SweepRow>> {
    let base = PipelineConfig {
        epsilon: s.epsilon,
        ..PipelineConfig::default()
    };
    let per_seed: Vec<CliResult<Vec<SweepRow>>> = s
        .seeds
        .par_iter()
        .map(|&seed| {
            let (train_set, test_set) = generate_benchmark(&s.spec, seed)?;
            let tcfg = TrainConfig { seed, ..s.train };
            Ok(
                exponent_sweep(&train_set, &test_set, &base, &tcfg, &s.p_values)?
                    .into_iter()
                    .map(|(p, acc)| SweepRow {
                        seed,
                        p,
                        test_accuracy: acc,
                    })
                    .collect(),
            )
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Mean accuracy per exponent, in the order of `p_values`.
pub fn mean_sweep(rows: &[SweepRow], p_values: &[f64]) -> Vec<(f64, f64)> {
    p_values
        .iter()
        .map(|&p| {
            let hits: Vec<f64> = rows
                .iter()
                .filter(|r| r.p == p)
                .map(|r| r.test_accuracy)
                .collect();
            (p, hits.iter().sum::<f64>() / hits.len().max(1) as f64)
        })
        .collect()
}
