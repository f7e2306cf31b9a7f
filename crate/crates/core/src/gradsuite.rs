//! Finite-difference verification of every differentiable op, both loss
//! terms, their combination and a small end-to-end network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{grad_check_with_fault, AutodiffError, GradCheck, Tape, Tensor, Var};
use crate::qloss::{combined_loss, mae_loss, rank_loss, LossConfig, LossError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub points: usize,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Draws allowed per case before giving up on finding kink-free points.
    pub max_attempts: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            points: 10,
            eps: 1e-5,
            tolerance: 1e-4,
            seed: 0x5eed,
            max_attempts: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: &'static str,
    pub checked: usize,
    pub excluded: usize,
    pub max_rel_error: f64,
}

impl CaseReport {
    pub fn passed(&self, opts: &SuiteOptions) -> bool {
        self.checked == opts.points && self.max_rel_error <= opts.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub options: SuiteOptions,
    pub cases: Vec<CaseReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed(&self.options))
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.cases.iter().filter(|c| !c.passed(&self.options)).map(|c| c.name).collect()
    }
}

type Build = fn(&mut Tape<f64>, &[Var], &Aux) -> Result<Var, AutodiffError>;

/// Constants shared by a case's probes: projection weights and targets.
struct Aux {
    probe: Tensor<f64>,
    targets: Vec<f64>,
}

struct Case {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    /// Length of the constant projection used to reduce to a scalar.
    probe_len: usize,
    targets: usize,
    build: Build,
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("valid shape")
}

/// Reduces any tensor to a scalar through a fixed random linear map, so the
/// op under test sees an uneven upstream gradient.
fn project(tape: &mut Tape<f64>, x: Var, aux: &Aux) -> Result<Var, AutodiffError> {
    let n = tape.value(x).numel();
    let flat = tape.reshape(x, &[1, n])?;
    let w = tape.constant(aux.probe.reshape(&[n, 1])?);
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.fully_connected(flat, w, b)?;
    tape.sum(y)
}

fn loss_err(e: LossError) -> AutodiffError {
    match e {
        LossError::Autodiff(e) => e,
        other => AutodiffError::BadGeometry {
            op: "loss",
            detail: other.to_string(),
        },
    }
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "conv2d",
            shapes: &[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]],
            probe_len: 2 * 3 * 5 * 5,
            targets: 0,
            build: |t, v, a| {
                let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
                project(t, y, a)
            },
        },
        Case {
            name: "conv2d_strided",
            shapes: &[&[2, 2, 6, 5], &[3, 2, 3, 3], &[3]],
            probe_len: 2 * 3 * 2 * 2,
            targets: 0,
            build: |t, v, a| {
                let y = t.conv2d(v[0], v[1], v[2], 2, 0)?;
                project(t, y, a)
            },
        },
        Case {
            name: "relu",
            shapes: &[&[2, 3, 2, 2]],
            probe_len: 24,
            targets: 0,
            build: |t, v, a| {
                let y = t.relu(v[0])?;
                project(t, y, a)
            },
        },
        Case {
            name: "add",
            shapes: &[&[2, 3, 2, 2], &[2, 3, 2, 2]],
            probe_len: 24,
            targets: 0,
            build: |t, v, a| {
                let y = t.add(v[0], v[1])?;
                project(t, y, a)
            },
        },
        Case {
            name: "subtract",
            shapes: &[&[2, 3, 2, 2], &[2, 3, 2, 2]],
            probe_len: 24,
            targets: 0,
            build: |t, v, a| {
                let y = t.subtract(v[0], v[1])?;
                project(t, y, a)
            },
        },
        Case {
            name: "concat_channels",
            shapes: &[&[2, 3, 2, 2], &[2, 1, 2, 2]],
            probe_len: 32,
            targets: 0,
            build: |t, v, a| {
                let y = t.concat_channels(v[0], v[1])?;
                project(t, y, a)
            },
        },
        Case {
            name: "global_avg_pool",
            shapes: &[&[2, 3, 3, 4]],
            probe_len: 6,
            targets: 0,
            build: |t, v, a| {
                let y = t.global_avg_pool(v[0])?;
                project(t, y, a)
            },
        },
        Case {
            name: "fully_connected",
            shapes: &[&[3, 4], &[4, 2], &[2]],
            probe_len: 6,
            targets: 0,
            build: |t, v, a| {
                let y = t.fully_connected(v[0], v[1], v[2])?;
                project(t, y, a)
            },
        },
        Case {
            name: "sum",
            shapes: &[&[2, 3, 2]],
            probe_len: 0,
            targets: 0,
            build: |t, v, _| t.sum(v[0]),
        },
        Case {
            name: "scale",
            shapes: &[&[2, 5]],
            probe_len: 10,
            targets: 0,
            build: |t, v, a| {
                let y = t.scale(v[0], -1.7)?;
                project(t, y, a)
            },
        },
        Case {
            name: "reshape",
            shapes: &[&[2, 3, 2]],
            probe_len: 12,
            targets: 0,
            build: |t, v, a| {
                let y = t.reshape(v[0], &[3, 4])?;
                project(t, y, a)
            },
        },
        Case {
            name: "mae_loss",
            shapes: &[&[6]],
            probe_len: 0,
            targets: 6,
            build: |t, v, a| mae_loss(t, v[0], &a.targets).map_err(loss_err),
        },
        Case {
            name: "rank_loss",
            shapes: &[&[6]],
            probe_len: 0,
            targets: 6,
            build: |t, v, a| rank_loss(t, v[0], &a.targets).map_err(loss_err),
        },
        Case {
            name: "combined_loss",
            shapes: &[&[6]],
            probe_len: 0,
            targets: 6,
            build: |t, v, a| {
                let cfg = LossConfig::new(0.7).map_err(loss_err)?;
                Ok(combined_loss(t, v[0], &a.targets, cfg).map_err(loss_err)?.total)
            },
        },
        Case {
            name: "network",
            // distorted, reference, stem w/b, conv w/b, projection w/b, fc1 w/b, fc2 w/b
            shapes: &[
                &[3, 3, 6, 6],
                &[3, 3, 6, 6],
                &[4, 6, 3, 3],
                &[4],
                &[4, 4, 3, 3],
                &[4],
                &[4, 4, 1, 1],
                &[4],
                &[4, 3],
                &[3],
                &[3, 1],
                &[1],
            ],
            probe_len: 0,
            targets: 3,
            build: |t, v, a| {
                let diff = t.subtract(v[1], v[0])?;
                let x = t.concat_channels(v[0], diff)?;
                let h = t.conv2d(x, v[2], v[3], 1, 1)?;
                let h = t.relu(h)?;
                let r = t.conv2d(h, v[4], v[5], 2, 1)?;
                let skip = t.conv2d(h, v[6], v[7], 2, 0)?;
                let s = t.add(r, skip)?;
                let s = t.relu(s)?;
                let g = t.global_avg_pool(s)?;
                let f = t.fully_connected(g, v[8], v[9])?;
                let f = t.relu(f)?;
                let o = t.fully_connected(f, v[10], v[11])?;
                let o = t.scale(o, 2.0)?;
                let scores = t.reshape(o, &[3])?;
                let cfg = LossConfig::default();
                Ok(combined_loss(t, scores, &a.targets, cfg).map_err(loss_err)?.total)
            },
        },
    ]
}

/// Every case name, in report order.
pub fn case_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

pub fn run_suite(opts: &SuiteOptions) -> Result<SuiteReport, AutodiffError> {
    run_suite_with_fault(opts, None)
}

/// As [`run_suite`], with the named op's gradient rule deliberately skewed.
#[doc(hidden)]
pub fn run_suite_with_fault(opts: &SuiteOptions, fault: Option<&'static str>) -> Result<SuiteReport, AutodiffError> {
    let mut reports = Vec::new();
    for (k, case) in cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut report = CaseReport {
            name: case.name,
            checked: 0,
            excluded: 0,
            max_rel_error: 0.0,
        };
        for _ in 0..opts.max_attempts {
            if report.checked == opts.points {
                break;
            }
            let inputs: Vec<Tensor<f64>> = case.shapes.iter().map(|s| uniform(s, &mut rng)).collect();
            let aux = Aux {
                probe: uniform(&[case.probe_len.max(1)], &mut rng),
                targets: (0..case.targets).map(|_| rng.random_range(0.0..1.0)).collect(),
            };
            let build = case.build;
            let outcome = grad_check_with_fault(|t, v| build(t, v, &aux), &inputs, opts.eps, fault)?;
            match outcome {
                GradCheck::Excluded { .. } => report.excluded += 1,
                GradCheck::Checked { max_rel_error, .. } => {
                    report.checked += 1;
                    report.max_rel_error = report.max_rel_error.max(max_rel_error);
                }
            }
        }
        reports.push(report);
    }
    Ok(SuiteReport {
        options: *opts,
        cases: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_is_covered() {
        let names = case_names();
        for op in [
            "conv2d",
            "relu",
            "add",
            "subtract",
            "concat_channels",
            "global_avg_pool",
            "fully_connected",
            "sum",
            "scale",
            "reshape",
            "mae_loss",
            "rank_loss",
            "combined_loss",
        ] {
            assert!(names.contains(&op), "{op}");
        }
    }

    #[test]
    fn suite_passes_and_detects_faults() {
        let opts = SuiteOptions { points: 3, ..SuiteOptions::default() };
        let report = run_suite(&opts).unwrap();
        assert!(report.passed(), "{report:?}");
        let broken = run_suite_with_fault(&opts, Some("global_avg_pool")).unwrap();
        assert!(broken.failures().contains(&"global_avg_pool"));
        assert!(!broken.failures().contains(&"relu"));
    }
}
