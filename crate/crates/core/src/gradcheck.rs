//! Finite-difference gradient checking.
//!
//! Central differences with the default step 1e-5; a component passes when
//! |analytic − numeric| ≤ max(abs_tol, rel_tol · max(|analytic|, |numeric|)),
//! i.e. whichever tolerance is looser. `primitive_suite` runs every tape
//! primitive on ≥10 random instances and is reused by the acceptance tests.

use crate::param::Param;
use crate::rng::RngStream;
use crate::tape::{Tape, Tensor};
use crate::Real;

#[derive(Debug, Clone, Copy)]
pub struct FdSettings {
    pub step: Real,
    pub rel_tol: Real,
    pub abs_tol: Real,
}

impl Default for FdSettings {
    fn default() -> Self {
        FdSettings {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
        }
    }
}

/// Central-difference gradient of a scalar function.
pub fn central_diff(f: &mut dyn FnMut(&[Real]) -> Real, x0: &[Real], step: Real) -> Vec<Real> {
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let plus = f(&x);
        x[i] = orig - step;
        let minus = f(&x);
        x[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    out
}

/// Compare analytic and numeric gradients under the pass rule above.
pub fn compare(analytic: &[Real], numeric: &[Real], s: &FdSettings) -> Result<(), String> {
    if analytic.len() != numeric.len() {
        return Err(format!(
            "length mismatch: analytic {} vs numeric {}",
            analytic.len(),
            numeric.len()
        ));
    }
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let tol = s.abs_tol.max(s.rel_tol * a.abs().max(n.abs()));
        if (a - n).abs() > tol {
            return Err(format!(
                "component {i}: analytic {a:.10e} vs numeric {n:.10e} (diff {:.3e}, tol {tol:.3e})",
                (a - n).abs()
            ));
        }
    }
    Ok(())
}

/// Check the gradient of `build` with respect to each of several inputs.
/// `build` must construct a scalar loss from leaf tensors given in order.
pub fn check_inputs<F>(
    inputs: &[(&[Real], &[usize])],
    build: F,
    settings: &FdSettings,
) -> Result<(), String>
where
    F: Fn(&Tape, &[Tensor]) -> Tensor,
{
    // Analytic pass.
    let params: Vec<Param> = inputs
        .iter()
        .enumerate()
        .map(|(i, (vals, shape))| Param::new(format!("in{i}"), shape, vals.to_vec()))
        .collect();
    let tape = Tape::new();
    let leaves: Vec<Tensor> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = build(&tape, &leaves);
    loss.backward().map_err(|e| e.to_string())?;

    for (idx, p) in params.iter().enumerate() {
        let analytic = p
            .grad()
            .ok_or_else(|| format!("input {idx} received no gradient"))?;
        let mut f = |x: &[Real]| -> Real {
            let perturbed: Vec<Param> = inputs
                .iter()
                .enumerate()
                .map(|(i, (vals, shape))| {
                    let v = if i == idx { x.to_vec() } else { vals.to_vec() };
                    Param::new(format!("in{i}"), shape, v)
                })
                .collect();
            let t = Tape::new();
            let ls: Vec<Tensor> = perturbed.iter().map(|p| t.leaf(p)).collect();
            build(&t, &ls).item().expect("loss must be scalar")
        };
        let numeric = central_diff(&mut f, inputs[idx].0, settings.step);
        compare(&analytic, &numeric, settings).map_err(|e| format!("input {idx}: {e}"))?;
    }
    Ok(())
}

/// Result of one named gradient check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub failure: Option<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

fn random_vec(stream: &mut RngStream, n: usize) -> Vec<Real> {
    (0..n).map(|_| stream.normal()).collect()
}

/// Random values kept away from a kink at zero so finite differences stay valid.
fn random_vec_away_from_zero(stream: &mut RngStream, n: usize, margin: Real) -> Vec<Real> {
    (0..n)
        .map(|_| {
            let v = stream.normal();
            if v.abs() < margin {
                margin.copysign(if v == 0.0 { 1.0 } else { v })
            } else {
                v
            }
        })
        .collect()
}

fn run_instances<F>(name: &str, instances: usize, mut one: F) -> CheckReport
where
    F: FnMut(usize) -> Result<(), String>,
{
    for i in 0..instances {
        if let Err(e) = one(i) {
            return CheckReport {
                name: name.to_owned(),
                instances,
                failure: Some(format!("instance {i}: {e}")),
            };
        }
    }
    CheckReport {
        name: name.to_owned(),
        instances,
        failure: None,
    }
}

/// Scalarize a tensor against fixed random weights so full Jacobian action is
/// exercised by a single backward pass.
fn weighted_sum(t: &Tensor, weights: &[Real], tape: &Tape) -> Tensor {
    let w = tape.constant(weights.to_vec(), &t.shape());
    t.mul(&w).unwrap().sum_all()
}

/// Finite-difference checks for every autodiff primitive, ≥10 random
/// instances each. Deterministic given the seed.
pub fn primitive_suite(seed: u64) -> Vec<CheckReport> {
    let s = FdSettings::default();
    let instances = 10;
    let mut reports = Vec::new();
    let root = RngStream::new(seed, "gradcheck");

    {
        let mut st = root.fork("add");
        reports.push(run_instances("add", instances, |_| {
            let a = random_vec(&mut st, 6);
            let b = random_vec(&mut st, 6);
            let w = random_vec(&mut st, 6);
            check_inputs(
                &[(&a, &[2, 3]), (&b, &[2, 3])],
                |tape, xs| weighted_sum(&xs[0].add(&xs[1]).unwrap(), &w, tape),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("mul");
        reports.push(run_instances("mul", instances, |_| {
            let a = random_vec(&mut st, 6);
            let b = random_vec(&mut st, 6);
            let w = random_vec(&mut st, 6);
            check_inputs(
                &[(&a, &[6]), (&b, &[6])],
                |tape, xs| weighted_sum(&xs[0].mul(&xs[1]).unwrap(), &w, tape),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("scale");
        reports.push(run_instances("scale", instances, |_| {
            let a = random_vec(&mut st, 5);
            let c = st.normal();
            let w = random_vec(&mut st, 5);
            check_inputs(
                &[(&a, &[5])],
                |tape, xs| weighted_sum(&xs[0].scale(c), &w, tape),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("relu");
        reports.push(run_instances("relu", instances, |_| {
            let a = random_vec_away_from_zero(&mut st, 8, 0.05);
            let w = random_vec(&mut st, 8);
            check_inputs(
                &[(&a, &[8])],
                |tape, xs| weighted_sum(&xs[0].relu(), &w, tape),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("gelu");
        reports.push(run_instances("gelu", instances, |_| {
            let a = random_vec(&mut st, 8);
            let w = random_vec(&mut st, 8);
            check_inputs(
                &[(&a, &[8])],
                |tape, xs| weighted_sum(&xs[0].gelu(), &w, tape),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("softplus");
        reports.push(run_instances("softplus", instances, |_| {
            let a = random_vec(&mut st, 8);
            let w = random_vec(&mut st, 8);
            check_inputs(
                &[(&a, &[8])],
                |tape, xs| weighted_sum(&xs[0].softplus(), &w, tape),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("matmul");
        reports.push(run_instances("matmul", instances, |_| {
            let a = random_vec(&mut st, 20);
            let b = random_vec(&mut st, 15);
            let w = random_vec(&mut st, 12);
            check_inputs(
                &[(&a, &[4, 5]), (&b, &[5, 3])],
                |tape, xs| weighted_sum(&xs[0].matmul(&xs[1]).unwrap(), &w, tape),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("matmul_nt");
        reports.push(run_instances("matmul_nt", instances, |_| {
            let a = random_vec(&mut st, 12);
            let b = random_vec(&mut st, 8);
            let w = random_vec(&mut st, 6);
            check_inputs(
                &[(&a, &[3, 4]), (&b, &[2, 4])],
                |tape, xs| weighted_sum(&xs[0].matmul_nt(&xs[1]).unwrap(), &w, tape),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("add_bias_rows");
        reports.push(run_instances("add_bias_rows", instances, |_| {
            let x = random_vec(&mut st, 12);
            let b = random_vec(&mut st, 4);
            let w = random_vec(&mut st, 12);
            check_inputs(
                &[(&x, &[3, 4]), (&b, &[4])],
                |tape, xs| weighted_sum(&xs[0].add_bias_rows(&xs[1]).unwrap(), &w, tape),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("embed_lookup");
        reports.push(run_instances("embed_lookup", instances, |_| {
            let table = random_vec(&mut st, 5 * 3);
            let ids: Vec<u32> = (0..4).map(|_| st.below(5) as u32).collect();
            let w = random_vec(&mut st, 4 * 3);
            check_inputs(
                &[(&table, &[5, 3])],
                |tape, xs| weighted_sum(&xs[0].embed_lookup(&ids).unwrap(), &w, tape),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("row_ops");
        reports.push(run_instances("row/row_slice/col_slice", instances, |_| {
            let x = random_vec(&mut st, 20);
            let w1 = random_vec(&mut st, 5);
            let w2 = random_vec(&mut st, 10);
            let w3 = random_vec(&mut st, 8);
            check_inputs(
                &[(&x, &[4, 5])],
                |tape, xs| {
                    let r = weighted_sum(&xs[0].row(2).unwrap(), &w1, tape);
                    let rs = weighted_sum(&xs[0].row_slice(1, 2).unwrap(), &w2, tape);
                    let cs = weighted_sum(&xs[0].col_slice(1, 2).unwrap(), &w3, tape);
                    r.add(&rs).unwrap().add(&cs).unwrap()
                },
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("concat_cols");
        reports.push(run_instances("concat_cols", instances, |_| {
            let a = random_vec(&mut st, 6);
            let b = random_vec(&mut st, 9);
            let w = random_vec(&mut st, 15);
            check_inputs(
                &[(&a, &[3, 2]), (&b, &[3, 3])],
                |tape, xs| {
                    let cat = tape.concat_cols(&[xs[0].clone(), xs[1].clone()]).unwrap();
                    weighted_sum(&cat, &w, tape)
                },
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("layer_norm");
        reports.push(run_instances("layer_norm", instances, |_| {
            let x = random_vec(&mut st, 12);
            let gain: Vec<Real> = (0..4).map(|_| 1.0 + 0.3 * st.normal()).collect();
            let bias = random_vec(&mut st, 4);
            let w = random_vec(&mut st, 12);
            check_inputs(
                &[(&x, &[3, 4]), (&gain, &[4]), (&bias, &[4])],
                |tape, xs| {
                    weighted_sum(&xs[0].layer_norm(&xs[1], &xs[2], 1e-5).unwrap(), &w, tape)
                },
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("causal_softmax");
        reports.push(run_instances("causal_softmax", instances, |_| {
            let x = random_vec(&mut st, 16);
            let w = random_vec(&mut st, 16);
            check_inputs(
                &[(&x, &[4, 4])],
                |tape, xs| weighted_sum(&xs[0].causal_softmax().unwrap(), &w, tape),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("l2_normalize");
        reports.push(run_instances("l2_normalize", instances, |_| {
            let x = random_vec_away_from_zero(&mut st, 10, 0.05);
            let w = random_vec(&mut st, 10);
            check_inputs(
                &[(&x, &[2, 5])],
                |tape, xs| weighted_sum(&xs[0].l2_normalize().unwrap(), &w, tape),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("cosine_sim");
        reports.push(run_instances("cosine_sim", instances, |_| {
            let a = random_vec_away_from_zero(&mut st, 6, 0.05);
            let b = random_vec_away_from_zero(&mut st, 6, 0.05);
            check_inputs(
                &[(&a, &[6]), (&b, &[6])],
                |_, xs| xs[0].cosine_sim(&xs[1]).unwrap(),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("dot");
        reports.push(run_instances("dot", instances, |_| {
            let a = random_vec(&mut st, 7);
            let b = random_vec(&mut st, 7);
            check_inputs(&[(&a, &[7]), (&b, &[7])], |_, xs| xs[0].dot(&xs[1]).unwrap(), &s)
        }));
    }
    {
        let mut st = root.fork("stack_mean");
        reports.push(run_instances("stack_scalars/mean_all/sum_all", instances, |_| {
            let a = random_vec(&mut st, 5);
            check_inputs(
                &[(&a, &[5])],
                |tape, xs| {
                    // pick out elements as scalars via basis dots, restack them
                    let parts: Vec<Tensor> = (0..5)
                        .map(|i| {
                            let mut e = vec![0.0; 5];
                            e[i] = 1.0;
                            xs[0].dot(&tape.constant(e, &[5])).unwrap()
                        })
                        .collect();
                    let stacked = tape.stack_scalars(&parts).unwrap();
                    stacked.mean_all().add(&xs[0].sum_all()).unwrap()
                },
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("cross_entropy");
        reports.push(run_instances("softmax_cross_entropy", instances, |_| {
            let logits = random_vec(&mut st, 8);
            let target = st.below(8);
            check_inputs(
                &[(&logits, &[8])],
                |_, xs| xs[0].cross_entropy(target).unwrap(),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("cross_entropy_rows");
        reports.push(run_instances("cross_entropy_rows_mean", instances, |_| {
            let logits = random_vec(&mut st, 3 * 6);
            let targets: Vec<u32> = (0..3).map(|_| st.below(6) as u32).collect();
            check_inputs(
                &[(&logits, &[3, 6])],
                |_, xs| xs[0].cross_entropy_rows_mean(&targets).unwrap(),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("kl_vs_ref");
        reports.push(run_instances("kl_vs_ref_mean", instances, |_| {
            let logits = random_vec(&mut st, 3 * 5);
            let ref_logits = random_vec(&mut st, 3 * 5);
            let mut ref_probs = Vec::new();
            for r in 0..3 {
                ref_probs.extend(crate::kernels::softmax(&ref_logits[r * 5..(r + 1) * 5]));
            }
            let ref_probs = std::rc::Rc::new(ref_probs);
            check_inputs(
                &[(&logits, &[3, 5])],
                |_, xs| xs[0].kl_vs_ref_mean(std::rc::Rc::clone(&ref_probs)).unwrap(),
                &s,
            )
        }));
    }
    {
        let mut st = root.fork("mlp_composite");
        reports.push(run_instances("mlp_composite", instances, |_| {
            let x = random_vec(&mut st, 3 * 4);
            let w1 = random_vec(&mut st, 4 * 5);
            let b1 = random_vec(&mut st, 5);
            let w2 = random_vec(&mut st, 5 * 4);
            let b2 = random_vec(&mut st, 4);
            let targets: Vec<u32> = (0..3).map(|_| st.below(4) as u32).collect();
            check_inputs(
                &[
                    (&x, &[3, 4]),
                    (&w1, &[4, 5]),
                    (&b1, &[5]),
                    (&w2, &[5, 4]),
                    (&b2, &[4]),
                ],
                |_, xs| {
                    let h = xs[0]
                        .matmul(&xs[1])
                        .unwrap()
                        .add_bias_rows(&xs[2])
                        .unwrap()
                        .gelu();
                    let logits = h.matmul(&xs[3]).unwrap().add_bias_rows(&xs[4]).unwrap();
                    logits.cross_entropy_rows_mean(&targets).unwrap()
                },
                &s,
            )
        }));
    }

    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_suite_all_pass() {
        for report in primitive_suite(20240601) {
            assert!(
                report.passed(),
                "{} failed: {}",
                report.name,
                report.failure.unwrap()
            );
        }
    }

    #[test]
    fn compare_uses_looser_tolerance() {
        let s = FdSettings::default();
        // big values: relative 1e-4 dominates
        assert!(compare(&[1000.0], &[1000.05], &s).is_ok());
        // tiny values: absolute 1e-7 dominates
        assert!(compare(&[1e-9], &[9e-8], &s).is_ok());
        assert!(compare(&[1.0], &[1.01], &s).is_err());
    }
}
