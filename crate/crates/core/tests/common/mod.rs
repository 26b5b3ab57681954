//! Reference implementations shared by the integration and acceptance tests.
//! They use plain loops, exact rationals or closed forms and do not call the
//! code under test except to read inputs.
#![allow(dead_code)]

use std::collections::BTreeMap;

use num::{BigInt, BigRational, ToPrimitive, Zero};
use opfuse::autodiff::{Tape, Var};
use opfuse::param::{GradBuffer, ParamStore};
use opfuse::tensor::Tensor;
use opfuse::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Below this a central difference with `FD_STEP` in f64 is roundoff
/// (about ulp(loss) / step for losses of order 1 to 10).
pub const FD_RESOLUTION: f64 = 1e-9;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
    pub failures: Vec<String>,
    /// Entries where both sides sit under `FD_RESOLUTION` and were compared
    /// absolutely instead.
    pub unresolved: usize,
}

impl FdReport {
    fn record(&mut self, at: String, analytic: f64, numeric: f64) {
        self.checked += 1;
        if numeric.abs() < FD_RESOLUTION && analytic.abs() < FD_RESOLUTION {
            self.unresolved += 1;
            return;
        }
        let e = rel_err(analytic, numeric);
        if e > self.worst {
            self.worst = e;
            self.worst_at = at.clone();
        }
        if e >= FD_TOL {
            self.failures.push(format!("{at}: analytic {analytic:e} numeric {numeric:e} rel {e:e}"));
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    pub fn assert_ok(&self, what: &str) {
        assert!(
            self.ok(),
            "{what}: {} of {} entries off (worst {:e} at {}):\n{}",
            self.failures.len(),
            self.checked,
            self.worst,
            self.worst_at,
            self.failures.iter().take(10).cloned().collect::<Vec<_>>().join("\n")
        );
    }
}

/// Step of the five-point stencil used for whole-model parameter checks.
/// Its O(h^4) truncation error allows a step ten times the primitive one.
pub const FD_MODEL_STEP: f64 = 1e-4;

fn central5(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    let h = FD_MODEL_STEP;
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Checks d f / d inputs, where `f` builds a scalar from leaf inputs.
pub fn check_leaves<F>(inputs: &[Tensor], f: F) -> FdReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &leaves).expect("forward");
    let grads = tape.backward(out).expect("backward");
    let analytic: Vec<Tensor> = leaves.iter().map(|v| grads.wrt(*v)).collect();

    let eval = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vs).expect("forward").value().item()
    };
    let mut report = FdReport::default();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let numeric = central(
                |x| {
                    let mut xs = inputs.to_vec();
                    xs[k].data_mut()[i] = x;
                    eval(&xs)
                },
                input.data()[i],
            );
            report.record(format!("input{k}[{i}]"), analytic[k].data()[i], numeric);
        }
    }
    report
}

/// Dense analytic gradient of every parameter bound while computing `loss`.
pub fn param_gradients<F>(store: &ParamStore, loss: &F) -> BTreeMap<String, Tensor>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let l = loss(&tape, store).expect("forward");
    let grads = tape.backward(l).expect("backward");
    let mut buf = GradBuffer::new();
    for (name, g) in grads.params() {
        buf.add(store, &name, &g, 1.0).expect("accumulate");
    }
    buf.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Checks every entry of the parameters matching `prefixes` (all when empty).
/// Parameters the loss never touched must have zero numeric gradient.
pub fn check_params<F>(store: &ParamStore, prefixes: &[&str], loss: F) -> FdReport
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    let analytic = param_gradients(store, &loss);
    let eval = |s: &ParamStore| -> f64 {
        let tape = Tape::new();
        loss(&tape, s).expect("forward").value().item()
    };
    let mut report = FdReport::default();
    let names: Vec<String> = store
        .names()
        .filter(|n| prefixes.is_empty() || prefixes.iter().any(|p| n.starts_with(p)))
        .map(str::to_string)
        .collect();
    let mut work = store.clone();
    for name in names {
        let len = store.get(&name).unwrap().len();
        for i in 0..len {
            let x0 = store.get(&name).unwrap().data()[i];
            let numeric = central5(
                |x| {
                    work.get_mut(&name).unwrap().data_mut()[i] = x;
                    eval(&work)
                },
                x0,
            );
            work.get_mut(&name).unwrap().data_mut()[i] = x0;
            let a = analytic.get(&name).map_or(0.0, |t| t.data()[i]);
            report.record(format!("{name}[{i}]"), a, numeric);
        }
    }
    report
}

// ---------------------------------------------------------------------------
// GATv2 by explicit loops.

pub struct DenseHead {
    /// `[d_in][d_out]`
    pub theta_s: Vec<Vec<f64>>,
    pub theta_t: Vec<Vec<f64>>,
    /// `[3][d_out]`
    pub theta_e: Vec<Vec<f64>>,
    pub att: Vec<f64>,
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

pub fn dense_heads(store: &ParamStore, layer: usize, heads: usize) -> Vec<DenseHead> {
    (0..heads)
        .map(|k| {
            let g = |n: &str| store.get(&format!("gat.l{layer}.h{k}.{n}")).unwrap().clone();
            DenseHead {
                theta_s: rows_of(&g("theta_s")),
                theta_t: rows_of(&g("theta_t")),
                theta_e: rows_of(&g("theta_e")),
                att: g("att").data().to_vec(),
            }
        })
        .collect()
}

fn project(h: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let out = w[0].len();
    (0..out).map(|o| h.iter().zip(w).map(|(x, row)| x * row[o]).sum()).collect()
}

/// Returns node outputs `[n][K*d_out]` and per-head coefficients `[K][n][n]`.
/// An edge `(src, dst)` lets `dst` attend to `src`.
pub fn dense_gat(
    x: &[Vec<f64>],
    edges: &[(usize, usize)],
    polarity: [f64; 3],
    heads: &[DenseHead],
    slope: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let n = x.len();
    let mut out = vec![Vec::new(); n];
    let mut alphas = Vec::new();
    for head in heads {
        let mut alpha = vec![vec![0.0; n]; n];
        for i in 0..n {
            let hs = project(&x[i], &head.theta_s);
            let mut nbrs = vec![i];
            for &(src, dst) in edges {
                if dst == i && src != i {
                    nbrs.push(src);
                }
            }
            let scores: Vec<f64> = nbrs
                .iter()
                .map(|&j| {
                    let ht = project(&x[j], &head.theta_t);
                    let e = if j == i { [0.0; 3] } else { polarity };
                    let he = project(&e, &head.theta_e);
                    (0..head.att.len())
                        .map(|o| {
                            let z = hs[o] + ht[o] + he[o];
                            head.att[o] * if z >= 0.0 { z } else { slope * z }
                        })
                        .sum()
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut acc = vec![0.0; head.att.len()];
            for (&j, e) in nbrs.iter().zip(&exps) {
                let a = e / z;
                alpha[i][j] = a;
                for (o, v) in project(&x[j], &head.theta_t).into_iter().enumerate() {
                    acc[o] += a * v;
                }
            }
            out[i].extend(acc);
        }
        alphas.push(alpha);
    }
    (out, alphas)
}

// ---------------------------------------------------------------------------
// Stuart-Maxwell in exact arithmetic.

fn rat(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// `d' S^-1 d` over the first `C-1` categories, by Gaussian elimination over
/// the rationals. `None` when `S` is singular.
pub fn stuart_maxwell_exact(table: &[Vec<u64>]) -> Option<f64> {
    let c = table.len();
    let k = c - 1;
    let row = |i: usize| table[i].iter().sum::<u64>() as i64;
    let col = |j: usize| table.iter().map(|r| r[j]).sum::<u64>() as i64;
    let mut a: Vec<Vec<BigRational>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if i == j {
                        rat(row(i) + col(i) - 2 * table[i][i] as i64)
                    } else {
                        rat(-((table[i][j] + table[j][i]) as i64))
                    }
                })
                .collect()
        })
        .collect();
    let d: Vec<BigRational> = (0..k).map(|i| rat(row(i) - col(i))).collect();
    let mut b = d.clone();
    for p in 0..k {
        let pivot = (p..k).find(|&r| !a[r][p].is_zero())?;
        a.swap(p, pivot);
        b.swap(p, pivot);
        for r in 0..k {
            if r != p && !a[r][p].is_zero() {
                let f = &a[r][p] / &a[p][p];
                for cc in p..k {
                    let v = &f * &a[p][cc];
                    a[r][cc] -= v;
                }
                let v = &f * &b[p];
                b[r] -= v;
            }
        }
    }
    let mut stat = rat(0);
    for i in 0..k {
        stat += &d[i] * (&b[i] / &a[i][i]);
    }
    stat.to_f64()
}

// ---------------------------------------------------------------------------
// Chi-square upper tail in closed form for integer df.

pub fn chi_square_sf_closed(x: f64, df: u32) -> f64 {
    let h = x / 2.0;
    if df.is_multiple_of(2) {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..df / 2 {
            term *= h / f64::from(k);
            sum += term;
        }
        (-h).exp() * sum
    } else {
        let base = 1.0 - erf_series(h.sqrt());
        // Q(k + 1/2, h) = erfc(sqrt h) + e^-h sum_{j<k} h^(j+1/2) / Gamma(j + 3/2)
        let mut sum = 0.0;
        let mut term = h.sqrt() / (std::f64::consts::PI.sqrt() / 2.0);
        for j in 0..(df - 1) / 2 {
            if j > 0 {
                term *= h / (f64::from(j) + 0.5);
            }
            sum += term;
        }
        base + (-h).exp() * sum
    }
}

/// `erf(z) = 2/sqrt(pi) e^(-z^2) sum 2^n z^(2n+1) / (2n+1)!!`, all terms positive.
fn erf_series(z: f64) -> f64 {
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    while term > 1e-18 * sum {
        n += 1.0;
        term *= 2.0 * z * z / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / std::f64::consts::PI.sqrt() * (-z * z).exp() * sum
}

/// Standard-normal identity for df = 1.
pub fn chi_square_sf_df1(x: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::new(0.0, 1.0).unwrap();
    2.0 * n.sf(x.sqrt())
}

// ---------------------------------------------------------------------------
// Synthetic-corpus model settings.

use opfuse::encoder::{EncoderConfig, ToyEncoderConfig};
use opfuse::gnn::GatConfig;
use opfuse::model::{FusionKind, ModelConfig, OptimConfig};

/// Model used on the planted corpus; `FusionKind::None` is the text-only baseline.
pub fn planted_model(fusion: FusionKind, epochs: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig::Toy(ToyEncoderConfig {
            width: 32,
            layers: 1,
            heads: 4,
            ff_width: None,
            buckets: 1024,
        }),
        gat: GatConfig {
            out_dim: 16,
            heads: 4,
            role_embeddings: true,
            ..Default::default()
        },
        fusion,
        alpha_res: 1.0,
        optim: OptimConfig {
            lr: Some(3e-3),
            batch_size: 16,
            epochs,
            patience: epochs,
            weighted_ce: false,
        },
        seed: 1,
    }
}

/// Model for the keyword/polarity exclusive-or corpus. Without encoder layers
/// the pooled text vector carries no token interactions, so only a
/// multiplicative fusion can combine the two sources.
pub fn xor_model(epochs: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig::Toy(ToyEncoderConfig {
            width: 16,
            layers: 0,
            heads: 2,
            ff_width: None,
            buckets: 512,
        }),
        gat: GatConfig {
            out_dim: 8,
            heads: 2,
            role_embeddings: true,
            ..Default::default()
        },
        fusion: FusionKind::Gate,
        alpha_res: 1.0,
        optim: OptimConfig {
            lr: Some(1e-2),
            batch_size: 16,
            epochs,
            patience: epochs,
            weighted_ce: false,
        },
        seed: 1,
    }
}
