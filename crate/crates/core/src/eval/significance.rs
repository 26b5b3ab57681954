//! Paired tests between two models scored on the same records.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dataset::{Emotion, NUM_CLASSES};
use crate::error::{Error, Result};

use super::chi2::{chi_square_sf, ln_gamma};
use super::metrics::Prediction;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Paired {
    pub id: String,
    pub gold: Emotion,
    pub a: Emotion,
    pub b: Emotion,
}

/// Aligns two prediction files that must list the same ids in the same order.
pub fn pair_predictions(a: &[Prediction], b: &[Prediction]) -> Result<Vec<Paired>> {
    let n = a.len().max(b.len());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        match (a.get(i), b.get(i)) {
            (Some(x), Some(y)) if x.id == y.id => {
                if x.gold != y.gold {
                    return Err(Error::InvalidArgument {
                        op: "pair_predictions",
                        msg: format!("record {}: gold {} vs {}", x.id, x.gold, y.gold),
                    });
                }
                out.push(Paired {
                    id: x.id.clone(),
                    gold: x.gold,
                    a: x.pred,
                    b: y.pred,
                });
            }
            (x, y) => {
                let id = |p: Option<&Prediction>| p.map_or_else(|| "<end of file>".to_string(), |p| p.id.clone());
                return Err(Error::IdMismatch {
                    position: i,
                    left: id(x),
                    right: id(y),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McNemar {
    /// A correct, B wrong.
    pub b: u64,
    /// A wrong, B correct.
    pub c: u64,
    /// Undefined (`None`) when there are no discordant pairs.
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub corrected_statistic: Option<f64>,
    pub corrected_p_value: Option<f64>,
    pub exact_p_value: f64,
}

pub fn mcnemar_counts(b: u64, c: u64) -> Result<McNemar> {
    let n = b + c;
    if n == 0 {
        return Ok(McNemar {
            b,
            c,
            statistic: None,
            p_value: None,
            corrected_statistic: None,
            corrected_p_value: None,
            exact_p_value: 1.0,
        });
    }
    let diff = b.abs_diff(c) as f64;
    let stat = diff * diff / n as f64;
    let corr = (diff - 1.0).max(0.0).powi(2) / n as f64;
    Ok(McNemar {
        b,
        c,
        statistic: Some(stat),
        p_value: Some(chi_square_sf(stat, 1)?),
        corrected_statistic: Some(corr),
        corrected_p_value: Some(chi_square_sf(corr, 1)?),
        exact_p_value: exact_binomial(b.min(c), n),
    })
}

/// Two-sided exact sign test: twice the lower tail of Binomial(n, 1/2) at `k`.
fn exact_binomial(k: u64, n: u64) -> f64 {
    let nf = n as f64;
    let ln_half = nf * 0.5f64.ln();
    let tail: f64 = (0..=k)
        .map(|i| {
            let i = i as f64;
            (ln_gamma(nf + 1.0) - ln_gamma(i + 1.0) - ln_gamma(nf - i + 1.0) + ln_half).exp()
        })
        .sum();
    (2.0 * tail).min(1.0)
}

pub fn mcnemar(paired: &[Paired]) -> Result<McNemar> {
    let mut b = 0;
    let mut c = 0;
    for p in paired {
        match (p.a == p.gold, p.b == p.gold) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    mcnemar_counts(b, c)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StuartMaxwell {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Categories with a nonzero marginal, which enter the test.
    pub categories: Vec<usize>,
    /// The covariance matrix was singular and a pseudo-inverse was used.
    pub rank_reduced: bool,
}

/// Model A's label (rows) against model B's label (columns).
pub fn contingency(paired: &[Paired]) -> Vec<Vec<u64>> {
    let mut t = vec![vec![0u64; NUM_CLASSES]; NUM_CLASSES];
    for p in paired {
        t[p.a.index()][p.b.index()] += 1;
    }
    t
}

pub fn stuart_maxwell(paired: &[Paired]) -> Result<StuartMaxwell> {
    stuart_maxwell_table(&contingency(paired))
}

pub fn stuart_maxwell_table(table: &[Vec<u64>]) -> Result<StuartMaxwell> {
    let c = table.len();
    if table.iter().any(|r| r.len() != c) {
        return Err(Error::InvalidArgument {
            op: "stuart_maxwell",
            msg: "contingency table must be square".into(),
        });
    }
    let row = |i: usize| table[i].iter().sum::<u64>() as f64;
    let col = |j: usize| table.iter().map(|r| r[j]).sum::<u64>() as f64;
    let categories: Vec<usize> = (0..c).filter(|&k| row(k) + col(k) > 0.0).collect();
    let null = |categories| StuartMaxwell {
        statistic: 0.0,
        df: 0,
        p_value: 1.0,
        categories,
        rank_reduced: false,
    };
    if categories.len() < 2 {
        return Ok(null(categories));
    }
    let k = categories.len() - 1;
    let cell = |i: usize, j: usize| table[categories[i]][categories[j]] as f64;
    let d = DMatrix::from_fn(k, 1, |i, _| row(categories[i]) - col(categories[i]));
    let s = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            row(categories[i]) + col(categories[i]) - 2.0 * cell(i, i)
        } else {
            -(cell(i, j) + cell(j, i))
        }
    });
    let svd = s.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    if max_sv == 0.0 {
        return Ok(null(categories));
    }
    let eps = max_sv * 1e-10 * k as f64;
    let rank = svd.rank(eps);
    let pinv = svd.pseudo_inverse(eps).map_err(|m| Error::InvalidArgument {
        op: "stuart_maxwell",
        msg: m.to_string(),
    })?;
    let statistic = (d.transpose() * pinv * &d)[(0, 0)].max(0.0);
    Ok(StuartMaxwell {
        statistic,
        df: rank,
        p_value: chi_square_sf(statistic, rank as u32)?,
        categories,
        rank_reduced: rank < k,
    })
}
