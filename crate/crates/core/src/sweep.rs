//! Random search without replacement over a finite hyper-parameter grid.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Record;
use crate::error::{Error, Result};
use crate::model::{FusionKind, Model, ModelConfig, ALPHA_RES, BATCH_SIZES, HEAD_COUNTS, OUT_DIMS};
use crate::parallel::Parallelism;
use crate::train::train;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub batch_size: Vec<usize>,
    pub out_dim: Vec<usize>,
    pub heads: Vec<usize>,
    pub fusion: Vec<FusionKind>,
    pub alpha_res: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            batch_size: BATCH_SIZES.to_vec(),
            out_dim: OUT_DIMS.to_vec(),
            heads: HEAD_COUNTS.to_vec(),
            fusion: vec![FusionKind::Cat, FusionKind::Attn, FusionKind::Gate],
            alpha_res: ALPHA_RES.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Point {
    pub batch_size: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub fusion: FusionKind,
    pub alpha_res: f64,
}

impl SearchSpace {
    pub fn size(&self) -> usize {
        self.batch_size.len() * self.out_dim.len() * self.heads.len() * self.fusion.len() * self.alpha_res.len()
    }

    pub fn points(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.size());
        for &batch_size in &self.batch_size {
            for &out_dim in &self.out_dim {
                for &heads in &self.heads {
                    for &fusion in &self.fusion {
                        for &alpha_res in &self.alpha_res {
                            out.push(Point {
                                batch_size,
                                out_dim,
                                heads,
                                fusion,
                                alpha_res,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn contains(&self, cfg: &ModelConfig) -> bool {
        self.batch_size.contains(&cfg.optim.batch_size)
            && self.out_dim.contains(&cfg.gat.out_dim)
            && self.heads.contains(&cfg.gat.heads)
            && self.fusion.contains(&cfg.fusion)
            && self.alpha_res.contains(&cfg.alpha_res)
    }
}

impl Point {
    pub fn apply(&self, base: &ModelConfig, seed: u64) -> ModelConfig {
        let mut c = base.clone();
        c.optim.batch_size = self.batch_size;
        c.gat.out_dim = self.out_dim;
        c.gat.heads = self.heads;
        c.fusion = self.fusion;
        c.alpha_res = self.alpha_res;
        c.seed = seed;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trial {
    pub trial: usize,
    pub config: ModelConfig,
    pub dev_macro_f1: f64,
    pub best_epoch: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d1_049b_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `base`.
pub fn trial_seed(base: u64, index: usize) -> u64 {
    splitmix64(splitmix64(base) ^ index as u64)
}

pub struct SweepOptions {
    pub budget: usize,
    pub seed: u64,
    /// Trials trained concurrently; 1 trains them one after another with
    /// data-parallel batches.
    pub jobs: usize,
}

/// Trains `budget` distinct grid points and ranks them by dev macro-F1.
pub fn sweep(base: &ModelConfig, space: &SearchSpace, records: &[Record], opts: &SweepOptions) -> Result<Vec<Trial>> {
    if opts.budget < 1 {
        return Err(Error::config("budget", "must be at least 1"));
    }
    let mut points = space.points();
    if points.is_empty() {
        return Err(Error::config("space", "search space is empty"));
    }
    if opts.budget > points.len() {
        log::warn!("budget {} exceeds the {} grid points; using all", opts.budget, points.len());
    }
    points.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    points.truncate(opts.budget);
    let configs: Vec<(usize, ModelConfig)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.apply(base, trial_seed(opts.seed, i))))
        .collect();

    let run = |(i, cfg): &(usize, ModelConfig), inner: Parallelism| -> Result<Trial> {
        log::info!("trial {i}: {}", serde_json::to_string(&cfg)?);
        let model = Model::new(cfg.clone())?;
        let out = train(&model, records, inner)?;
        Ok(Trial {
            trial: *i,
            config: cfg.clone(),
            dev_macro_f1: out.best_dev_macro_f1,
            best_epoch: out.best_epoch,
        })
    };
    let results: Vec<Result<Trial>> = if opts.jobs > 1 {
        run_pool(opts.jobs, &configs, |c| run(c, Parallelism::Sequential))?
    } else {
        configs.iter().map(|c| run(c, Parallelism::Parallel)).collect()
    };
    let mut trials = results.into_iter().collect::<Result<Vec<_>>>()?;
    trials.sort_by(|a, b| b.dev_macro_f1.total_cmp(&a.dev_macro_f1).then(a.trial.cmp(&b.trial)));
    Ok(trials)
}

#[cfg(feature = "parallel")]
fn run_pool<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument {
            op: "sweep",
            msg: e.to_string(),
        })?;
    Ok(pool.install(|| Parallelism::Parallel.map(items, f)))
}

#[cfg(not(feature = "parallel"))]
fn run_pool<T: Sync, R: Send>(_jobs: usize, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>> {
    Ok(items.iter().map(f).collect())
}

/// CSV `trial,config_json,dev_macro_f1,best_epoch`, in ranked order.
pub fn write_trials<W: Write>(w: W, trials: &[Trial]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["trial", "config_json", "dev_macro_f1", "best_epoch"])?;
    for t in trials {
        out.write_record([
            t.trial.to_string(),
            serde_json::to_string(&t.config)?,
            t.dev_macro_f1.to_string(),
            t.best_epoch.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<sweep>", e))
}
