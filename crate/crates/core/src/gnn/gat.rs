//! Multi-head GATv2 with polarity edge attributes, computed densely over all
//! node pairs and masked to each neighbourhood.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, Tape, Var};
use crate::encoder::glorot;
use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

use super::graph::{GraphSkeleton, Topology};

pub const EDGE_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatConfig {
    /// Per-head output width.
    #[serde(default = "default_out_dim")]
    pub out_dim: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default)]
    pub role_embeddings: bool,
    #[serde(default)]
    pub topology: Topology,
}

fn default_out_dim() -> usize {
    96
}
fn default_heads() -> usize {
    4
}
fn default_depth() -> usize {
    1
}
fn default_slope() -> f64 {
    0.2
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            out_dim: default_out_dim(),
            heads: default_heads(),
            depth: default_depth(),
            leaky_slope: default_slope(),
            role_embeddings: false,
            topology: Topology::default(),
        }
    }
}

impl GatConfig {
    pub fn output_width(&self) -> usize {
        self.heads * self.out_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dim == 0 {
            return Err(Error::config("gat.out_dim", "must be positive"));
        }
        if self.heads == 0 {
            return Err(Error::config("gat.heads", "must be positive"));
        }
        if self.depth == 0 {
            return Err(Error::config("gat.depth", "must be at least 1"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::config("gat.leaky_slope", "must lie in (0, 1)"));
        }
        self.topology.validate()
    }

    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, d_in: usize, rng: &mut R) {
        let o = self.out_dim;
        for l in 0..self.depth {
            let fan_in = if l == 0 { d_in } else { self.output_width() };
            for k in 0..self.heads {
                let p = param_prefix(l, k);
                store.insert(format!("{p}.theta_s"), glorot(fan_in, o, rng));
                store.insert(format!("{p}.theta_t"), glorot(fan_in, o, rng));
                store.insert(format!("{p}.theta_e"), glorot(EDGE_DIM, o, rng));
                store.insert(format!("{p}.att"), glorot(o, 1, rng));
            }
        }
        if self.role_embeddings {
            store.insert(ROLE_EMBED, Tensor::uniform(&[5, d_in], 1.0, rng));
        }
    }
}

pub const ROLE_EMBED: &str = "gat.role_embed";

pub fn param_prefix(layer: usize, head: usize) -> String {
    format!("gat.l{layer}.h{head}")
}

/// Edge attributes for every ordered pair `(i, j)`, row `i*n + j`:
/// the polarity one-hot when `j -> i` is an edge, zero otherwise.
pub fn pair_edge_attrs(g: &GraphSkeleton) -> Tensor {
    let n = g.len();
    let attr = g.edge_attr();
    let mut data = vec![0.0; n * n * EDGE_DIM];
    for &(src, dst) in &g.edges {
        let row = dst * n + src;
        data[row * EDGE_DIM..(row + 1) * EDGE_DIM].copy_from_slice(&attr);
    }
    Tensor::new(vec![n * n, EDGE_DIM], data).expect("shape")
}

pub struct GatOutput<'t> {
    /// `[|V| x K*d_out]`
    pub nodes: Var<'t>,
    /// Per head, the `[|V| x |V|]` coefficients; row `i` holds `alpha_ij`.
    pub attention: Vec<Tensor>,
}

/// One GATv2 layer over `x[|V| x d_in]`.
pub fn gat_layer<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    cfg: &GatConfig,
    layer: usize,
    g: &GraphSkeleton,
    x: Var<'t>,
) -> Result<GatOutput<'t>> {
    let n = g.len();
    if x.rows() != n {
        return Err(Error::dim("gat_layer", &x.shape(), &[n]));
    }
    let mask: Rc<[bool]> = g.attention_mask().into();
    let edges = tape.constant(pair_edge_attrs(g));
    let src_rows: Vec<usize> = (0..n * n).map(|p| p / n).collect();
    let nbr_rows: Vec<usize> = (0..n * n).map(|p| p % n).collect();
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut attention = Vec::with_capacity(cfg.heads);
    for k in 0..cfg.heads {
        let p = param_prefix(layer, k);
        let w = |name: &str| tape.param(store, &format!("{p}.{name}"));
        let s = x.matmul(w("theta_s")?)?;
        let t = x.matmul(w("theta_t")?)?;
        let pre = s
            .gather_rows(&src_rows)?
            .add(t.gather_rows(&nbr_rows)?)?
            .add(edges.matmul(w("theta_e")?)?)?;
        let scores = pre.leaky_relu(cfg.leaky_slope)?.matmul(w("att")?)?.reshape(&[n, n])?;
        let alpha = scores.masked_softmax(mask.clone())?;
        attention.push(alpha.value());
        heads.push(alpha.matmul(t)?);
    }
    Ok(GatOutput {
        nodes: concat_cols(&heads)?,
        attention,
    })
}

/// Adds the learned role vectors when enabled.
pub fn with_roles<'t>(tape: &'t Tape, store: &ParamStore, cfg: &GatConfig, g: &GraphSkeleton, x: Var<'t>) -> Result<Var<'t>> {
    if !cfg.role_embeddings {
        return Ok(x);
    }
    let idx: Vec<usize> = g.nodes.iter().map(|n| n.role.index()).collect();
    x.add(tape.param(store, ROLE_EMBED)?.gather_rows(&idx)?)
}

/// All configured layers, LeakyReLU between them.
pub fn gat_forward<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    cfg: &GatConfig,
    g: &GraphSkeleton,
    x: Var<'t>,
) -> Result<GatOutput<'t>> {
    let mut out = gat_layer(tape, store, cfg, 0, g, x)?;
    for l in 1..cfg.depth {
        let h = out.nodes.leaky_relu(cfg.leaky_slope)?;
        out = gat_layer(tape, store, cfg, l, g, h)?;
    }
    Ok(out)
}
