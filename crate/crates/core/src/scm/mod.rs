//! Structural causal models over a [`Dag`]: mechanism families, sampling with
//! per-node standardization, target selection and task assembly.

mod bundle;
mod task;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Dag, GraphError};
use crate::seed;

pub use bundle::{bundle_checksum, read_bundle, write_bundle, BundleError, BundleMeta};
pub use task::{generate_task, select_target, task_id, MbBand, TaskConfig, TaskInstance, TaskMeta, MAX_RETRIES};

/// Smallest absolute edge coefficient.
pub const COEFF_FLOOR: f64 = 0.3;

/// Outer exponent of the post-nonlinear squash `sign(u)|u|^0.7`.
pub const PNL_EXPONENT: f64 = 0.7;

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("unknown SCM family `{0}`")]
    UnknownFamily(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("spec does not match the graph: {0}")]
    SpecMismatch(String),
    #[error("column for node {node} has zero variance after one noise resample")]
    DegenerateColumn { node: usize },
    #[error("no target in MB-ratio band after {retries} attempts for {config:?}")]
    GenerationFailed { config: Box<TaskConfig>, retries: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, ScmError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LinearGaussian,
    LinearNongaussian,
    AdditiveGaussian,
    AdditiveNongaussian,
    PostNonlinear,
    Heteroskedastic,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::LinearGaussian,
        Family::LinearNongaussian,
        Family::AdditiveGaussian,
        Family::AdditiveNongaussian,
        Family::PostNonlinear,
        Family::Heteroskedastic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::LinearGaussian => "linear_gaussian",
            Family::LinearNongaussian => "linear_nongaussian",
            Family::AdditiveGaussian => "additive_gaussian",
            Family::AdditiveNongaussian => "additive_nongaussian",
            Family::PostNonlinear => "post_nonlinear",
            Family::Heteroskedastic => "heteroskedastic",
        }
    }

    fn is_linear(self) -> bool {
        matches!(self, Family::LinearGaussian | Family::LinearNongaussian)
    }

    fn has_nongaussian_noise(self) -> bool {
        matches!(self, Family::LinearNongaussian | Family::AdditiveNongaussian)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = ScmError;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| ScmError::UnknownFamily(s.to_string()))
    }
}

/// Per-parent transform used by the additive, post-nonlinear and
/// heteroskedastic families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Tanh,
    Sin,
    Square,
    LeakySoftplus,
}

impl Basis {
    const ALL: [Basis; 4] = [Basis::Tanh, Basis::Sin, Basis::Square, Basis::LeakySoftplus];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Basis::Tanh => x.tanh(),
            Basis::Sin => x.sin(),
            Basis::Square => x * x,
            Basis::LeakySoftplus => softplus(x) + 0.1 * x,
        }
    }
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn post_nonlinear(u: f64) -> f64 {
    u.signum() * u.abs().powf(PNL_EXPONENT)
}

/// Unit-variance noise law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    Gaussian,
    Uniform,
    Laplace,
}

impl NoiseLaw {
    pub fn draw(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            NoiseLaw::Gaussian => rng.sample(StandardNormal),
            NoiseLaw::Uniform => 3f64.sqrt() * (2.0 * rng.random::<f64>() - 1.0),
            NoiseLaw::Laplace => {
                // inverse CDF with scale 1/sqrt(2)
                let u: f64 = rng.random::<f64>() - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln() / 2f64.sqrt()
            }
        }
    }
}

/// Mechanism of one node. `weights`, `bases` and `scale_weights` align with the
/// node's sorted parent list; `bases` is empty for linear families and
/// `scale_weights` is empty outside the heteroskedastic family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMechanism {
    pub weights: Vec<f64>,
    pub bases: Vec<Basis>,
    pub scale_weights: Vec<f64>,
    pub noise: NoiseLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub family: Family,
    pub coeff_range: f64,
    pub noise_std: f64,
    pub nodes: Vec<NodeMechanism>,
}

impl ScmSpec {
    /// Coefficient of edge `parent -> child`, if present.
    pub fn coefficient(&self, dag: &Dag, parent: usize, child: usize) -> Option<f64> {
        let pos = dag.parents(child).binary_search(&parent).ok()?;
        self.nodes.get(child)?.weights.get(pos).copied()
    }
}

fn draw_coefficient(rng: &mut ChaCha8Rng, coeff_range: f64) -> f64 {
    // a range below the floor collapses to the single magnitude coeff_range
    let lo = COEFF_FLOOR.min(coeff_range);
    let magnitude = lo + (coeff_range - lo) * rng.random::<f64>();
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

/// Attaches mechanisms of `family` to every node of `dag`.
pub fn build_scm(dag: &Dag, family: Family, coeff_range: f64, noise_std: f64, seed: u64) -> Result<ScmSpec> {
    if !(coeff_range > 0.0 && coeff_range.is_finite()) {
        return Err(ScmError::InvalidParameter(format!("coeff_range must be > 0, got {coeff_range}")));
    }
    if !(noise_std > 0.0 && noise_std.is_finite()) {
        return Err(ScmError::InvalidParameter(format!("noise_std must be > 0, got {noise_std}")));
    }
    let mut rng = seed::rng(seed);
    let parity = seed & 1;
    let nodes = (0..dag.node_count())
        .map(|v| {
            let k = dag.parents(v).len();
            let weights = (0..k).map(|_| draw_coefficient(&mut rng, coeff_range)).collect();
            let bases = if family.is_linear() {
                Vec::new()
            } else {
                (0..k).map(|_| Basis::ALL[rng.random_range(0..Basis::ALL.len())]).collect()
            };
            let scale_weights = if family == Family::Heteroskedastic {
                (0..k).map(|_| draw_coefficient(&mut rng, coeff_range)).collect()
            } else {
                Vec::new()
            };
            let noise = if !family.has_nongaussian_noise() {
                NoiseLaw::Gaussian
            } else if (v as u64 + parity) % 2 == 0 {
                NoiseLaw::Uniform
            } else {
                NoiseLaw::Laplace
            };
            NodeMechanism { weights, bases, scale_weights, noise }
        })
        .collect();
    Ok(ScmSpec { family, coeff_range, noise_std, nodes })
}

fn check_spec(spec: &ScmSpec, dag: &Dag) -> Result<()> {
    if spec.nodes.len() != dag.node_count() {
        return Err(ScmError::SpecMismatch(format!(
            "{} mechanisms for {} nodes",
            spec.nodes.len(),
            dag.node_count()
        )));
    }
    for (v, m) in spec.nodes.iter().enumerate() {
        let k = dag.parents(v).len();
        let bases_ok = if spec.family.is_linear() { m.bases.is_empty() } else { m.bases.len() == k };
        let scale_ok = spec.family != Family::Heteroskedastic || m.scale_weights.len() == k;
        if m.weights.len() != k || !bases_ok || !scale_ok {
            return Err(ScmError::SpecMismatch(format!("node {v} has {k} parents")));
        }
    }
    Ok(())
}

/// Sample mean and standard deviation (n - 1 denominator).
pub fn mean_and_sd(col: ArrayView1<f64>) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let ss: f64 = col.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn assign(spec: &ScmSpec, dag: &Dag, v: usize, data: &Array2<f64>, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let n = data.nrows();
    let mech = &spec.nodes[v];
    let parents = dag.parents(v);
    let mut mean = Array1::<f64>::zeros(n);
    for (i, &p) in parents.iter().enumerate() {
        let col = data.column(p);
        let w = mech.weights[i];
        match mech.bases.get(i) {
            Some(&b) => mean.zip_mut_with(&col, |m, &x| *m += w * b.apply(x)),
            None => mean.scaled_add(w, &col),
        }
    }
    let noise: Array1<f64> = (0..n).map(|_| mech.noise.draw(rng)).collect();
    let sigma = spec.noise_std;
    match spec.family {
        Family::PostNonlinear => (mean + noise * sigma).mapv(post_nonlinear),
        Family::Heteroskedastic => {
            let mut drive = Array1::<f64>::zeros(n);
            for (i, &p) in parents.iter().enumerate() {
                drive.scaled_add(mech.scale_weights[i], &data.column(p));
            }
            let scale = drive.mapv(|d| sigma * (0.5 + softplus(d)));
            mean + noise * scale
        }
        _ => mean + noise * sigma,
    }
}

/// Draws `n` rows: nodes are assigned in topological order and each column is
/// standardized to zero sample mean and unit sample standard deviation before
/// its children read it.
pub fn sample(spec: &ScmSpec, dag: &Dag, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n < 2 {
        return Err(ScmError::InvalidParameter(format!("need at least 2 samples, got {n}")));
    }
    check_spec(spec, dag)?;
    let mut rng = seed::rng(seed);
    let mut data = Array2::<f64>::zeros((n, dag.node_count()));
    for &v in dag.topological_order() {
        let mut standardized = None;
        for _attempt in 0..2 {
            let col = assign(spec, dag, v, &data, &mut rng);
            let (mean, sd) = mean_and_sd(col.view());
            if sd.is_finite() && sd > 1e-12 * (1.0 + mean.abs()) {
                standardized = Some(col.mapv(|x| (x - mean) / sd));
                break;
            }
        }
        match standardized {
            Some(col) => data.column_mut(v).assign(&col),
            None => return Err(ScmError::DegenerateColumn { node: v }),
        }
    }
    Ok(data)
}
