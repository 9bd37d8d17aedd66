use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blanket_core::discovery::Method;
use blanket_core::eval::PerturbationPlan;
use blanket_core::scm::{task_id, Family, MbBand, TaskConfig};
use blanket_core::seed::derive_seed;
use blanket_core::RegressorKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    #[serde(rename = "F")]
    pub f: usize,
    pub density: f64,
    pub family: Family,
    pub band: MbBand,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_coeff_range")]
    pub coeff_range: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    pub tasks_per_cell: usize,
}

fn default_n() -> usize {
    1000
}
fn default_coeff_range() -> f64 {
    1.0
}
fn default_noise_std() -> f64 {
    0.5
}

impl GridCell {
    pub fn new(f: usize, density: f64, family: Family, band: (f64, f64), tasks_per_cell: usize) -> Self {
        Self {
            f,
            density,
            family,
            band: MbBand::new(band.0, band.1).expect("valid band"),
            n: default_n(),
            coeff_range: default_coeff_range(),
            noise_std: default_noise_std(),
            tasks_per_cell,
        }
    }

    /// Stable key used to derive per-task seeds.
    pub fn key(&self) -> String {
        format!(
            "F{}/d{}/{}/b{}-{}/n{}/c{}/s{}",
            self.f,
            self.density,
            self.family,
            self.band.low(),
            self.band.high(),
            self.n,
            self.coeff_range,
            self.noise_std
        )
    }

    pub fn task_config(&self, master_seed: u64, index: usize) -> TaskConfig {
        TaskConfig {
            f: self.f,
            density: self.density,
            family: self.family,
            band: self.band,
            n: self.n,
            coeff_range: self.coeff_range,
            noise_std: self.noise_std,
            seed: derive_seed(master_seed, &self.key(), index as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub grid: Vec<GridCell>,
    pub regressors: Vec<RegressorKind>,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub budget_s: f64,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    /// Largest layered-blanket level evaluated.
    pub layered_max: usize,
    /// Largest proximity radius evaluated.
    pub proximity_max: usize,
    pub perturbation: PerturbationPlan,
    pub grid_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut grid = Vec::new();
        for family in [Family::LinearGaussian, Family::AdditiveGaussian] {
            grid.push(GridCell::new(40, 0.2, family, (0.10, 0.90), 30));
            grid.push(GridCell::new(100, 0.2, family, (0.10, 0.90), 30));
            grid.push(GridCell::new(200, 0.02, family, (0.05, 0.95), 30));
        }
        Self {
            grid,
            regressors: RegressorKind::ALL.to_vec(),
            methods: Method::ALL.to_vec(),
            alpha: 0.05,
            budget_s: 60.0,
            master_seed: 0,
            output_dir: PathBuf::from("runs/default"),
            parallelism: 1,
            layered_max: 3,
            proximity_max: 3,
            perturbation: PerturbationPlan::default(),
            grid_step: 0.02,
        }
    }
}

/// One task slot of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSlot {
    pub cell: usize,
    pub index: usize,
    pub config: TaskConfig,
    pub task_id: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            bail!("config grid is empty");
        }
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha {} not in (0, 1)", self.alpha);
        }
        if !(self.budget_s >= 0.0) {
            bail!("budget_s must be non-negative");
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 0.5) {
            bail!("grid_step {} not in (0, 0.5]", self.grid_step);
        }
        for (i, c) in self.grid.iter().enumerate() {
            if c.f == 0 || c.n < 2 || !(c.density >= 0.0 && c.density <= 1.0) || c.coeff_range <= 0.0 || c.noise_std <= 0.0 {
                bail!("grid cell {i} has invalid parameters: {c:?}");
            }
        }
        Ok(())
    }

    pub fn slots(&self) -> Vec<TaskSlot> {
        let mut out = Vec::new();
        for (ci, cell) in self.grid.iter().enumerate() {
            for index in 0..cell.tasks_per_cell {
                let config = cell.task_config(self.master_seed, index);
                out.push(TaskSlot { cell: ci, index, task_id: task_id(&config), config });
            }
        }
        out
    }
}
