use super::{LabeledWindow, LossConfig, WindowObjective};
use crate::cell::{CellConfig, IamModel};
use crate::error::Result;
use crate::numerics::{grad_check, GradCheckConfig, GradCheckReport, Rng};

/// A random 64-bit instance for checking the training gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckSetup {
    pub hidden: usize,
    pub classes: usize,
    pub memory: usize,
    pub features: usize,
    pub steps: usize,
    pub heads: usize,
    pub seed: u64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self {
            hidden: 16,
            classes: 5,
            memory: 4,
            features: 8,
            steps: 6,
            heads: 2,
            seed: 0,
        }
    }
}

impl GradCheckSetup {
    pub fn cell(&self) -> CellConfig {
        CellConfig::small(self.hidden, self.classes, self.features, self.memory, self.heads)
    }

    /// Standard-normal frames with a random label at every step.
    pub fn window(&self) -> LabeledWindow {
        let mut rng = Rng::derive(self.seed, &[1]);
        LabeledWindow {
            features: (0..self.steps)
                .map(|_| (0..self.features).map(|_| rng.normal() as f32).collect())
                .collect(),
            labels: (0..self.steps).map(|_| Some(rng.below(self.classes))).collect(),
        }
    }
}

/// Central differences against the analytic gradient of the mean
/// cross-entropy over every parameter element.
pub fn check_training_gradient(setup: &GradCheckSetup, check: &GradCheckConfig) -> Result<GradCheckReport> {
    let cell = setup.cell();
    cell.validate()?;
    let model = IamModel::<f64>::new(cell, &mut Rng::derive(setup.seed, &[0]))?;
    let objective = WindowObjective::new(model, setup.window(), LossConfig::plain(), setup.seed)?;
    let mut params = objective.params().clone();
    grad_check(&objective, &mut params, check)
}
