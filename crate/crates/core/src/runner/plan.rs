use std::fmt;

use serde::{Deserialize, Serialize};

use super::{RunConfig, RunError};
use crate::datasets::DatasetId;
use crate::prompting::{Strategy, Task};

/// One generation cell: a (dataset, task, model) setting under one strategy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Setting {
    pub dataset: DatasetId,
    pub task: Task,
    /// Position of the model in the run config.
    pub model_index: usize,
    pub model_id: String,
    pub model_label: String,
    pub strategy: Strategy,
}

impl Setting {
    pub fn cell_id(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.dataset, self.task, self.model_id, self.strategy
        )
    }

    /// Sort key reproducing plan order from any permutation of cells.
    pub(crate) fn order_key(&self, datasets: &[DatasetId]) -> (usize, Task, usize, Strategy) {
        let d = datasets
            .iter()
            .position(|x| *x == self.dataset)
            .unwrap_or(usize::MAX);
        (d, self.task, self.model_index, self.strategy)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.cell_id())
    }
}

/// Cross product datasets × tasks × models × strategies, in that nesting
/// order, with the baseline cell before its relation-guided twin.
pub fn plan(config: &RunConfig) -> Result<Vec<Setting>, RunError> {
    if config.datasets.is_empty() {
        return Err(RunError::ConfigInvalid("config names no datasets".into()));
    }
    if config.models.is_empty() {
        return Err(RunError::ConfigInvalid("config names no models".into()));
    }
    let mut cells = Vec::new();
    for &dataset in &config.datasets {
        for task in Task::ALL {
            for (model_index, model) in config.models.iter().enumerate() {
                for strategy in Strategy::ALL {
                    cells.push(Setting {
                        dataset,
                        task,
                        model_index,
                        model_id: model.model_id.clone(),
                        model_label: model.label().to_string(),
                        strategy,
                    });
                }
            }
        }
    }
    Ok(cells)
}
