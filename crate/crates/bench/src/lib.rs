//! Shared fixtures for the criterion benches: the desk benchmark with
//! freshly initialized parameters.

use hire_core::eval::eval_tasks;
use hire_core::kg::{generate_synthetic, Dataset, SyntheticSpec};
use hire_core::task::{FewShotTask, TaskSampler};
use hire_core::trainer::{initial_params, TrainConfig};
use hire_core::ParamStore;

pub struct Fixture {
    pub data: Dataset,
    pub params: ParamStore,
    pub cfg: TrainConfig,
}

impl Fixture {
    pub fn desk(dim: usize) -> Self {
        let data = generate_synthetic(&SyntheticSpec::desk(7)).expect("desk spec is feasible");
        let cfg = TrainConfig {
            dim,
            seed: 7,
            ..TrainConfig::default()
        };
        let params = initial_params(&data, &cfg, None).expect("fresh parameters");
        Self { data, params, cfg }
    }

    pub fn sampler(&self) -> TaskSampler<'_> {
        TaskSampler::new(&self.data)
    }

    /// A training task of the first train relation.
    pub fn train_task(&self, seed: u64) -> FewShotTask {
        self.sampler()
            .build_task(
                self.data.train[0],
                self.cfg.k,
                self.cfg.m,
                self.cfg.candidate_size,
                seed,
            )
            .expect("train relation is large enough")
    }

    pub fn test_tasks(&self) -> Vec<FewShotTask> {
        eval_tasks(
            &self.sampler(),
            &self.data.test,
            self.cfg.k,
            self.cfg.candidate_size,
            self.cfg.seed,
        )
        .expect("test tasks")
    }
}
