//! Fixtures shared by the benchmarks.

use manifold_explore::envsim::generate_demos;
use manifold_explore::policy::TrainingSet;
use manifold_explore::{EnvConfig, Model, PolicyConfig, VibConfig};

/// An untrained model at the default network sizes, with its training set.
pub fn default_model(demos: usize) -> (Model, TrainingSet) {
    let env = EnvConfig::planar_reach();
    let records = generate_demos(&env, demos, 0).expect("demos");
    let (mut model, data) = Model::fresh(env, PolicyConfig::default(), Some(VibConfig::default()), &records, 0).expect("model");
    model.refresh_embedding_std(&data).expect("embedding std");
    (model, data)
}
