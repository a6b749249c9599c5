//! Finite-difference verification of the analytic gradient.

use cascade_core::dataset::EncodedExample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::forward::{Batch, Noise};
use crate::graph::Graph;
use crate::model::Cascade;
use crate::train::batch_loss_and_grads;

/// Below this magnitude both gradients count as zero for the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates: usize,
    /// Parameter tensors with at least one sampled coordinate.
    pub groups_covered: usize,
    pub worst: String,
}

fn global_loss(model: &Cascade, batch: &Batch) -> f64 {
    let mut g = Graph::new(&model.params);
    let parts = crate::train::batch_losses(model, &mut g, batch, &mut Noise::off());
    parts
        .iter()
        .fold(0.0, |acc, (_, v, _)| acc + g.value(*v).item())
}

/// Compares the analytic gradient of the teacher-forced global loss with
/// central differences `(L(θ+ε) - L(θ-ε)) / 2ε`.
///
/// Every parameter tensor gets at least one coordinate; the rest of the
/// `samples` budget is drawn uniformly over all coordinates.
pub fn check_gradients(
    model: &mut Cascade,
    examples: &[EncodedExample],
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> GradCheckReport {
    let refs: Vec<&EncodedExample> = examples.iter().collect();
    let batch = Batch::new(&refs);
    let (_, grads) = batch_loss_and_grads(model, &batch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let ids: Vec<_> = model.params.ids().collect();
    let sizes: Vec<usize> = ids
        .iter()
        .map(|id| model.params.tensor(*id).len())
        .collect();
    let total: usize = sizes.iter().sum();
    let mut coords: Vec<(usize, usize)> = (0..ids.len())
        .map(|i| (i, rng.random_range(0..sizes[i])))
        .collect();
    while coords.len() < samples {
        let mut k = rng.random_range(0..total);
        let mut i = 0;
        while k >= sizes[i] {
            k -= sizes[i];
            i += 1;
        }
        coords.push((i, k));
    }

    let mut worst = (0.0, String::new());
    for &(i, k) in &coords {
        let id = ids[i];
        let analytic = grads.0[i].as_ref().map_or(0.0, |g| g.data()[k]);
        let orig = model.params.tensor(id).data()[k];
        model.params.tensor_mut(id).data_mut()[k] = orig + epsilon;
        let up = global_loss(model, &batch);
        model.params.tensor_mut(id).data_mut()[k] = orig - epsilon;
        let down = global_loss(model, &batch);
        model.params.tensor_mut(id).data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let rel =
            (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        if rel > worst.0 || worst.1.is_empty() {
            worst = (
                rel,
                format!(
                    "{}[{k}]: analytic {analytic:e}, numeric {numeric:e}",
                    model.params.name(id)
                ),
            );
        }
    }
    GradCheckReport {
        max_relative_error: worst.0,
        coordinates: coords.len(),
        groups_covered: ids.len(),
        worst: worst.1,
    }
}
