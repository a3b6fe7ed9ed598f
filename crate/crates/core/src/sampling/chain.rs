use rand::seq::SliceRandom;
use rand::Rng;

use super::{sigmoid, EnergyModel, SamplingError};
use crate::rng::WorkbenchRng;

/// Recompute the energy from scratch after this many site updates.
const ENERGY_CHECK_INTERVAL: u64 = 1000;
const ENERGY_TOLERANCE: f64 = 1e-9;

/// One Markov chain over the free nodes of a model.
pub(super) struct Chain<'a> {
    model: &'a EnergyModel,
    state: Vec<f64>,
    free: Vec<usize>,
    order: Vec<usize>,
    energy: f64,
    updates: u64,
}

impl<'a> Chain<'a> {
    /// Draws the site order, then initializes each free node independently
    /// from `sigmoid(beta * field)` where the field only sees clamped nodes.
    pub fn start(model: &'a EnergyModel, free: &[usize], mut state: Vec<f64>, beta: f64, rng: &mut WorkbenchRng) -> Self {
        let mut order = free.to_vec();
        order.shuffle(rng);
        for &i in free {
            state[i] = 0.0;
        }
        let init: Vec<f64> = free
            .iter()
            .map(|&i| {
                let p = sigmoid(beta * model.local_field(i, &state));
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        for (&i, v) in free.iter().zip(init) {
            state[i] = v;
        }
        let energy = model.energy(&state);
        Self {
            model,
            state,
            free: free.to_vec(),
            order,
            energy,
            updates: 0,
        }
    }

    pub fn sweep(&mut self, beta: f64, rng: &mut WorkbenchRng) -> Result<(), SamplingError> {
        for k in 0..self.order.len() {
            let i = self.order[k];
            let field = self.model.local_field(i, &self.state);
            let next = if rng.random::<f64>() < sigmoid(beta * field) {
                1.0
            } else {
                0.0
            };
            let prev = self.state[i];
            if next != prev {
                self.state[i] = next;
                self.energy -= (next - prev) * field;
            }
            self.updates += 1;
            if self.updates.is_multiple_of(ENERGY_CHECK_INTERVAL) {
                self.check_energy()?;
            }
        }
        Ok(())
    }

    fn check_energy(&mut self) -> Result<(), SamplingError> {
        let recomputed = self.model.energy(&self.state);
        if (recomputed - self.energy).abs() > ENERGY_TOLERANCE * recomputed.abs().max(1.0) {
            return Err(SamplingError::EnergyDrift {
                incremental: self.energy,
                recomputed,
            });
        }
        self.energy = recomputed;
        Ok(())
    }

    pub fn free_state(&self) -> Vec<u8> {
        self.free.iter().map(|&i| self.state[i] as u8).collect()
    }

    #[cfg(test)]
    pub fn energy(&self) -> f64 {
        self.energy
    }
}
