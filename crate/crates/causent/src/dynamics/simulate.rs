//! Euler-Maruyama simulation of coefficient models.
//!
//! ```text
//!     z^{j+1} = z^j + drift(z^j) dt + noise * sqrt(dt) * eps,   eps ~ N(0, I)
//! ```
//!
//! The integrator can run at a finer internal step than the recorded spacing
//! (`record_every`), which stiff lattice models need for stability, and can
//! discard an initial transient (`burn_in`) before the first recorded point.
//! Runs are bitwise deterministic for a given seed: noise is drawn from one
//! seeded ChaCha stream in fixed variable order.

use super::{CoefficientModel, ColumnRole, TrajectorySet};
use crate::error::{Error, Result};
use crate::util::grid_points;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Recorded time span; the output covers `[0, horizon)`.
    pub horizon: f64,
    /// Integration step.
    pub dt: f64,
    /// Integration steps per recorded point; recorded spacing is `dt * record_every`.
    pub record_every: usize,
    /// Time units integrated and discarded before the first recorded point.
    pub burn_in: f64,
    pub seed: u64,
    /// Initial state at the start of the burn-in, one value per layout variable.
    pub initial: Vec<f64>,
}

impl SimOptions {
    pub fn new(horizon: f64, dt: f64, seed: u64, initial: Vec<f64>) -> Self {
        SimOptions {
            horizon,
            dt,
            record_every: 1,
            burn_in: 0.0,
            seed,
            initial,
        }
    }
}

/// Simulates a model forward, recording `floor(horizon / (dt * record_every))`
/// points starting at the post-burn-in state.
///
/// A non-finite state aborts with the offending integration step index
/// (counted from the start of the burn-in): finite-time blow-up is a
/// diagnostic, not something to clamp away.
pub fn simulate(model: &CoefficientModel, opts: &SimOptions) -> Result<TrajectorySet> {
    let dim = model.layout().len();
    if opts.initial.len() != dim {
        return Err(Error::Structure(format!(
            "initial state has {} entries for a {}-variable model",
            opts.initial.len(),
            dim
        )));
    }
    if !(opts.dt.is_finite() && opts.dt > 0.0) || opts.record_every == 0 {
        return Err(Error::Config("simulation needs dt > 0 and record_every >= 1".into()));
    }
    if !(opts.burn_in >= 0.0 && opts.horizon.is_finite()) {
        return Err(Error::Config("simulation burn-in/horizon out of range".into()));
    }
    let record_dt = opts.dt * opts.record_every as f64;
    let points = grid_points(opts.horizon, record_dt);
    if points < 2 {
        return Err(Error::Config(format!(
            "horizon {} at recorded spacing {} yields fewer than two points",
            opts.horizon, record_dt
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let sqrt_dt = opts.dt.sqrt();
    let noise = model.noise();
    let mut state = opts.initial.clone();
    let mut drift = vec![0.0; dim];
    let mut global_step = 0usize;

    let advance = |state: &mut Vec<f64>, drift: &mut Vec<f64>, rng: &mut ChaCha12Rng, step: usize| -> Result<()> {
        model.drift_into(state, drift);
        for n in 0..dim {
            let eps: f64 = rng.sample(StandardNormal);
            state[n] += drift[n] * opts.dt + noise[n] * sqrt_dt * eps;
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                what: "simulated state became non-finite".into(),
                step,
            });
        }
        Ok(())
    };

    let burn_steps = (opts.burn_in / opts.dt + 0.5).floor() as usize;
    for _ in 0..burn_steps {
        advance(&mut state, &mut drift, &mut rng, global_step)?;
        global_step += 1;
    }

    let mut values = Vec::with_capacity(points * dim);
    values.extend_from_slice(&state);
    for _ in 1..points {
        for _ in 0..opts.record_every {
            advance(&mut state, &mut drift, &mut rng, global_step)?;
            global_step += 1;
        }
        values.extend_from_slice(&state);
    }

    TrajectorySet::new(
        model.layout().names().to_vec(),
        vec![ColumnRole::Simulated; dim],
        record_dt,
        values,
    )
}
