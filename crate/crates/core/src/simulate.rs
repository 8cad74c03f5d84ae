//! Illness-death data generators for calibration and power studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Covariate, CovariateTable, CovariateValues, ValidatedIdmData};
use crate::error::Result;

/// Sojourn distribution in the intermediate state before death.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IllnessSojourn {
    /// Constant hazard; the process is Markov.
    Exponential { rate: f64 },
    /// Weibull in the time since illness onset; semi-Markov.
    Weibull { shape: f64, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmScenario {
    /// Hazard of healthy -> ill.
    pub rate12: f64,
    /// Hazard of healthy -> dead.
    pub rate13: f64,
    pub sojourn: IllnessSojourn,
    /// Censoring is uniform on `[0, censor_max]`.
    pub censor_max: f64,
}

impl IdmScenario {
    /// Markov scenario on a day scale.
    pub fn markov() -> IdmScenario {
        IdmScenario {
            rate12: 1.0 / 1000.0,
            rate13: 1.0 / 2500.0,
            sojourn: IllnessSojourn::Exponential { rate: 1.0 / 900.0 },
            censor_max: 4000.0,
        }
    }

    /// Semi-Markov scenario: death hazard rises steeply with time since illness.
    pub fn semi_markov() -> IdmScenario {
        IdmScenario {
            sojourn: IllnessSojourn::Weibull {
                shape: 3.0,
                scale: 900.0,
            },
            ..IdmScenario::markov()
        }
    }
}

fn exponential(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// `n` subjects from the scenario, with an independent standard-normal
/// covariate `x` that does not affect any hazard.
pub fn simulate_idm(scenario: &IdmScenario, n: usize, seed: u64) -> Result<ValidatedIdmData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut time1, mut event1, mut stime, mut event, mut x) =
        (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let total = scenario.rate12 + scenario.rate13;
        let t1 = exponential(&mut rng, total);
        let ill = rng.random::<f64>() < scenario.rate12 / total;
        let sojourn = match scenario.sojourn {
            IllnessSojourn::Exponential { rate } => exponential(&mut rng, rate),
            IllnessSojourn::Weibull { shape, scale } => {
                scale * exponential(&mut rng, 1.0).powf(1.0 / shape)
            }
        };
        let c = rng.random::<f64>() * scenario.censor_max;
        let z: f64 = {
            let (u1, u2): (f64, f64) = (rng.random(), rng.random());
            (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        x.push(Some(z));
        if c < t1 {
            time1.push(c);
            event1.push(false);
            stime.push(c);
            event.push(false);
        } else if ill {
            let death = t1 + sojourn;
            time1.push(t1);
            event1.push(true);
            stime.push(death.min(c));
            event.push(death <= c);
        } else {
            time1.push(t1);
            event1.push(false);
            stime.push(t1);
            event.push(true);
        }
    }
    let cov = Covariate {
        name: "x".into(),
        values: CovariateValues::Numeric(x),
    };
    ValidatedIdmData::from_vectors(
        time1,
        event1,
        stime,
        event,
        CovariateTable::new(vec![cov], n),
    )
}
