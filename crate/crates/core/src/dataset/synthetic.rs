//! Schema-compatible synthetic corrosion data.
//!
//! Each alloy has a base metal (Al, Mg, Cu, Zn, Fe or Ni) holding the balance
//! and two to five alloying additions. The noiseless rate is log-linear:
//!
//! ```text
//! ln rate = ENV_EFFECT[env] + Σ_e COEF[e] · at%_e / 100
//!           + 0.02 · (T − 25) − 0.15 · ln(d / 365)
//! ```
//!
//! with `T = 25 °C` and `d = 365 days` standing in when the sample has no
//! temperature or duration. Observed rates are the noiseless rate times
//! `exp(noise · z)`, `z ~ N(0, 1)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::elements::{Element, N_ELEMENTS};

use super::{Basis, Composition, CorrosionSample, Dataset, DatasetError, Environments};

/// Additive effect of each environment (by id) on the log rate.
pub const ENV_EFFECT: [f64; 9] = [-0.5, -1.5, -1.0, 0.0, 0.5, 0.8, 1.2, 0.3, -0.8];

/// Per-element log-rate coefficient, applied to the atomic fraction.
fn coefficient(e: Element) -> f64 {
    match e.symbol() {
        "Al" => 0.5,
        "Mg" => 3.5,
        "Si" => 1.0,
        "Zn" => 2.0,
        "Ti" => -2.0,
        "Ni" => -1.0,
        "Cu" => 1.0,
        "Fe" => 2.5,
        "Mn" => 0.5,
        "Cr" => -3.0,
        "Mo" => -2.0,
        "Sn" => 1.5,
        "Pb" => 1.5,
        "C" => 1.0,
        _ => 0.0,
    }
}

const REFERENCE_TEMPERATURE: f64 = 25.0;
const REFERENCE_DURATION: f64 = 365.0;

/// Base metal, its probability weight, and alloying candidates with maximum at%.
const FAMILIES: [(&str, f64, &[(&str, f64)]); 6] = [
    ("Al", 0.35, &[("Mg", 6.0), ("Si", 7.0), ("Zn", 6.0), ("Cu", 3.0), ("Mn", 1.5), ("Fe", 0.8), ("Ti", 0.3), ("Cr", 0.3), ("Li", 3.0)]),
    ("Mg", 0.15, &[("Al", 9.0), ("Zn", 3.0), ("Mn", 0.8), ("Si", 0.5), ("Ca", 0.3), ("Zr", 0.6)]),
    ("Cu", 0.2, &[("Zn", 35.0), ("Ni", 30.0), ("Sn", 8.0), ("Al", 10.0), ("Fe", 1.5), ("Pb", 0.09), ("Mn", 1.0)]),
    ("Zn", 0.1, &[("Al", 5.0), ("Cu", 3.0), ("Mg", 0.1), ("Pb", 0.05), ("Cd", 0.001)]),
    ("Fe", 0.1, &[("Cr", 25.0), ("Ni", 20.0), ("Mo", 5.0), ("Mn", 1.5), ("C", 1.0), ("Si", 1.0), ("S", 0.08), ("P", 0.08)]),
    ("Ni", 0.1, &[("Cr", 30.0), ("Cu", 30.0), ("Mo", 10.0), ("Fe", 8.0), ("Co", 2.5), ("Nb", 2.4), ("Ti", 1.0)]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Relative (log-scale) noise standard deviation.
    pub noise: f64,
    pub temperature_fraction: f64,
    pub duration_fraction: f64,
    /// Fraction with both temperature and duration; must not exceed either.
    pub both_fraction: f64,
    pub environments: Environments,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            noise: 0.1,
            temperature_fraction: 164.0 / 331.0,
            duration_fraction: 187.0 / 331.0,
            both_fraction: 115.0 / 331.0,
            environments: Environments::default(),
        }
    }
}

/// The noiseless log rate for a composition (atomic percent), environment id
/// and optional temperature (°C) / duration (days).
pub fn reference_log_rate(
    composition: &Composition,
    environment: u8,
    temperature: Option<f64>,
    duration: Option<f64>,
) -> f64 {
    let chem: f64 = composition
        .nonzero()
        .map(|(e, p)| coefficient(e) * p / 100.0)
        .sum();
    let t = temperature.unwrap_or(REFERENCE_TEMPERATURE);
    let d = duration.unwrap_or(REFERENCE_DURATION);
    ENV_EFFECT[environment as usize] + chem + 0.02 * (t - REFERENCE_TEMPERATURE)
        - 0.15 * (d / REFERENCE_DURATION).ln()
}

/// [`generate_synthetic_with`] using the default fractions.
pub fn generate_synthetic(n: usize, seed: u64, noise: f64) -> Result<Dataset, DatasetError> {
    generate_synthetic_with(
        n,
        seed,
        &SyntheticConfig {
            noise,
            ..SyntheticConfig::default()
        },
    )
}

pub fn generate_synthetic_with(
    n: usize,
    seed: u64,
    cfg: &SyntheticConfig,
) -> Result<Dataset, DatasetError> {
    if n == 0 {
        return Err(DatasetError::EmptyRequest);
    }
    let fractions_ok = [cfg.temperature_fraction, cfg.duration_fraction, cfg.both_fraction]
        .iter()
        .all(|f| (0.0..=1.0).contains(f))
        && cfg.both_fraction <= cfg.temperature_fraction.min(cfg.duration_fraction)
        && cfg.temperature_fraction + cfg.duration_fraction - cfg.both_fraction <= 1.0
        && cfg.noise >= 0.0
        && cfg.noise.is_finite();
    if !fractions_ok {
        return Err(DatasetError::InvalidSample {
            id: "<synthetic>".into(),
            reason: "inconsistent presence fractions or noise".into(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = |f: f64| (f * n as f64).round() as usize;
    let n_both = count(cfg.both_fraction);
    let n_temp = count(cfg.temperature_fraction).max(n_both);
    let n_dur = count(cfg.duration_fraction).max(n_both);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut has_temp = vec![false; n];
    let mut has_dur = vec![false; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_both {
            has_temp[i] = true;
            has_dur[i] = true;
        } else if rank < n_temp {
            has_temp[i] = true;
        } else if rank < n_temp + (n_dur - n_both) {
            has_dur[i] = true;
        }
    }

    let total_weight: f64 = FAMILIES.iter().map(|f| f.1).sum();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut pick = rng.random::<f64>() * total_weight;
        let family = FAMILIES
            .iter()
            .find(|f| {
                pick -= f.1;
                pick <= 0.0
            })
            .unwrap_or(&FAMILIES[FAMILIES.len() - 1]);
        let (base, _, additions) = *family;

        let mut percent = [0.0; N_ELEMENTS];
        let mut candidates: Vec<&(&str, f64)> = additions.iter().collect();
        candidates.shuffle(&mut rng);
        let k = rng.random_range(2..=5.min(candidates.len()));
        for (symbol, max) in candidates.into_iter().take(k) {
            let e: Element = symbol.parse().expect("family symbols are valid");
            percent[e.index()] = rng.random::<f64>() * max;
        }
        let alloyed: f64 = percent.iter().sum();
        let base: Element = base.parse().expect("family symbols are valid");
        percent[base.index()] = 100.0 - alloyed;
        let composition = Composition::new(Basis::Atomic, percent)?;

        let environment = rng.random_range(0..9u8);
        let temperature = has_temp[i].then(|| 5.0 + 55.0 * rng.random::<f64>());
        let duration = has_dur[i].then(|| (7f64.ln() + rng.random::<f64>() * (1000f64 / 7.0).ln()).exp());
        let z: f64 = rng.sample(StandardNormal);
        let log_rate = reference_log_rate(&composition, environment, temperature, duration);
        let rate = if cfg.noise == 0.0 {
            log_rate.exp()
        } else {
            (log_rate + cfg.noise * z).exp()
        };
        samples.push(CorrosionSample {
            id: format!("syn-{i:04}"),
            composition,
            environment,
            temperature,
            duration,
            rate,
        });
    }
    Dataset::new(cfg.environments.clone(), samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::summarize;

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(50, 7, 0.1).unwrap();
        let b = generate_synthetic(50, 7, 0.1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(50, 8, 0.1).unwrap());
    }

    #[test]
    fn zero_noise_gives_reference_rates() {
        let d = generate_synthetic(40, 3, 0.0).unwrap();
        for s in d.samples() {
            let expected =
                reference_log_rate(&s.composition, s.environment, s.temperature, s.duration).exp();
            assert_eq!(s.rate, expected);
        }
    }

    #[test]
    fn default_fractions_match_presence_counts() {
        let d = generate_synthetic(331, 11, 0.1).unwrap();
        let s = summarize(&d);
        assert_eq!(s.with_temperature, 164);
        assert_eq!(s.with_duration, 187);
        assert_eq!(s.with_both, 115);
    }

    #[test]
    fn compositions_sum_to_100_and_envs_cover_all() {
        let d = generate_synthetic(400, 5, 0.2).unwrap();
        let mut seen = [0usize; 9];
        for s in d.samples() {
            assert!((s.composition.total() - 100.0).abs() < 1e-9);
            seen[s.environment as usize] += 1;
            assert!(s.rate > 0.0);
        }
        assert!(seen.iter().all(|&c| c > 20), "{seen:?}");
    }

    #[test]
    fn zero_samples_rejected() {
        assert_eq!(generate_synthetic(0, 1, 0.1), Err(DatasetError::EmptyRequest));
    }
}
