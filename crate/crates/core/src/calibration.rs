//! Long-tail calibration: per-class adaptive focusing parameters derived
//! from category frequency, and post-hoc logit adjustment.
//!
//! Both operate on a [`FrequencyTable`] — how often each category occurs
//! among annotated triplets, normalized to (0, 1]. Rare classes get a
//! smaller focusing parameter (the loss concentrates harder on them) and a
//! score boost of `−τ·ln f` at inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Gamma;
use crate::numerics::Vector;

/// Per-category occurrence frequencies, each in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    freqs: Vec<f64>,
}

impl FrequencyTable {
    pub fn new(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::EmptyInput("frequency table".into()));
        }
        for (c, &f) in freqs.iter().enumerate() {
            if !f.is_finite() || f <= 0.0 || f > 1.0 {
                return Err(Error::InvalidFrequency(format!(
                    "frequency {f} for category {c} is outside (0, 1]"
                )));
            }
        }
        Ok(Self { freqs })
    }

    /// Normalizes raw occurrence counts. Every category must occur at
    /// least once; use [`FrequencyTable::from_counts_smoothed`] otherwise.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyInput("frequency counts".into()));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    /// Add-one (Laplace) smoothing, so categories never seen in the data
    /// still get a strictly positive frequency.
    pub fn from_counts_smoothed(counts: &[u64]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyInput("frequency counts".into()));
        }
        let total: u64 = counts.iter().sum::<u64>() + counts.len() as u64;
        Self::new(
            counts
                .iter()
                .map(|&c| (c + 1) as f64 / total as f64)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn get(&self, category: usize) -> Result<f64> {
        self.freqs
            .get(category)
            .copied()
            .ok_or(Error::LabelOutOfRange {
                label: category,
                num_classes: self.freqs.len(),
            })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.freqs
    }
}

/// The adaptive focusing parameter for a category of frequency `f`:
/// `min{2, 3 − (1−f)^μ · (−ln f)^{1/μ}}`.
///
/// Frequent categories saturate at the usual 2; rare ones fall below it so
/// their (hard) examples keep more gradient. For astronomically rare
/// categories the formula itself goes negative; see
/// [`adaptive_gamma_clamped`] for the guarded variant.
pub fn adaptive_gamma(f: f64, mu: f64) -> Result<f64> {
    if !f.is_finite() || f <= 0.0 || f > 1.0 {
        return Err(Error::InvalidFrequency(format!(
            "frequency {f} is outside (0, 1]"
        )));
    }
    if !mu.is_finite() || mu <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "focusing exponent must be positive, got {mu}"
        )));
    }
    Ok((3.0 - (1.0 - f).powf(mu) * (-f.ln()).powf(1.0 / mu)).min(2.0))
}

/// [`adaptive_gamma`] with an optional floor at zero. A negative focusing
/// parameter would invert the loss's easy/hard weighting, so the default
/// configuration keeps the floor on and logs when it engages.
pub fn adaptive_gamma_clamped(f: f64, mu: f64, clamp_at_zero: bool) -> Result<f64> {
    let g = adaptive_gamma(f, mu)?;
    if clamp_at_zero && g < 0.0 {
        log::warn!("focusing parameter {g:.4} for frequency {f:e} clamped to 0");
        return Ok(0.0);
    }
    Ok(g)
}

/// Builds a per-class [`Gamma`] for the focal loss from a frequency table.
pub fn gamma_table(freqs: &FrequencyTable, mu: f64, clamp_at_zero: bool) -> Result<Gamma> {
    let per_class = freqs
        .as_slice()
        .iter()
        .map(|&f| adaptive_gamma_clamped(f, mu, clamp_at_zero))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Gamma::PerClass(per_class))
}

/// Post-hoc logit adjustment: `z_c − τ·ln f_c`. Rare categories gain, at
/// the expense of frequent ones; τ = 0 leaves the logits untouched.
pub fn logit_adjust(logits: &[f64], freqs: &FrequencyTable, tau: f64) -> Result<Vector> {
    if logits.len() != freqs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits vs {} frequencies",
            logits.len(),
            freqs.len()
        )));
    }
    if !tau.is_finite() {
        return Err(Error::NonFinite("adjustment strength".into()));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logit".into()));
    }
    Ok(logits
        .iter()
        .zip(freqs.as_slice())
        .map(|(&z, &f)| z - tau * f.ln())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_rejects_out_of_range_frequencies() {
        assert!(FrequencyTable::new(vec![]).is_err());
        assert!(FrequencyTable::new(vec![0.0]).is_err());
        assert!(FrequencyTable::new(vec![-0.1]).is_err());
        assert!(FrequencyTable::new(vec![1.1]).is_err());
        assert!(FrequencyTable::new(vec![f64::NAN]).is_err());
        assert!(FrequencyTable::new(vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn counts_normalize_and_smooth() {
        let t = FrequencyTable::from_counts(&[3, 1]).unwrap();
        assert_eq!(t.as_slice(), &[0.75, 0.25]);
        assert!(FrequencyTable::from_counts(&[3, 0]).is_err());
        let s = FrequencyTable::from_counts_smoothed(&[0, 4]).unwrap();
        assert!((s.get(0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((s.get(1).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!(t.get(2).is_err());
    }

    #[test]
    fn gamma_saturates_for_frequent_categories() {
        // At f = 1 the log factor vanishes; at f = 0.5 the raw value is
        // 2.9429722308884982, past the cap either way.
        assert_eq!(adaptive_gamma(1.0, 4.0).unwrap(), 2.0);
        assert_eq!(adaptive_gamma(0.5, 4.0).unwrap(), 2.0);
    }

    #[test]
    fn gamma_for_rare_category_matches_high_precision_value() {
        let g = adaptive_gamma(0.01, 4.0).unwrap();
        assert!((g - 1.5928117520455688).abs() < 1e-12, "got {g}");
    }

    #[test]
    fn gamma_is_nondecreasing_in_frequency() {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..=1000 {
            let f = i as f64 / 1000.0;
            let g = adaptive_gamma(f, 4.0).unwrap();
            assert!(g >= prev - 1e-12, "decrease at f={f}: {g} < {prev}");
            assert!(g <= 2.0);
            prev = g;
        }
    }

    #[test]
    fn gamma_never_exceeds_two_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        for _ in 0..500 {
            let f = rng.gen_range(1e-12_f64..=1.0);
            let mu = rng.gen_range(0.2..8.0);
            assert!(adaptive_gamma(f, mu).unwrap() <= 2.0);
        }
    }

    #[test]
    fn clamp_floors_extremely_rare_categories_at_zero() {
        // (−ln f)^{1/4} > 3 needs f < e^{−81}.
        let f = 1e-40;
        let raw = adaptive_gamma(f, 4.0).unwrap();
        assert!(raw < 0.0, "raw value {raw} should be negative");
        assert_eq!(adaptive_gamma_clamped(f, 4.0, true).unwrap(), 0.0);
        assert_eq!(adaptive_gamma_clamped(f, 4.0, false).unwrap(), raw);
    }

    #[test]
    fn gamma_rejects_bad_domain() {
        assert!(adaptive_gamma(0.0, 4.0).is_err());
        assert!(adaptive_gamma(-0.5, 4.0).is_err());
        assert!(adaptive_gamma(1.5, 4.0).is_err());
        assert!(adaptive_gamma(0.5, 0.0).is_err());
        assert!(adaptive_gamma(0.5, -1.0).is_err());
    }

    #[test]
    fn gamma_table_builds_per_class_parameters() {
        let t = FrequencyTable::new(vec![1.0, 0.01]).unwrap();
        match gamma_table(&t, 4.0, true).unwrap() {
            Gamma::PerClass(g) => {
                assert_eq!(g.len(), 2);
                assert_eq!(g[0], 2.0);
                assert!((g[1] - 1.5928117520455688).abs() < 1e-12);
            }
            other => panic!("expected per-class table, got {other:?}"),
        }
    }

    #[test]
    fn zero_strength_adjustment_is_identity() {
        let t = FrequencyTable::new(vec![0.7, 0.2, 0.1]).unwrap();
        let z = vec![0.3, -1.2, 2.5];
        assert_eq!(logit_adjust(&z, &t, 0.0).unwrap(), z);
    }

    #[test]
    fn rarer_class_wins_between_equal_logits() {
        let t = FrequencyTable::new(vec![0.9, 0.1]).unwrap();
        let adj = logit_adjust(&[1.0, 1.0], &t, 0.3).unwrap();
        assert!((adj[0] - 1.0316081546973479).abs() < 1e-12);
        assert!((adj[1] - 1.6907755278982137).abs() < 1e-12);
        assert!(adj[1] > adj[0]);
    }

    #[test]
    fn uniform_frequencies_never_change_the_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let t = FrequencyTable::new(vec![0.25; 4]).unwrap();
        for _ in 0..200 {
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let tau = rng.gen_range(-2.0..2.0);
            let adj = logit_adjust(&z, &t, tau).unwrap();
            let argmax = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0
            };
            assert_eq!(argmax(&z), argmax(&adj));
        }
    }

    #[test]
    fn equal_frequency_classes_keep_their_order() {
        let t = FrequencyTable::new(vec![0.3, 0.5, 0.3]).unwrap();
        let adj = logit_adjust(&[2.0, 0.0, 1.0], &t, 0.7).unwrap();
        assert!(adj[0] > adj[2]); // same frequency, higher logit stays higher
    }

    #[test]
    fn adjustment_rejects_shape_mismatch_and_bad_values() {
        let t = FrequencyTable::new(vec![0.5, 0.5]).unwrap();
        assert!(logit_adjust(&[1.0], &t, 0.3).is_err());
        assert!(logit_adjust(&[1.0, f64::NAN], &t, 0.3).is_err());
        assert!(logit_adjust(&[1.0, 2.0], &t, f64::INFINITY).is_err());
    }
}
