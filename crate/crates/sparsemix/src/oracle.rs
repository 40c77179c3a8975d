//! The query oracle.
//!
//! Each query presents a vector `x`; the oracle picks one hidden vector
//! uniformly at random and returns its inner product with `x` plus centered
//! Gaussian noise of known standard deviation. All randomness comes from a
//! seeded ChaCha stream: the component index via a uniform integer draw, the
//! noise via the standard normal transform of `rand_distr`, so runs are
//! reproducible for a fixed seed. Inner products are summed left to right to
//! keep results bit-stable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::SignalSet;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("query has length {got}, oracle expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("sigma must be nonnegative and finite")]
    BadSigma,
}

/// One row of an optional query trace.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub query_index: u64,
    pub design: String,
    pub response: f64,
}

/// Query oracle over a hidden [`SignalSet`].
pub struct Oracle {
    signals: SignalSet,
    sigma: f64,
    rng: ChaCha8Rng,
    query_count: u64,
    choices: Vec<usize>,
    trace: Option<Vec<TraceRow>>,
    design_label: String,
}

impl Oracle {
    pub fn new(signals: SignalSet, sigma: f64, seed: u64) -> Result<Self, OracleError> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(OracleError::BadSigma);
        }
        Ok(Oracle {
            signals,
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
            query_count: 0,
            choices: Vec::new(),
            trace: None,
            design_label: String::new(),
        })
    }

    pub fn signals(&self) -> &SignalSet {
        &self.signals
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    /// Component index drawn for each past query, in order. Diagnostic
    /// access for white-box tests; recovery code must not read it.
    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    /// Start recording (query index, design label, response) rows.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[TraceRow]> {
        self.trace.as_deref()
    }

    /// Label attached to trace rows for subsequent queries.
    pub fn mark_design(&mut self, label: &str) {
        self.design_label = label.to_string();
    }

    /// Answer one query.
    pub fn query(&mut self, x: &[f64]) -> Result<f64, OracleError> {
        if x.len() != self.signals.n() {
            return Err(OracleError::DimensionMismatch { got: x.len(), want: self.signals.n() });
        }
        let j = self.rng.gen_range(0..self.signals.l());
        self.choices.push(j);
        let beta = &self.signals.vectors()[j];
        let mut dot = 0.0;
        for (xi, bi) in x.iter().zip(beta.iter()) {
            dot += xi * bi;
        }
        let response = if self.sigma > 0.0 {
            let z: f64 = self.rng.sample(StandardNormal);
            dot + self.sigma * z
        } else {
            dot
        };
        let index = self.query_count;
        self.query_count += 1;
        if let Some(t) = &mut self.trace {
            t.push(TraceRow {
                query_index: index,
                design: self.design_label.clone(),
                response,
            });
        }
        Ok(response)
    }

    /// Answer `t` independent queries with the same vector.
    pub fn query_batch(&mut self, x: &[f64], t: usize) -> Result<Vec<f64>, OracleError> {
        if t == 0 {
            return Err(OracleError::EmptyBatch);
        }
        let mut out = Vec::with_capacity(t);
        for _ in 0..t {
            out.push(self.query(x)?);
        }
        Ok(out)
    }
}

/// Families of query vectors used by the pipelines. The grid designs draw
/// integer entries from `{-2z, ..., 2z}`; the per-entry second moment is
/// accounted as `z(2z+1)/3` throughout so that the composite design
/// `v + (4z+1)r` evaluates to `1 + z(2z+1)(4z+1)^2/3` times the squared
/// signal norm.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryDesign {
    /// Entries uniform on {-1, +1}.
    Pm1,
    /// Half-sum of two sign vectors, entries in {-1, 0, 1}.
    Pm1HalfSum,
    /// Half-difference of two sign vectors, entries in {-1, 0, 1}.
    Pm1HalfDiff,
    /// `scale * r` with `r` uniform on the integer box of radius `2z`.
    GridR { z: u64, scale: u64 },
    /// Sum of two independent grid draws.
    GridRSum { z: u64 },
    /// `v + q r` with `v` a sign vector and `r` a grid draw.
    Composite { z: u64, q: u64 },
}

fn grid_second_moment(z: u64) -> f64 {
    let z = z as f64;
    z * (2.0 * z + 1.0) / 3.0
}

/// Analytic signal-to-noise ratio of a design against a signal set: the
/// expected squared inner product, minimized over the hidden vectors, divided
/// by the noise variance. Infinite when `sigma` is zero.
pub fn analytic_snr(design: &QueryDesign, signals: &SignalSet, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    let base = signals.min_norm_sq();
    let factor = match design {
        QueryDesign::Pm1 => 1.0,
        QueryDesign::Pm1HalfSum | QueryDesign::Pm1HalfDiff => 0.5,
        QueryDesign::GridR { z, scale } => {
            (*scale as f64) * (*scale as f64) * grid_second_moment(*z)
        }
        QueryDesign::GridRSum { z } => 2.0 * grid_second_moment(*z),
        QueryDesign::Composite { z, q } => {
            1.0 + (*q as f64) * (*q as f64) * grid_second_moment(*z)
        }
    };
    factor * base / (sigma * sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_signal_set, SignalSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_signal() -> SignalSet {
        SignalSet::new(4, 1, vec![vec![1.0, 0.0, 0.0, 0.0]], None).unwrap()
    }

    #[test]
    fn noiseless_single_component_is_exact() {
        let mut o = Oracle::new(unit_signal(), 0.0, 3).unwrap();
        let y = o.query(&[2.0, 1.0, -1.0, 0.5]).unwrap();
        assert_eq!(y, 2.0);
        assert_eq!(o.query_count(), 1);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut o = Oracle::new(unit_signal(), 0.0, 3).unwrap();
        assert!(matches!(
            o.query(&[1.0, 2.0]),
            Err(OracleError::DimensionMismatch { got: 2, want: 4 })
        ));
        assert!(matches!(o.query_batch(&[0.0; 4], 0), Err(OracleError::EmptyBatch)));
    }

    #[test]
    fn seeded_batches_repeat_exactly() {
        let signals =
            SignalSet::new(2, 1, vec![vec![1.0, 0.0], vec![0.0, 2.0]], None).unwrap();
        let mut a = Oracle::new(signals.clone(), 0.3, 42).unwrap();
        let mut b = Oracle::new(signals, 0.3, 42).unwrap();
        let ya = a.query_batch(&[1.0, 1.0], 32).unwrap();
        let yb = b.query_batch(&[1.0, 1.0], 32).unwrap();
        assert_eq!(ya, yb);
    }

    #[test]
    fn component_choices_are_close_to_uniform() {
        let signals = SignalSet::new(
            2,
            1,
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 0.0]],
            None,
        )
        .unwrap();
        let mut o = Oracle::new(signals, 0.0, 11).unwrap();
        let n = 100_000;
        o.query_batch(&[0.0, 0.0], n).unwrap();
        let mut counts = [0usize; 3];
        for &c in o.choices() {
            counts[c] += 1;
        }
        for c in counts {
            let frac = c as f64 / n as f64;
            assert!((frac - 1.0 / 3.0).abs() < 0.01, "component fraction {frac}");
        }
    }

    #[test]
    fn noise_moments_match_sigma_white_box() {
        // Subtract the known per-draw component mean; what remains must be
        // centered noise with the configured variance.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let signals = generate_signal_set(6, 2, 2, 0.5, 2.0, &mut rng).unwrap();
        let sigma = 0.7;
        let mut o = Oracle::new(signals.clone(), sigma, 19).unwrap();
        let x = vec![1.0, -1.0, 1.0, 1.0, -1.0, 1.0];
        let n = 100_000;
        let ys = o.query_batch(&x, n).unwrap();
        let means: Vec<f64> = signals
            .vectors()
            .iter()
            .map(|b| x.iter().zip(b).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        let resid: Vec<f64> = ys
            .iter()
            .zip(o.choices())
            .map(|(y, &j)| y - means[j])
            .collect();
        let mean = resid.iter().sum::<f64>() / n as f64;
        let var = resid.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.01, "residual mean {mean}");
        assert!((var - sigma * sigma).abs() / (sigma * sigma) < 0.05, "residual var {var}");
    }

    #[test]
    fn empirical_pm1_second_moment_validates_snr_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let signals = generate_signal_set(10, 3, 1, 0.5, 2.0, &mut rng).unwrap();
        let beta = &signals.vectors()[0];
        let norm_sq: f64 = beta.iter().map(|e| e * e).sum();
        let mut acc = 0.0;
        let trials = 10_000;
        for _ in 0..trials {
            let v: Vec<f64> =
                (0..10).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            let dot: f64 = v.iter().zip(beta).map(|(a, b)| a * b).sum();
            acc += dot * dot;
        }
        let emp = acc / trials as f64;
        assert!((emp - norm_sq).abs() / norm_sq < 0.05, "empirical {emp} vs {norm_sq}");
    }

    #[test]
    fn snr_closed_forms() {
        let s = unit_signal(); // norm 1
        assert!((analytic_snr(&QueryDesign::Pm1, &s, 0.5) - 4.0).abs() < 1e-12);
        assert!((analytic_snr(&QueryDesign::Pm1HalfSum, &s, 1.0) - 0.5).abs() < 1e-12);
        let comp = QueryDesign::Composite { z: 1, q: 5 };
        assert!((analytic_snr(&comp, &s, 1.0) - 26.0).abs() < 1e-12);
        assert!(analytic_snr(&QueryDesign::Pm1, &s, 0.0).is_infinite());
    }

    #[test]
    fn trace_rows_carry_labels() {
        let mut o = Oracle::new(unit_signal(), 0.0, 1).unwrap();
        o.enable_trace();
        o.mark_design("pm1");
        o.query(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let t = o.trace().unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].design, "pm1");
        assert_eq!(t[0].query_index, 0);
        assert_eq!(t[0].response, 1.0);
    }
}
