//! Laplace mechanism, privacy budgets and deterministic random streams.
//!
//! Every random draw in the crate flows from an [`RngStream`], a
//! `(master_seed, stream_id)` pair keyed into a ChaCha8 generator. Two
//! streams with the same pair replay the same sequence; distinct
//! `stream_id`s select distinct ChaCha streams of the same key.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Privacy loss, L1 sensitivity and the derived Laplace scale `Δ/ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PrivacySpec<T> {
    epsilon: T,
    sensitivity: T,
    scale: T,
}

impl<T: Real> PrivacySpec<T> {
    pub fn new(epsilon: T, sensitivity: T) -> Result<Self> {
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(sensitivity > T::zero()) || !sensitivity.is_finite() {
            return Err(invalid(format!("sensitivity must be positive, got {sensitivity}")));
        }
        Ok(Self {
            epsilon,
            sensitivity,
            scale: sensitivity / epsilon,
        })
    }

    /// Counting-query default: one individual moves one count by one.
    pub fn counting(epsilon: T) -> Result<Self> {
        Self::new(epsilon, T::one())
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn sensitivity(&self) -> T {
        self.sensitivity
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// Variance of one Laplace coordinate, `2λ²`.
    pub fn noise_variance(&self) -> T {
        T::two() * self.scale * self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Ground truth counts: nonnegative integers.
    Raw,
    /// Output of a mechanism or post-processing; no sign or integrality guarantee.
    Released,
}

/// `n` entities by `k` attributes, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Dataset<T> {
    entity_ids: Vec<String>,
    attribute_names: Vec<String>,
    values: Vec<T>,
    kind: DatasetKind,
}

impl<T: Real> Dataset<T> {
    pub fn new(
        entity_ids: Vec<String>,
        attribute_names: Vec<String>,
        values: Vec<T>,
        kind: DatasetKind,
    ) -> Result<Self> {
        let (n, k) = (entity_ids.len(), attribute_names.len());
        if n == 0 || k == 0 {
            return Err(Error::Shape(format!(
                "dataset needs n >= 1 and k >= 1, got n={n} k={k}"
            )));
        }
        if values.len() != n * k {
            return Err(Error::Shape(format!(
                "expected {} values for {n}x{k}, got {}",
                n * k,
                values.len()
            )));
        }
        if kind == DatasetKind::Raw {
            if let Some(v) = values
                .iter()
                .find(|v| !v.is_finite() || **v < T::zero() || v.fract() != T::zero())
            {
                return Err(Error::InvalidData(format!(
                    "raw datasets hold nonnegative integral counts, found {v}"
                )));
            }
        } else if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite released value".into()));
        }
        Ok(Self {
            entity_ids,
            attribute_names,
            values,
            kind,
        })
    }

    pub fn raw(entity_ids: Vec<String>, attribute_names: Vec<String>, values: Vec<T>) -> Result<Self> {
        Self::new(entity_ids, attribute_names, values, DatasetKind::Raw)
    }

    /// Single-attribute raw dataset with ids `"0"`, `"1"`, ...
    pub fn from_counts(attribute: &str, counts: &[T]) -> Result<Self> {
        let ids = (0..counts.len()).map(|i| i.to_string()).collect();
        Self::raw(ids, vec![attribute.to_string()], counts.to_vec())
    }

    pub fn n(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn k(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn entity_ids(&self) -> &[String] {
        &self.entity_ids
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn attr_index(&self, name: &str) -> Result<usize> {
        self.attribute_names
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    #[inline]
    pub fn get(&self, entity: usize, attr: usize) -> T {
        self.values[entity * self.k() + attr]
    }

    pub fn row(&self, entity: usize) -> &[T] {
        let k = self.k();
        &self.values[entity * k..(entity + 1) * k]
    }

    pub fn column(&self, attr: usize) -> Vec<T> {
        (0..self.n()).map(|i| self.get(i, attr)).collect()
    }

    /// Same shape and labels, new cell values, flagged released.
    pub fn with_released_values(&self, values: Vec<T>) -> Result<Self> {
        Self::new(
            self.entity_ids.clone(),
            self.attribute_names.clone(),
            values,
            DatasetKind::Released,
        )
    }

    /// Overwrites cells in place and marks the dataset released. Used by
    /// Monte Carlo loops that reuse one buffer per worker.
    pub(crate) fn overwrite_released(&mut self, values: &[T]) {
        self.values.copy_from_slice(values);
        self.kind = DatasetKind::Released;
    }

    /// Keeps rows for which `keep` returns true.
    pub fn filter_rows(&self, mut keep: impl FnMut(&[T]) -> bool) -> Result<Self> {
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.n() {
            if keep(self.row(i)) {
                ids.push(self.entity_ids[i].clone());
                values.extend_from_slice(self.row(i));
            }
        }
        Self::new(ids, self.attribute_names.clone(), values, self.kind)
    }
}

/// Deterministic random stream keyed by `(master_seed, stream_id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream for sub-task `index` (Monte Carlo block, purpose tag, ...).
    pub fn child(&self, index: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0x5851_f42d))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One unit-scale Laplace draw by inverse CDF on `u ∈ (0, 1)`:
/// `η = −sign(u − ½)·ln(1 − 2|u − ½|)`.
#[inline]
pub fn unit_laplace<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    let d = u - 0.5;
    -d.signum() * (1.0 - 2.0 * d.abs()).ln()
}

/// One draw from Laplace(0, `scale`).
pub fn sample_laplace<T: Real, R: Rng + ?Sized>(scale: T, rng: &mut R) -> Result<T> {
    if !(scale > T::zero()) || !scale.is_finite() {
        return Err(invalid(format!("Laplace scale must be positive, got {scale}")));
    }
    Ok(scale * T::of(unit_laplace(rng)))
}

/// Laplace mechanism: every cell gets independent Laplace(0, `spec.scale`) noise.
pub fn release<T: Real>(data: &Dataset<T>, spec: &PrivacySpec<T>, stream: RngStream) -> Result<Dataset<T>> {
    release_per_attribute(data, spec.epsilon(), &vec![spec.sensitivity(); data.k()], stream)
}

/// Laplace mechanism with one sensitivity per attribute column.
pub fn release_per_attribute<T: Real>(
    data: &Dataset<T>,
    epsilon: T,
    sensitivities: &[T],
    stream: RngStream,
) -> Result<Dataset<T>> {
    if data.kind() != DatasetKind::Raw {
        return Err(invalid("release expects a raw dataset"));
    }
    if sensitivities.len() != data.k() {
        return Err(Error::Shape(format!(
            "{} sensitivities for {} attributes",
            sensitivities.len(),
            data.k()
        )));
    }
    let scales = sensitivities
        .iter()
        .map(|&s| PrivacySpec::new(epsilon, s).map(|p| p.scale()))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = stream.rng();
    let k = data.k();
    let values = data
        .values()
        .iter()
        .enumerate()
        .map(|(c, &v)| v + scales[c % k] * T::of(unit_laplace(&mut rng)))
        .collect();
    data.with_released_values(values)
}

/// Sequential composition: total privacy loss is the sum of the parts.
pub fn compose_budgets<T: Real>(parts: &[T]) -> Result<T> {
    if parts.is_empty() {
        return Err(invalid("cannot compose an empty list of budgets"));
    }
    if let Some(p) = parts.iter().find(|p| !(**p > T::zero())) {
        return Err(invalid(format!("budget parts must be positive, got {p}")));
    }
    Ok(parts.iter().copied().sum())
}

/// Splits `epsilon` proportionally to `shares`, which must sum to one.
pub fn split_budget<T: Real>(epsilon: T, shares: &[T]) -> Result<Vec<T>> {
    if !(epsilon > T::zero()) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if shares.is_empty() || shares.iter().any(|s| !(*s > T::zero())) {
        return Err(invalid("shares must be a non-empty list of positive reals"));
    }
    let total: f64 = shares.iter().map(|s| s.as_f64()).sum();
    let tol = 1e-12_f64.max(4.0 * T::epsilon().as_f64() * shares.len() as f64);
    if (total - 1.0).abs() > tol {
        return Err(invalid(format!("shares sum to {total}, expected 1")));
    }
    Ok(shares.iter().map(|&s| epsilon * s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_derives_scale() {
        let spec = PrivacySpec::new(0.5, 2.0).unwrap();
        assert_eq!(spec.scale(), 4.0);
        assert_eq!(spec.noise_variance(), 32.0);
        assert!(PrivacySpec::new(0.0, 1.0).is_err());
        assert!(PrivacySpec::new(1.0, -1.0).is_err());
        assert!(PrivacySpec::<f64>::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn zero_scale_is_rejected() {
        let mut rng = RngStream::new(1, 0).rng();
        assert!(matches!(sample_laplace(0.0, &mut rng), Err(Error::InvalidParameter(_))));
        assert!(sample_laplace(-1.0f32, &mut rng).is_err());
    }

    #[test]
    fn raw_dataset_rejects_negative_and_fractional_counts() {
        let ids = vec!["a".to_string()];
        let attrs = vec!["x".to_string()];
        assert!(Dataset::raw(ids.clone(), attrs.clone(), vec![-1.0]).is_err());
        assert!(Dataset::raw(ids.clone(), attrs.clone(), vec![1.5]).is_err());
        assert!(Dataset::raw(ids.clone(), attrs.clone(), vec![3.0]).is_ok());
        assert!(Dataset::<f64>::raw(vec![], attrs, vec![]).is_err());
        assert!(Dataset::raw(ids, vec!["x".into(), "y".into()], vec![1.0]).is_err());
    }

    #[test]
    fn release_is_deterministic_and_keeps_shape() {
        let data = Dataset::from_counts("x", &[1.0, 2.0, 3.0]).unwrap();
        let spec = PrivacySpec::counting(0.1).unwrap();
        let a = release(&data, &spec, RngStream::new(42, 7)).unwrap();
        let b = release(&data, &spec, RngStream::new(42, 7)).unwrap();
        let c = release(&data, &spec, RngStream::new(42, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.n(), 3);
        assert_eq!(a.kind(), DatasetKind::Released);
        assert!(release(&a, &spec, RngStream::new(1, 1)).is_err());
    }

    #[test]
    fn release_can_go_negative_for_small_counts() {
        let data = Dataset::from_counts("x", &[0.0; 64]).unwrap();
        let spec = PrivacySpec::counting(0.1).unwrap();
        let out = release(&data, &spec, RngStream::new(3, 0)).unwrap();
        assert!(out.values().iter().any(|v| *v < 0.0));
    }

    #[test]
    fn budgets_compose_and_split() {
        assert!((compose_budgets(&[0.05, 0.05]).unwrap() - 0.1f64).abs() < 1e-15);
        assert!((compose_budgets(&[0.01, 0.02, 0.03]).unwrap() - 0.06f64).abs() < 1e-15);
        let eps = 0.37f64;
        assert!((compose_budgets(&[eps / 2.0, eps / 2.0]).unwrap() - eps).abs() < 1e-15);
        assert!(compose_budgets::<f64>(&[]).is_err());
        assert!(compose_budgets(&[0.1, 0.0]).is_err());

        assert_eq!(split_budget(0.1, &[0.5, 0.5]).unwrap(), vec![0.05, 0.05]);
        assert_eq!(split_budget(1.0, &[1.0]).unwrap(), vec![1.0]);
        let parts = split_budget(0.3, &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
        assert!((parts[0] - 0.1f64).abs() < 1e-12 && (parts[1] - 0.2f64).abs() < 1e-12);
        assert!(split_budget(0.3, &[0.5, 0.6]).is_err());
    }

    #[test]
    fn child_streams_differ() {
        let s = RngStream::new(9, 0);
        assert_ne!(s.child(0), s.child(1));
        assert_eq!(s.child(3), s.child(3));
        let a: u64 = s.child(0).rng().gen();
        let b: u64 = s.child(1).rng().gen();
        assert_ne!(a, b);
    }
}
