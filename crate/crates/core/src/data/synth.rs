//! Gaussian-cluster domain shift generator.
//!
//! Source: one isotropic Gaussian cluster per class. Target: the same
//! clusters rotated in the plane of the first two feature dimensions and
//! translated, sampled with their own class proportions. Rotation and
//! translation give covariate shift, the proportions give label shift.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::rng::{purpose, Rng};
use crate::tensor::Tensor2;

fn default_radius() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(alias = "K", alias = "k")]
    pub num_classes: usize,
    pub dim: usize,
    pub n_source: usize,
    pub n_target: usize,
    /// `num_classes` points of length `dim`. Empty: class means are spaced
    /// evenly on a circle of radius `mean_radius` in dimensions 0 and 1.
    #[serde(default)]
    pub class_means: Vec<Vec<f64>>,
    #[serde(default = "default_radius")]
    pub mean_radius: f64,
    pub class_spread: f64,
    #[serde(default)]
    pub shift_rotation_degrees: f64,
    /// Length `dim`, or empty for no translation.
    #[serde(default)]
    pub shift_translation: Vec<f64>,
    /// Empty means balanced.
    #[serde(default)]
    pub source_class_proportions: Vec<f64>,
    /// Empty means balanced.
    #[serde(default)]
    pub target_class_proportions: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Balanced, unshifted domains with circle-layout means.
    pub fn new(num_classes: usize, dim: usize, n_source: usize, n_target: usize, seed: u64) -> Self {
        Self {
            num_classes,
            dim,
            n_source,
            n_target,
            class_means: Vec::new(),
            mean_radius: default_radius(),
            class_spread: 1.0,
            shift_rotation_degrees: 0.0,
            shift_translation: Vec::new(),
            source_class_proportions: Vec::new(),
            target_class_proportions: Vec::new(),
            seed,
        }
    }

    /// The calibrated reference shift: 5 classes in 16 dimensions, target
    /// rotated by 30°.
    pub fn reference(seed: u64) -> Self {
        Self {
            class_spread: 0.6,
            shift_rotation_degrees: 30.0,
            ..Self::new(5, 16, 500, 500, seed)
        }
    }

    /// Parses JSON (when the text starts with `{`) or `key=value` lines.
    /// In `key=value` form vectors are comma separated and `class_means`
    /// rows are separated by `;`.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let value = if trimmed.starts_with('{') {
            serde_json::from_str::<serde_json::Value>(trimmed)
                .map_err(|e| Error::InvalidArgument(format!("synthetic spec: {e}")))?
        } else {
            key_value_to_json(text)?
        };
        let spec: Self = serde_json::from_value(value)
            .map_err(|e| Error::InvalidArgument(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::InvalidArgument(format!("{name}: {msg}")));
        let k = self.num_classes;
        if k == 0 {
            return field("num_classes", "must be at least 1".into());
        }
        if self.dim < 2 {
            return field("dim", format!("must be at least 2, got {}", self.dim));
        }
        if self.n_source < k {
            return field("n_source", format!("must be at least num_classes ({k}), got {}", self.n_source));
        }
        if self.n_target < k {
            return field("n_target", format!("must be at least num_classes ({k}), got {}", self.n_target));
        }
        if !(self.class_spread.is_finite() && self.class_spread > 0.0) {
            return field("class_spread", format!("must be positive, got {}", self.class_spread));
        }
        if !self.shift_rotation_degrees.is_finite() {
            return field("shift_rotation_degrees", "must be finite".into());
        }
        if !self.class_means.is_empty() {
            if self.class_means.len() != k {
                return field("class_means", format!("{} rows for {k} classes", self.class_means.len()));
            }
            if let Some(row) = self.class_means.iter().find(|r| r.len() != self.dim) {
                return field("class_means", format!("row of length {} for dim {}", row.len(), self.dim));
            }
            if self.class_means.iter().flatten().any(|v| !v.is_finite()) {
                return field("class_means", "values must be finite".into());
            }
        } else if !(self.mean_radius.is_finite() && self.mean_radius > 0.0) {
            return field("mean_radius", format!("must be positive, got {}", self.mean_radius));
        }
        if !self.shift_translation.is_empty() && self.shift_translation.len() != self.dim {
            return field(
                "shift_translation",
                format!("length {} for dim {}", self.shift_translation.len(), self.dim),
            );
        }
        for (name, p) in [
            ("source_class_proportions", &self.source_class_proportions),
            ("target_class_proportions", &self.target_class_proportions),
        ] {
            if p.is_empty() {
                continue;
            }
            if p.len() != k {
                return field(name, format!("{} values for {k} classes", p.len()));
            }
            if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return field(name, "values must be finite and nonnegative".into());
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return field(name, format!("must sum to 1, got {sum}"));
            }
        }
        Ok(())
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        if !self.class_means.is_empty() {
            return self.class_means.clone();
        }
        (0..self.num_classes)
            .map(|y| {
                let angle = std::f64::consts::TAU * y as f64 / self.num_classes as f64;
                let mut m = vec![0.0; self.dim];
                m[0] = self.mean_radius * angle.cos();
                m[1] = self.mean_radius * angle.sin();
                m
            })
            .collect()
    }

    /// Applies the target rotation and translation to one point.
    pub fn shift_point(&self, x: &mut [f64]) {
        let theta = self.shift_rotation_degrees.to_radians();
        let (s, c) = theta.sin_cos();
        let (a, b) = (x[0], x[1]);
        x[0] = c * a - s * b;
        x[1] = s * a + c * b;
        for (v, t) in x.iter_mut().zip(&self.shift_translation) {
            *v += t;
        }
    }
}

fn key_value_to_json(text: &str) -> Result<serde_json::Value> {
    const VECTOR_KEYS: [&str; 3] = [
        "shift_translation",
        "source_class_proportions",
        "target_class_proportions",
    ];
    let number = |key: &str, s: &str| -> Result<serde_json::Value> {
        let s = s.trim();
        if let Ok(i) = s.parse::<u64>() {
            return Ok(i.into());
        }
        s.parse::<f64>()
            .map(Into::into)
            .map_err(|_| Error::InvalidArgument(format!("{key}: `{s}` is not a number")))
    };
    let vector = |key: &str, s: &str| -> Result<serde_json::Value> {
        if s.trim().is_empty() {
            return Ok(serde_json::Value::Array(Vec::new()));
        }
        s.split(',').map(|v| number(key, v)).collect::<Result<Vec<_>>>().map(Into::into)
    };
    let mut map = serde_json::Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("synthetic spec line {}: expected key=value", i + 1))
        })?;
        let key = key.trim();
        let parsed = if key == "class_means" {
            value
                .split(';')
                .map(|row| vector(key, row))
                .collect::<Result<Vec<_>>>()?
                .into()
        } else if VECTOR_KEYS.contains(&key) {
            vector(key, value)?
        } else {
            number(key, value)?
        };
        map.insert(key.to_string(), parsed);
    }
    Ok(serde_json::Value::Object(map))
}

/// Splits `n` into per-class counts by largest remainder.
fn allocate(n: usize, proportions: &[f64], k: usize) -> Vec<usize> {
    let props: Vec<f64> = if proportions.is_empty() {
        vec![1.0 / k as f64; k]
    } else {
        proportions.to_vec()
    };
    let exact: Vec<f64> = props.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    // Stable sort keeps lower class ids first among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut missing = n - counts.iter().sum::<usize>();
    for &y in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        counts[y] += 1;
        missing -= 1;
    }
    counts
}

fn sample_domain(
    spec: &SyntheticSpec,
    name: &str,
    n: usize,
    proportions: &[f64],
    shifted: bool,
    rng: &mut Rng,
) -> Result<FeatureDataset> {
    let means = spec.means();
    let counts = allocate(n, proportions, spec.num_classes);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(y, &c)| std::iter::repeat_n(y, c))
        .collect();
    labels.shuffle(rng);
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut point = vec![0.0; spec.dim];
    for &y in &labels {
        for (v, m) in point.iter_mut().zip(&means[y]) {
            let z: f64 = StandardNormal.sample(rng);
            *v = m + spec.class_spread * z;
        }
        if shifted {
            spec.shift_point(&mut point);
        }
        data.extend_from_slice(&point);
    }
    let prefix = &name[..1];
    let ids = (0..n).map(|i| format!("{prefix}{i}")).collect();
    FeatureDataset::new(
        name,
        Tensor2::from_vec(n, spec.dim, data)?,
        Some(labels),
        spec.num_classes,
        Some(ids),
    )
}

/// Draws `(source, target)`. The target keeps its labels for diagnostics;
/// call [`FeatureDataset::without_labels`] before handing it to training code
/// that must not see them.
pub fn synth_gaussian_shift(spec: &SyntheticSpec) -> Result<(FeatureDataset, FeatureDataset)> {
    spec.validate()?;
    let mut rng = Rng::derive(spec.seed, purpose::SYNTH);
    let source = sample_domain(
        spec,
        "source",
        spec.n_source,
        &spec.source_class_proportions,
        false,
        &mut rng,
    )?;
    let target = sample_domain(
        spec,
        "target",
        spec.n_target,
        &spec.target_class_proportions,
        true,
        &mut rng,
    )?;
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_follows_proportions() {
        assert_eq!(allocate(10, &[], 3), vec![4, 3, 3]);
        assert_eq!(allocate(100, &[0.4, 0.3, 0.15, 0.1, 0.05], 5), vec![40, 30, 15, 10, 5]);
        assert_eq!(allocate(7, &[0.5, 0.5], 2).iter().sum::<usize>(), 7);
    }

    #[test]
    fn validation_names_fields() {
        let mut spec = SyntheticSpec::new(5, 16, 0, 100, 1);
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("n_source"), "{err}");
        spec.n_source = 100;
        spec.target_class_proportions = vec![0.5, 0.5, 0.1, 0.0, 0.0];
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("target_class_proportions"), "{err}");
        spec.target_class_proportions = vec![0.2; 4];
        assert!(spec.validate().is_err());
        spec.target_class_proportions = vec![0.2; 5];
        assert!(spec.validate().is_ok());
        spec.shift_translation = vec![1.0; 3];
        assert!(spec.validate().unwrap_err().to_string().contains("shift_translation"));
    }

    #[test]
    fn key_value_and_json_agree() {
        let kv = "num_classes=2\ndim=3\nn_source=10\nn_target=12\nclass_spread=0.5\n\
                  class_means=1,0,0;0,1,0\nshift_translation=0,0,1\n\
                  target_class_proportions=0.75,0.25\nseed=4\n";
        let json = r#"{"num_classes":2,"dim":3,"n_source":10,"n_target":12,"class_spread":0.5,
            "class_means":[[1,0,0],[0,1,0]],"shift_translation":[0,0,1],
            "target_class_proportions":[0.75,0.25],"seed":4}"#;
        assert_eq!(SyntheticSpec::parse(kv).unwrap(), SyntheticSpec::parse(json).unwrap());
        assert!(SyntheticSpec::parse("num_classes=2\nbogus=1\n").is_err());
        assert!(SyntheticSpec::parse("num_classes=two\n").is_err());
    }

    #[test]
    fn zero_shift_domains_share_distribution_and_seed_fixes_output() {
        let spec = SyntheticSpec::new(3, 4, 30, 30, 8);
        let (s1, t1) = synth_gaussian_shift(&spec).unwrap();
        let (s2, t2) = synth_gaussian_shift(&spec).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
        assert_eq!(s1.class_counts().unwrap(), vec![10, 10, 10]);
        assert_eq!(t1.class_counts().unwrap(), vec![10, 10, 10]);
        assert_ne!(s1.features, t1.features);
    }

    #[test]
    fn empirical_class_means_converge() {
        let mut spec = SyntheticSpec::new(4, 6, 10_000, 10_000, 21);
        spec.class_spread = 1.5;
        spec.shift_rotation_degrees = 90.0;
        spec.shift_translation = vec![0.0, 0.0, 2.0, 0.0, 0.0, 0.0];
        spec.target_class_proportions = vec![0.4, 0.3, 0.2, 0.1];
        let (source, target) = synth_gaussian_shift(&spec).unwrap();
        let mut shifted_means = spec.means();
        for m in &mut shifted_means {
            spec.shift_point(m);
        }
        for (ds, means) in [(&source, spec.means()), (&target, shifted_means)] {
            let counts = ds.class_counts().unwrap();
            let labels = ds.labels.as_ref().unwrap();
            let mut sums = vec![vec![0.0; spec.dim]; spec.num_classes];
            for (row, &y) in ds.features.iter_rows().zip(labels) {
                for (s, v) in sums[y].iter_mut().zip(row) {
                    *s += v;
                }
            }
            for y in 0..spec.num_classes {
                let bound = 3.0 * spec.class_spread / (counts[y] as f64).sqrt();
                for j in 0..spec.dim {
                    let emp = sums[y][j] / counts[y] as f64;
                    assert!(
                        (emp - means[y][j]).abs() < bound,
                        "{} class {y} dim {j}: {emp} vs {}",
                        ds.name,
                        means[y][j]
                    );
                }
            }
        }
        assert_eq!(target.class_counts().unwrap(), vec![4000, 3000, 2000, 1000]);
    }
}
