//! Class sampling distributions and the epoch draw engine.
//!
//! An epoch is drawn in two stages: a class from the class distribution,
//! then a sample uniformly inside that class, with replacement.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{rng_from_seed, LabeledDataset};
use crate::difficulty::class_weights;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Every training sample equally likely.
    Uniform,
    /// Oversampling to balance: per-sample probability proportional to `1/M_c`.
    ClassFrequency,
    /// Every class equally likely.
    ClassAware,
    /// Class mass proportional to `d_c^tau`.
    CdbS,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] =
        [SamplerKind::Uniform, SamplerKind::ClassFrequency, SamplerKind::ClassAware, SamplerKind::CdbS];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::ClassFrequency => "class_frequency",
            SamplerKind::ClassAware => "class_aware",
            SamplerKind::CdbS => "cdb_s",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<_> = SamplerKind::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown sampler {s:?}; valid kinds: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    /// Minimum per-class mass for CDB-S; `None` means `1e-4 / N`.
    pub floor: Option<f64>,
    /// Draws per epoch; `None` means the training-set size.
    pub epoch_size: Option<usize>,
}

impl SamplerSpec {
    pub fn new(kind: SamplerKind) -> Self {
        Self { kind, floor: None, epoch_size: None }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = Some(floor);
        self
    }

    pub fn floor_for(&self, num_classes: usize) -> f64 {
        self.floor.unwrap_or(1e-4 / num_classes as f64)
    }
}

/// Class distribution for the next epoch.
///
/// `difficulties` and `tau` come from the latest snapshot and only matter
/// for CDB-S.
pub fn class_distribution(
    spec: &SamplerSpec,
    difficulties: &[f64],
    tau: f64,
    class_counts: &[usize],
) -> Result<Vec<f64>> {
    let n = class_counts.len();
    if n == 0 {
        return Err(Error::Config("no classes".into()));
    }
    if let Some(c) = class_counts.iter().position(|&m| m == 0) {
        return Err(Error::Config(format!("class {c} has no training samples")));
    }
    let total: usize = class_counts.iter().sum();
    let dist = match spec.kind {
        SamplerKind::Uniform => {
            class_counts.iter().map(|&m| m as f64 / total as f64).collect()
        }
        SamplerKind::ClassFrequency => {
            // M_c samples, each with mass proportional to 1/M_c
            let mass: Vec<f64> = class_counts.iter().map(|&m| m as f64 * (1.0 / m as f64)).collect();
            normalize(&mass)
        }
        SamplerKind::ClassAware => vec![1.0 / n as f64; n],
        SamplerKind::CdbS => {
            if difficulties.len() != n {
                return Err(Error::Config(format!(
                    "{} difficulties for {n} classes",
                    difficulties.len()
                )));
            }
            cdb_s_distribution(difficulties, tau, spec.floor_for(n))?
        }
    };
    Ok(dist)
}

fn normalize(mass: &[f64]) -> Vec<f64> {
    let s: f64 = mass.iter().sum();
    mass.iter().map(|m| m / s).collect()
}

/// `p_c = d_c^tau / sum_c' d_c'^tau`, then mixed with uniform so every
/// class keeps at least `floor` mass: `p <- (1 - N floor) p + floor`.
pub fn cdb_s_distribution(difficulties: &[f64], tau: f64, floor: f64) -> Result<Vec<f64>> {
    let n = difficulties.len();
    let lambda = n as f64 * floor;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("sampler floor {floor} too large for {n} classes")));
    }
    let w = class_weights(difficulties, tau);
    let sum: f64 = w.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        if lambda == 0.0 {
            return Err(Error::Degenerate(
                "every class has zero difficulty and no floor is set".into(),
            ));
        }
        return Ok(vec![1.0 / n as f64; n]);
    }
    let p = w.iter().map(|x| x / sum);
    if lambda == 0.0 {
        return Ok(p.collect());
    }
    let u = lambda / n as f64;
    Ok(p.map(|x| (1.0 - lambda) * x + u).collect())
}

/// Inverse-transform sampler over classes, then uniform within class.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    cumulative: Vec<f64>,
    members: Vec<Vec<usize>>,
}

impl EpochSampler {
    pub fn new(distribution: &[f64], dataset: &LabeledDataset) -> Result<Self> {
        let members = dataset.indices_by_class();
        if distribution.len() != members.len() {
            return Err(Error::Config(format!(
                "distribution over {} classes for a {}-class dataset",
                distribution.len(),
                members.len()
            )));
        }
        let mut cumulative = Vec::with_capacity(distribution.len());
        let mut acc = 0.0;
        for (c, &p) in distribution.iter().enumerate() {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::Config(format!("class {c} has invalid mass {p}")));
            }
            if p > 0.0 && members[c].is_empty() {
                return Err(Error::Consistency(format!("class {c} has mass {p} but no samples")));
            }
            acc += p;
            cumulative.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::Degenerate("distribution has no mass".into()));
        }
        Ok(Self { cumulative, members })
    }

    pub fn sample_class<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("nonempty");
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut class = self.sample_class(rng);
        // u can round up onto a boundary owned by an empty trailing class
        while self.members[class].is_empty() {
            class -= 1;
        }
        let group = &self.members[class];
        group[rng.random_range(0..group.len())]
    }
}

/// `epoch_size` dataset indices drawn under `seed`.
pub fn draw_epoch(
    distribution: &[f64],
    dataset: &LabeledDataset,
    epoch_size: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let sampler = EpochSampler::new(distribution, dataset)?;
    let mut rng = rng_from_seed(seed);
    Ok((0..epoch_size).map(|_| sampler.sample(&mut rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_gaussian_blobs;
    use proptest::prelude::*;

    fn ds(counts: &[usize]) -> LabeledDataset {
        make_gaussian_blobs(counts.len(), 2, counts, 1.0, 1).unwrap()
    }

    #[test]
    fn cdb_s_examples() {
        let spec = SamplerSpec::new(SamplerKind::CdbS).with_floor(0.0);
        let p = class_distribution(&spec, &[0.4, 0.4, 0.4], 3.0, &[5, 50, 500]).unwrap();
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = class_distribution(&spec, &[0.0, 0.3, 0.9], 0.0, &[5, 50, 500]).unwrap();
        assert_eq!(p, vec![1.0 / 3.0; 3]);
        let p = class_distribution(&spec, &[0.9, 0.1], 1.0, &[5, 5]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15 && (p[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn cdb_s_degenerate_without_floor() {
        let spec = SamplerSpec::new(SamplerKind::CdbS).with_floor(0.0);
        let r = class_distribution(&spec, &[0.0, 0.0], 1.0, &[3, 3]);
        assert!(matches!(r, Err(Error::Degenerate(_))));
        let floored = SamplerSpec::new(SamplerKind::CdbS);
        let p = class_distribution(&floored, &[0.0, 0.0], 1.0, &[3, 3]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = class_distribution(&floored, &[0.0, 1.0], 2.0, &[3, 3]).unwrap();
        assert!((p[0] - 0.5e-4).abs() < 1e-15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn baselines() {
        let counts = [90, 10];
        let uni = class_distribution(&SamplerSpec::new(SamplerKind::Uniform), &[], 0.0, &counts)
            .unwrap();
        assert_eq!(uni, vec![0.9, 0.1]);
        for kind in [SamplerKind::ClassAware, SamplerKind::ClassFrequency] {
            let p = class_distribution(&SamplerSpec::new(kind), &[], 0.0, &counts).unwrap();
            assert_eq!(p, vec![0.5, 0.5], "{kind}");
        }
        assert!(class_distribution(&SamplerSpec::new(SamplerKind::Uniform), &[], 0.0, &[3, 0])
            .is_err());
    }

    #[test]
    fn balanced_uniform_equals_flat_cdb_s() {
        // the reduction relied on by the trainer: balanced counts, tau = 0
        for n in 2..12 {
            let counts = vec![37; n];
            let uni =
                class_distribution(&SamplerSpec::new(SamplerKind::Uniform), &[], 0.0, &counts)
                    .unwrap();
            let cdb = class_distribution(
                &SamplerSpec::new(SamplerKind::CdbS).with_floor(0.0),
                &vec![0.3; n],
                0.0,
                &counts,
            )
            .unwrap();
            assert_eq!(uni, cdb);
        }
    }

    #[test]
    fn onehot_draws_single_class() {
        let d = ds(&[5, 6, 7, 8]);
        let idx = draw_epoch(&[0.0, 0.0, 0.0, 1.0], &d, 500, 4).unwrap();
        assert_eq!(idx.len(), 500);
        assert!(idx.iter().all(|&i| d.labels()[i] == 3));
    }

    #[test]
    fn draws_deterministic() {
        let d = ds(&[50, 7]);
        let a = draw_epoch(&[0.3, 0.7], &d, 1000, 99).unwrap();
        let b = draw_epoch(&[0.3, 0.7], &d, 1000, 99).unwrap();
        let c = draw_epoch(&[0.3, 0.7], &d, 1000, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_two_class_frequency() {
        let d = ds(&[3, 3]);
        let idx = draw_epoch(&[0.5, 0.5], &d, 100_000, 12).unwrap();
        let ones = idx.iter().filter(|&&i| d.labels()[i] == 1).count() as f64 / 1e5;
        assert!((ones - 0.5).abs() < 0.01, "{ones}");
    }

    #[test]
    fn within_class_draw_is_uniform() {
        let d = ds(&[4, 1]);
        let idx = draw_epoch(&[1.0, 0.0], &d, 40_000, 5).unwrap();
        let mut hits = [0usize; 5];
        for i in idx {
            hits[i] += 1;
        }
        assert_eq!(hits[4], 0);
        for &h in &hits[..4] {
            assert!((h as f64 / 10_000.0 - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn mass_on_empty_class_rejected() {
        let d = LabeledDataset::new(crate::Matrix::zeros(2, 1), vec![0, 0], 2).unwrap();
        assert!(matches!(draw_epoch(&[0.5, 0.5], &d, 3, 0), Err(Error::Consistency(_))));
        assert!(draw_epoch(&[1.0, 0.0], &d, 3, 0).is_ok());
    }

    /// Direct evaluation of the normalised difficulty powers, written out
    /// term by term.
    fn brute_force(d: &[f64], tau: f64) -> Vec<f64> {
        let mut denom = 0.0;
        for &x in d {
            denom += if tau == 0.0 { 1.0 } else { (tau * x.ln()).exp() };
        }
        d.iter()
            .map(|&x| if tau == 0.0 { 1.0 } else { (tau * x.ln()).exp() } / denom)
            .collect()
    }

    proptest! {
        #[test]
        fn cdb_s_matches_oracle(d in proptest::collection::vec(0.01f64..=1.0, 1..=5), tau in 0.0f64..5.0) {
            let p = cdb_s_distribution(&d, tau, 0.0).unwrap();
            let q = brute_force(&d, tau);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn distributions_normalized_and_ordered(
            d in proptest::collection::vec(0.0f64..=1.0, 2..20),
            tau in 0.0f64..5.0,
            kind in 0usize..4,
        ) {
            let counts: Vec<usize> = (0..d.len()).map(|c| 1 + 7 * c).collect();
            let spec = SamplerSpec::new(SamplerKind::ALL[kind]);
            let p = class_distribution(&spec, &d, tau, &counts).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            if spec.kind == SamplerKind::CdbS {
                for a in 0..d.len() {
                    for b in 0..d.len() {
                        if d[a] > d[b] {
                            prop_assert!(p[a] >= p[b]);
                        }
                    }
                }
            }
        }
    }
}
