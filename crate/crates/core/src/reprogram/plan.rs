use rand_distr::{Bernoulli, Distribution};
use serde::{Deserialize, Serialize};

use crate::nnet::Tensor;
use crate::seed::{rng, Rng};
use crate::{Error, Result};

/// Standard deviation of the initial θ.
pub const THETA_INIT_STD: f64 = 0.01;

/// Input transform `x' = Pad(x) + M ⊙ θ`.
///
/// The target series is copied `m` times, replica `j` starting at
/// `j · floor(d_S / m)`. The mask is 0 on replica positions and 1 on the
/// trainable positions, so δ = M ⊙ θ never touches the signal itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprogramPlan {
    source_len: usize,
    target_len: usize,
    replicas: usize,
    placements: Vec<usize>,
    mask: Vec<f64>,
    theta: Vec<f64>,
    dropout: f64,
    weight_decay: f64,
}

/// Per-position multipliers applied to θ during a training batch
/// (0 or 1/(1−p); all ones when p = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct DropMask(Vec<f64>);

impl DropMask {
    pub fn ones(len: usize) -> Self {
        Self(vec![1.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn placements(source_len: usize, target_len: usize, replicas: usize) -> Result<Vec<usize>> {
    if replicas == 0 {
        return Err(Error::Argument("replication m must be >= 1".into()));
    }
    if target_len == 0 {
        return Err(Error::Argument("target length must be >= 1".into()));
    }
    let interval = source_len / replicas;
    if target_len > interval {
        return Err(Error::Placement {
            d_t: target_len,
            interval,
            max_m: source_len / target_len,
        });
    }
    Ok((0..replicas).map(|j| j * interval).collect())
}

impl ReprogramPlan {
    /// Mask and placements for (d_S, d_T, m), θ ~ N(0, 0.01²) from `seed`.
    pub fn build(
        source_len: usize,
        target_len: usize,
        replicas: usize,
        dropout: f64,
        weight_decay: f64,
        seed: u64,
    ) -> Result<Self> {
        let theta = Tensor::randn(&[source_len], THETA_INIT_STD, &mut rng(seed)).into_data();
        Self::from_parts(source_len, target_len, replicas, dropout, weight_decay, theta)
    }

    pub fn from_parts(
        source_len: usize,
        target_len: usize,
        replicas: usize,
        dropout: f64,
        weight_decay: f64,
        theta: Vec<f64>,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Argument(format!("dropout must be in [0, 1), got {dropout}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Argument(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        if theta.len() != source_len {
            return Err(Error::Shape(format!(
                "theta has {} entries, source length is {source_len}",
                theta.len()
            )));
        }
        let placements = placements(source_len, target_len, replicas)?;
        let mut mask = vec![1.0; source_len];
        for &start in &placements {
            mask[start..start + target_len].iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(Self {
            source_len,
            target_len,
            replicas,
            placements,
            mask,
            theta,
            dropout,
            weight_decay,
        })
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn placements(&self) -> &[usize] {
        &self.placements
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.source_len {
            return Err(Error::Shape(format!(
                "theta has {} entries, source length is {}",
                theta.len(),
                self.source_len
            )));
        }
        self.theta = theta;
        Ok(())
    }

    /// Same placement with θ = 0 (the pure padded replication).
    pub fn zeroed(&self) -> Self {
        Self {
            theta: vec![0.0; self.source_len],
            ..self.clone()
        }
    }

    /// δ = M ⊙ θ.
    pub fn delta(&self) -> Vec<f64> {
        self.mask.iter().zip(&self.theta).map(|(m, t)| m * t).collect()
    }

    /// Inverted-dropout multipliers for one batch.
    pub fn draw_dropout(&self, rng: &mut Rng) -> DropMask {
        if self.dropout == 0.0 {
            return DropMask::ones(self.source_len);
        }
        let keep = Bernoulli::new(1.0 - self.dropout).expect("dropout validated");
        let scale = 1.0 / (1.0 - self.dropout);
        DropMask((0..self.source_len).map(|_| if keep.sample(rng) { scale } else { 0.0 }).collect())
    }

    /// Zero-padded replication of `x` (no θ).
    pub fn pad(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.target_len {
            return Err(Error::Shape(format!(
                "target series has length {}, plan expects {}",
                x.len(),
                self.target_len
            )));
        }
        let mut out = vec![0.0; self.source_len];
        for &start in &self.placements {
            out[start..start + self.target_len].copy_from_slice(x);
        }
        Ok(out)
    }

    /// Reprogrammed input. With `drop` the θ entries are scaled by the batch
    /// dropout multipliers; without it θ is used as is (evaluation).
    pub fn transform(&self, x: &[f64], drop: Option<&DropMask>) -> Result<Vec<f64>> {
        let mut out = self.pad(x)?;
        for (i, o) in out.iter_mut().enumerate() {
            let scale = drop.map_or(1.0, |d| d.0[i]);
            *o += self.mask[i] * self.theta[i] * scale;
        }
        Ok(out)
    }
}
