//! Inter-twinning moons with a rotated target domain.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::model::ToyPoint;

/// Centroid of the noise-free two-moons distribution; the target domain is
/// rotated about this point.
pub const MOONS_CENTROID: [f64; 2] = [0.5, 0.25];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoonsConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub rotation_degrees: f64,
    /// Standard deviation of the Gaussian noise, in units of the moon radius.
    pub noise_std: f64,
    pub seed: u64,
    pub target_labeled_fraction: f64,
}

impl Default for MoonsConfig {
    fn default() -> Self {
        Self {
            n_source: 300,
            n_target: 300,
            rotation_degrees: 35.0,
            noise_std: 0.1,
            seed: 0,
            target_labeled_fraction: 0.5,
        }
    }
}

impl MoonsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_source < 2 || self.n_target < 2 {
            return Err(Error::Config("moons need at least two points per domain".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.target_labeled_fraction) {
            return Err(Error::Config("target_labeled_fraction must be in [0, 1]".into()));
        }
        if !self.rotation_degrees.is_finite() {
            return Err(Error::Config("rotation_degrees must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoonsData {
    pub source: Vec<ToyPoint>,
    pub target_labeled: Vec<ToyPoint>,
    /// Target points with their label hidden.
    pub target_unlabeled: Vec<ToyPoint>,
    /// True labels of `target_unlabeled`, for evaluation only.
    pub target_unlabeled_truth: Vec<f64>,
}

impl MoonsData {
    /// Every point used for training: labeled source, labeled target and
    /// unlabeled target.
    pub fn training_points(&self) -> Vec<ToyPoint> {
        let mut out = self.source.clone();
        out.extend_from_slice(&self.target_labeled);
        out.extend_from_slice(&self.target_unlabeled);
        out
    }

    /// All target points with their true labels.
    pub fn target_eval(&self) -> Vec<ToyPoint> {
        let mut out = self.target_labeled.clone();
        out.extend(self.target_unlabeled.iter().zip(&self.target_unlabeled_truth).map(|(p, &y)| ToyPoint {
            label: Some(y),
            ..*p
        }));
        out
    }
}

/// Rotates `p` by `degrees` counter-clockwise about `center`.
pub fn rotate(p: [f64; 2], center: [f64; 2], degrees: f64) -> [f64; 2] {
    let (s, c) = degrees.to_radians().sin_cos();
    let (x, y) = (p[0] - center[0], p[1] - center[1]);
    [center[0] + c * x - s * y, center[1] + s * x + c * y]
}

fn draw<R: Rng>(rng: &mut R, n: usize, noise: &Normal<f64>) -> Vec<([f64; 2], f64)> {
    let n_outer = n / 2;
    let mut out: Vec<([f64; 2], f64)> = (0..n)
        .map(|i| {
            let t = rng.random_range(0.0..std::f64::consts::PI);
            let (x, y, label) = if i < n_outer {
                (t.cos(), t.sin(), 0.0)
            } else {
                (1.0 - t.cos(), 0.5 - t.sin(), 1.0)
            };
            ([x + noise.sample(rng), y + noise.sample(rng)], label)
        })
        .collect();
    out.shuffle(rng);
    out
}

pub fn generate_moons(cfg: &MoonsConfig) -> Result<MoonsData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let source = draw(&mut rng, cfg.n_source, &noise)
        .into_iter()
        .map(|(x, y)| ToyPoint {
            x,
            label: Some(y),
            domain: Domain::Source,
        })
        .collect();
    let target = draw(&mut rng, cfg.n_target, &noise);
    let n_labeled = ((cfg.n_target as f64) * cfg.target_labeled_fraction).round() as usize;
    let mut data = MoonsData {
        source,
        target_labeled: Vec::new(),
        target_unlabeled: Vec::new(),
        target_unlabeled_truth: Vec::new(),
    };
    for (i, (x, y)) in target.into_iter().enumerate() {
        let x = rotate(x, MOONS_CENTROID, cfg.rotation_degrees);
        if i < n_labeled {
            data.target_labeled.push(ToyPoint {
                x,
                label: Some(y),
                domain: Domain::Target,
            });
        } else {
            data.target_unlabeled.push(ToyPoint {
                x,
                label: None,
                domain: Domain::Target,
            });
            data.target_unlabeled_truth.push(y);
        }
    }
    Ok(data)
}
