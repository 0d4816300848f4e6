use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::render::Observation;

/// Jitter strengths; a factor of 0 disables that component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl JitterFactors {
    pub const OFF: Self = Self { brightness: 0.0, contrast: 0.0, saturation: 0.0, hue: 0.0 };

    /// Observation-only jitter.
    pub fn observation() -> Self {
        Self { brightness: 0.2, contrast: 0.2, saturation: 0.2, hue: 0.05 }
    }

    /// Jitter shared by model and observation.
    pub fn joint() -> Self {
        Self { brightness: 0.5, contrast: 0.5, saturation: 0.5, hue: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.brightness, self.contrast, self.saturation, self.hue];
        if f.iter().any(|v| !(*v >= 0.0)) || self.contrast > 1.0 || self.saturation > 1.0 {
            return Err(Error::InvalidInput("jitter factors must be >= 0, contrast and saturation <= 1".into()));
        }
        Ok(())
    }

    pub fn is_off(&self) -> bool {
        *self == Self::OFF
    }
}

/// One sampled color change in HSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorPerturbation {
    /// Added to value.
    pub brightness: f64,
    /// Scales value about the observation's mean value.
    pub contrast: f64,
    /// Scales saturation.
    pub saturation: f64,
    /// Added to hue, wrapping.
    pub hue: f64,
}

impl ColorPerturbation {
    pub const IDENTITY: Self = Self { brightness: 0.0, contrast: 1.0, saturation: 1.0, hue: 0.0 };

    pub fn sample(f: &JitterFactors, rng: &mut impl Rng) -> Self {
        let mut sym = |a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
        Self {
            brightness: sym(f.brightness),
            contrast: 1.0 + sym(f.contrast),
            saturation: 1.0 + sym(f.saturation),
            hue: sym(f.hue),
        }
    }

    pub fn apply(&self, hsv: [f64; 3], value_mean: f64) -> [f64; 3] {
        let h = if self.hue == 0.0 { hsv[0] } else { (hsv[0] + self.hue).rem_euclid(1.0) };
        let s = if self.saturation == 1.0 { hsv[1] } else { (hsv[1] * self.saturation).clamp(0.0, 1.0) };
        let v = if self.contrast == 1.0 && self.brightness == 0.0 {
            hsv[2]
        } else {
            ((hsv[2] - value_mean) * self.contrast + value_mean + self.brightness).clamp(0.0, 1.0)
        };
        [h, s, v]
    }
}

fn mean_value(obs: &Observation) -> f64 {
    let n = obs.hsv.data.len().max(1) as f64;
    obs.hsv.data.iter().map(|c| c[2]).sum::<f64>() / n
}

fn apply_to_observation(obs: &mut Observation, p: &ColorPerturbation, mean: f64) {
    for c in &mut obs.hsv.data {
        *c = p.apply(*c, mean);
    }
}

/// Returns jittered copies. With a model, one perturbation drawn from
/// `joint` is applied to both model and observation (contrast about the
/// observation's mean value); then an observation-only perturbation is
/// drawn from `observation`.
pub fn color_jitter(
    obs: &Observation,
    model: Option<&PointCloud>,
    observation: &JitterFactors,
    joint: &JitterFactors,
    rng: &mut impl Rng,
) -> (Observation, Option<PointCloud>) {
    let mut out = obs.clone();
    let mut cloud = model.cloned();
    if let Some(c) = cloud.as_mut() {
        if !joint.is_off() {
            let p = ColorPerturbation::sample(joint, rng);
            let mean = mean_value(&out);
            apply_to_observation(&mut out, &p, mean);
            for hsv in &mut c.colors_hsv {
                *hsv = p.apply(*hsv, mean);
            }
        }
    }
    if !observation.is_off() {
        let p = ColorPerturbation::sample(observation, rng);
        let mean = mean_value(&out);
        apply_to_observation(&mut out, &p, mean);
    }
    if !observation.is_off() || (cloud.is_some() && !joint.is_off()) {
        out.sync_rgb_from_hsv();
    }
    (out, cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{featurize_batch, FeaturizeConfig};
    use crate::geom::{CameraIntrinsics, RigidTransform, Vec3};
    use crate::hypo::{HypothesisSource, PoseHypothesis};
    use crate::objmodel::{prepare_model, PrepareConfig, SymmetrySpec};
    use crate::render::{observation_from_rgbd, rasterize, RenderItem};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn self_render() -> (Observation, PointCloud, RigidTransform) {
        let k = CameraIntrinsics::new(300.0, 300.0, 159.5, 119.5, 320, 240).unwrap();
        let cat = crate::shapes::catalog();
        let mesh = &cat[0].mesh;
        let model = prepare_model(1, mesh, &SymmetrySpec::none(), &PrepareConfig::default()).unwrap();
        let gt = RigidTransform::from_translation(Vec3::new(0.0, 0.01, 0.45))
            .compose(&RigidTransform::from_axis_angle(&Vec3::new(1.0, 0.5, 0.2).normalize(), 0.8));
        let out = rasterize(&[RenderItem { mesh, pose: gt, object_id: Some(1) }], &k, None);
        (observation_from_rgbd(out.rgb, out.depth, &k).unwrap(), model.cloud, gt)
    }

    #[test]
    fn zero_factors_are_identity() {
        let (obs, cloud, _) = self_render();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (o, c) = color_jitter(&obs, Some(&cloud), &JitterFactors::OFF, &JitterFactors::OFF, &mut rng);
        assert_eq!(o.hsv, obs.hsv);
        assert_eq!(o.rgb, obs.rgb);
        assert_eq!(c.unwrap(), cloud);
    }

    #[test]
    fn same_seed_same_output() {
        let (obs, cloud, _) = self_render();
        let f = JitterFactors::observation();
        let j = JitterFactors::joint();
        let a = color_jitter(&obs, Some(&cloud), &f, &j, &mut ChaCha8Rng::seed_from_u64(5));
        let b = color_jitter(&obs, Some(&cloud), &f, &j, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a.0.hsv, b.0.hsv);
        assert_eq!(a.1, b.1);
        assert_ne!(a.0.hsv, obs.hsv);
        for c in &a.0.hsv.data {
            assert!((0.0..1.0).contains(&c[0]) && (0.0..=1.0).contains(&c[1]) && (0.0..=1.0).contains(&c[2]));
        }
    }

    #[test]
    fn joint_jitter_preserves_hue_differences() {
        let (obs, cloud, gt) = self_render();
        let h = [PoseHypothesis::new(gt, HypothesisSource::InjectedGt, 0.0)];
        let cfg = FeaturizeConfig::default();
        let before = featurize_batch(&cloud, &h, &obs, &cfg).remove(0);
        for seed in 0..10 {
            let (o, c) = color_jitter(&obs, Some(&cloud), &JitterFactors::OFF, &JitterFactors::joint(), &mut ChaCha8Rng::seed_from_u64(seed));
            let after = featurize_batch(&c.unwrap(), &h, &o, &cfg).remove(0);
            assert_eq!(before.len(), after.len());
            for (a, b) in before.rows.iter().zip(&after.rows) {
                let d = (a[2] - b[2]).abs();
                assert!(d.min(1.0 - d) < 1e-9, "{} vs {}", a[2], b[2]);
            }
        }
    }

    #[test]
    fn hue_shift_wraps() {
        let p = ColorPerturbation { hue: 0.3, ..ColorPerturbation::IDENTITY };
        let out = p.apply([0.9, 0.5, 0.5], 0.5);
        assert!((out[0] - 0.2).abs() < 1e-12);
        let p = ColorPerturbation { brightness: 0.8, contrast: 1.5, ..ColorPerturbation::IDENTITY };
        assert_eq!(p.apply([0.1, 0.5, 0.9], 0.5)[2], 1.0);
    }
}
