use serde::{Deserialize, Serialize};

use super::{
    color_jitter, horizontal_flip, normalize_channels, resize_bilinear, rotate, to_unit_tensor, ImageError,
    RasterImage, SeededRng, Tensor3, IMAGENET_MEAN, IMAGENET_STD,
};

/// Ranges of the training-time augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub flip_probability: f64,
    /// Maximum absolute rotation in degrees.
    pub rotation_limit: f64,
    pub brightness_jitter: f64,
    pub contrast_jitter: f64,
    pub saturation_jitter: f64,
    /// Maximum absolute hue shift in turns.
    pub hue_jitter: f64,
    pub target_size: usize,
    pub channel_mean: [f32; 3],
    pub channel_std: [f32; 3],
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            rotation_limit: 10.0,
            brightness_jitter: 0.2,
            contrast_jitter: 0.2,
            saturation_jitter: 0.2,
            hue_jitter: 0.1,
            target_size: 224,
            channel_mean: IMAGENET_MEAN,
            channel_std: IMAGENET_STD,
        }
    }
}

impl AugmentPolicy {
    /// Policy that only resizes and normalises.
    pub fn identity(target_size: usize) -> Self {
        Self {
            flip_probability: 0.0,
            rotation_limit: 0.0,
            brightness_jitter: 0.0,
            contrast_jitter: 0.0,
            saturation_jitter: 0.0,
            hue_jitter: 0.0,
            target_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(format!("flip_probability {} outside [0, 1]", self.flip_probability));
        }
        if !(0.0..=45.0).contains(&self.rotation_limit) {
            return Err(format!("rotation_limit {} outside [0, 45]", self.rotation_limit));
        }
        for (name, j) in [
            ("brightness_jitter", self.brightness_jitter),
            ("contrast_jitter", self.contrast_jitter),
            ("saturation_jitter", self.saturation_jitter),
        ] {
            if !(0.0..1.0).contains(&j) {
                return Err(format!("{name} {j} outside [0, 1)"));
            }
        }
        if !(0.0..=0.5).contains(&self.hue_jitter) {
            return Err(format!("hue_jitter {} outside [0, 0.5]", self.hue_jitter));
        }
        if self.target_size == 0 {
            return Err("target_size must be positive".into());
        }
        if self.channel_std.iter().any(|&s| s <= 0.0) {
            return Err("channel_std components must be positive".into());
        }
        Ok(())
    }

    /// Draws the per-image parameters. Order is fixed: flip coin, rotation angle,
    /// then brightness, contrast, saturation and hue factors. All six values are
    /// drawn even when a range is degenerate so the stream layout never changes.
    pub fn draw(&self, rng: &mut SeededRng) -> AugmentDraw {
        let flip = rng.bernoulli(self.flip_probability);
        let angle = rng.uniform(-self.rotation_limit, self.rotation_limit);
        let brightness = rng.uniform(1.0 - self.brightness_jitter, 1.0 + self.brightness_jitter);
        let contrast = rng.uniform(1.0 - self.contrast_jitter, 1.0 + self.contrast_jitter);
        let saturation = rng.uniform(1.0 - self.saturation_jitter, 1.0 + self.saturation_jitter);
        let hue = rng.uniform(-self.hue_jitter, self.hue_jitter);
        AugmentDraw {
            flip,
            angle,
            brightness,
            contrast,
            saturation,
            hue,
        }
    }
}

/// Concrete parameters drawn for one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub angle: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl AugmentDraw {
    /// flip -> rotate -> colour jitter -> resize.
    pub fn apply(&self, img: &RasterImage, target_size: usize) -> RasterImage {
        let geometric = if self.flip || self.angle != 0.0 {
            let mut t = to_unit_tensor(img);
            if self.flip {
                t = horizontal_flip(&t);
            }
            t = rotate(&t, self.angle);
            t.to_raster()
        } else {
            img.clone()
        };
        let jittered = color_jitter(&geometric, self.brightness, self.contrast, self.saturation, self.hue);
        resize_bilinear(&jittered, target_size, target_size)
    }
}

/// Augmented image before tensor conversion.
pub fn augment_raster(img: &RasterImage, mut rng: SeededRng, policy: &AugmentPolicy) -> RasterImage {
    policy.draw(&mut rng).apply(img, policy.target_size)
}

/// Full training transform: augmentation followed by unit scaling and channel
/// normalisation. A pure function of `(img, rng seed, policy)`.
pub fn augment(img: &RasterImage, rng: SeededRng, policy: &AugmentPolicy) -> Result<Tensor3, ImageError> {
    let raster = augment_raster(img, rng, policy);
    normalize_channels(&to_unit_tensor(&raster), policy.channel_mean, policy.channel_std)
}

/// Evaluation transform: resize, unit scaling, channel normalisation.
pub fn eval_transform(img: &RasterImage, policy: &AugmentPolicy) -> Result<Tensor3, ImageError> {
    let resized = resize_bilinear(img, policy.target_size, policy.target_size);
    normalize_channels(&to_unit_tensor(&resized), policy.channel_mean, policy.channel_std)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: u64) -> RasterImage {
        let mut rng = SeededRng::new(seed);
        RasterImage::from_fn(40, 30, |x, y| {
            let n = (rng.next_f64() * 40.0) as usize;
            [((x * 6 + n) % 256) as u8, ((y * 8 + n) % 256) as u8, ((x * y) % 256) as u8]
        })
    }

    #[test]
    fn degenerate_policy_is_resize_and_normalize() {
        let img = textured(1);
        let policy = AugmentPolicy::identity(32);
        let a = augment(&img, SeededRng::new(9), &policy).unwrap();
        let b = eval_transform(&img, &policy).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let img = textured(2);
        let policy = AugmentPolicy {
            target_size: 48,
            ..AugmentPolicy::default()
        };
        let a = augment(&img, SeededRng::new(5), &policy).unwrap();
        let b = augment(&img, SeededRng::new(5), &policy).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn different_seeds_differ() {
        let img = textured(3);
        let policy = AugmentPolicy {
            target_size: 48,
            ..AugmentPolicy::default()
        };
        let a = augment(&img, SeededRng::new(1), &policy).unwrap();
        let b = augment(&img, SeededRng::new(2), &policy).unwrap();
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn draws_respect_ranges() {
        let policy = AugmentPolicy::default();
        let mut rng = SeededRng::new(11);
        let mut flips = 0;
        for _ in 0..2000 {
            let d = policy.draw(&mut rng);
            flips += d.flip as usize;
            assert!(d.angle.abs() <= 10.0);
            for f in [d.brightness, d.contrast, d.saturation] {
                assert!((0.8..=1.2).contains(&f));
            }
            assert!(d.hue.abs() <= 0.1);
        }
        assert!((800..1200).contains(&flips), "{flips}");
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentPolicy::default().validate().is_ok());
        let bad = AugmentPolicy {
            flip_probability: 1.5,
            ..AugmentPolicy::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentPolicy {
            contrast_jitter: 1.0,
            ..AugmentPolicy::default()
        };
        assert!(bad.validate().is_err());
    }
}
