//! Image preprocessing and training-time augmentation.
//!
//! Geometry is fixed and deterministic: bilinear resampling maps output
//! pixel centers back through `(dst + 0.5) * scale - 0.5`, rotation
//! inverse-maps about the image center with black outside the frame, and
//! cardinal angles (multiples of 90) use exact trigonometric constants so
//! they permute pixels without resampling error. Augmentation consumes
//! exactly three PRNG draws per image — flip, flip, angle — regardless of
//! which transforms fire, so streams stay aligned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Default border threshold: pixels whose channel mean is at or below this
/// count as border.
pub const DEFAULT_BORDER_THRESHOLD: u8 = 15;

/// Crops to the bounding box of pixels whose channel mean exceeds
/// `threshold`. Returns the image unchanged when nothing exceeds it.
pub fn crop_black_border(image: &Image, threshold: u8) -> Image {
    let (w, h) = (image.width(), image.height());
    let mut x0 = w;
    let mut y0 = h;
    let mut x1 = 0usize;
    let mut y1 = 0usize;
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = image.rgb(x, y);
            let mean = (r as f64 + g as f64 + b as f64) / 3.0;
            if mean > threshold as f64 {
                any = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if !any {
        return image.clone();
    }
    let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut data = Vec::with_capacity(cw * ch * 3);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (r, g, b) = image.rgb(x, y);
            data.extend_from_slice(&[r, g, b]);
        }
    }
    Image::new(cw, ch, data).expect("crop box lies inside the image")
}

/// Rounds a non-negative sample to u8, halves up.
#[inline]
fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear resize. Output pixel centers map to
/// `(dst + 0.5) * src/dst - 0.5`, clamped into the source frame.
pub fn resize_bilinear(image: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be >= 1, got {out_w}x{out_h}"
        )));
    }
    let (sw, sh) = (image.width(), image.height());
    let scale_x = sw as f64 / out_w as f64;
    let scale_y = sh as f64 / out_h as f64;
    let mut data = Vec::with_capacity(out_w * out_h * 3);
    for y in 0..out_h {
        let sy = ((y as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = ((x as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f64;
            for ch in 0..3 {
                let at = |px: usize, py: usize| -> f64 {
                    let (r, g, b) = image.rgb(px, py);
                    [r, g, b][ch] as f64
                };
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                data.push(quantize(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Image::new(out_w, out_h, data)
}

/// Mirrors left-right.
pub fn hflip(image: &Image) -> Image {
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            out.set_rgb(x, y, image.rgb(w - 1 - x, y));
        }
    }
    out
}

/// Mirrors top-bottom.
pub fn vflip(image: &Image) -> Image {
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            out.set_rgb(x, y, image.rgb(x, h - 1 - y));
        }
    }
    out
}

/// Sine and cosine of the rotation, exact for cardinal angles so those
/// rotations are pure pixel permutations.
fn rotation_trig(degrees: f64) -> (f64, f64) {
    let r = degrees.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        let rad = r.to_radians();
        (rad.sin(), rad.cos())
    }
}

/// Rotates about the image center, sampling bilinearly from the source;
/// positive angles turn the content clockwise on screen. Destinations that
/// map outside the frame become black.
pub fn rotate(image: &Image, degrees: f64) -> Image {
    let (w, h) = (image.width(), image.height());
    let (sin, cos) = rotation_trig(degrees);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = Image::filled(w, h, (0, 0, 0)).expect("same dimensions as input");
    for y in 0..h {
        for x in 0..w {
            // Inverse rotation of the destination offset.
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            if sx < 0.0 || sx > (w - 1) as f64 || sy < 0.0 || sy > (h - 1) as f64 {
                continue;
            }
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            let mut rgb = [0u8; 3];
            for ch in 0..3 {
                let at = |px: usize, py: usize| -> f64 {
                    let (r, g, b) = image.rgb(px, py);
                    [r, g, b][ch] as f64
                };
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                rgb[ch] = quantize(top * (1.0 - fy) + bottom * fy);
            }
            out.set_rgb(x, y, (rgb[0], rgb[1], rgb[2]));
        }
    }
    out
}

/// Converts to a (3, H, W) tensor with samples scaled into [0, 1].
pub fn to_tensor(image: &Image) -> Tensor {
    let (w, h) = (image.width(), image.height());
    let mut data = Vec::with_capacity(3 * h * w);
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let (r, g, b) = image.rgb(x, y);
                data.push([r, g, b][ch] as f64 / 255.0);
            }
        }
    }
    Tensor::new(&[3, h, w], data).expect("dimensions taken from the image")
}

fn default_flip_prob() -> f64 {
    0.5
}
fn default_rotate_degrees() -> f64 {
    25.0
}

/// Random augmentation policy applied during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    #[serde(default = "default_flip_prob")]
    pub hflip_prob: f64,
    #[serde(default = "default_flip_prob")]
    pub vflip_prob: f64,
    /// Rotation angle bound: angles are uniform in [-r, +r] degrees.
    #[serde(default = "default_rotate_degrees")]
    pub rotate_degrees: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            hflip_prob: default_flip_prob(),
            vflip_prob: default_flip_prob(),
            rotate_degrees: default_rotate_degrees(),
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("hflip_prob", self.hflip_prob), ("vflip_prob", self.vflip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in [0, 1], got {p}"
                )));
            }
        }
        if !self.rotate_degrees.is_finite() || self.rotate_degrees < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rotate_degrees must be finite and >= 0, got {}",
                self.rotate_degrees
            )));
        }
        Ok(())
    }
}

/// Applies one random augmentation: maybe horizontal flip, maybe vertical
/// flip, then a rotation by a uniform angle in [-r, +r]. Always consumes
/// exactly three draws from `rng`.
pub fn augment(image: &Image, policy: &AugmentPolicy, rng: &mut Rng) -> Image {
    let mut out = image.clone();
    if rng.next_f64() < policy.hflip_prob {
        out = hflip(&out);
    }
    if rng.next_f64() < policy.vflip_prob {
        out = vflip(&out);
    }
    let angle = (2.0 * rng.next_f64() - 1.0) * policy.rotate_degrees;
    rotate(&out, angle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(v: u8) -> (u8, u8, u8) {
        (v, v, v)
    }

    #[test]
    fn crop_finds_the_bright_bounding_box() {
        let mut img = Image::filled(5, 5, gray(0)).unwrap();
        img.set_rgb(1, 2, gray(100));
        img.set_rgb(3, 3, gray(40));
        let cropped = crop_black_border(&img, 15);
        assert_eq!((cropped.width(), cropped.height()), (3, 2));
        assert_eq!(cropped.rgb(0, 0), gray(100));
        assert_eq!(cropped.rgb(2, 1), gray(40));
    }

    #[test]
    fn crop_threshold_is_strict() {
        // Channel mean exactly at the threshold still counts as border.
        let mut img = Image::filled(3, 1, gray(0)).unwrap();
        img.set_rgb(1, 0, gray(15));
        assert_eq!(crop_black_border(&img, 15), img);
        // One step above gets kept.
        img.set_rgb(1, 0, gray(16));
        let cropped = crop_black_border(&img, 15);
        assert_eq!((cropped.width(), cropped.height()), (1, 1));
    }

    #[test]
    fn crop_of_fractional_mean_uses_exact_arithmetic() {
        // Mean 15.33 exceeds 15 even though integer division would say 15.
        let mut img = Image::filled(2, 1, gray(0)).unwrap();
        img.set_rgb(1, 0, (16, 15, 15));
        let cropped = crop_black_border(&img, 15);
        assert_eq!((cropped.width(), cropped.height()), (1, 1));
    }

    #[test]
    fn upscale_matches_the_hand_computed_ramp() {
        let img = Image::new(2, 1, vec![0, 0, 0, 255, 255, 255]).unwrap();
        let out = resize_bilinear(&img, 4, 1).unwrap();
        let values: Vec<u8> = (0..4).map(|x| out.rgb(x, 0).0).collect();
        assert_eq!(values, [0, 64, 191, 255]);
    }

    #[test]
    fn downscale_averages_neighbor_pairs() {
        let img = Image::new(4, 1, vec![0, 0, 0, 64, 64, 64, 191, 191, 191, 255, 255, 255])
            .unwrap();
        let out = resize_bilinear(&img, 2, 1).unwrap();
        assert_eq!(out.rgb(0, 0).0, 32);
        assert_eq!(out.rgb(1, 0).0, 223);
    }

    #[test]
    fn identity_resize_copies_pixels() {
        let img = Image::new(3, 2, (0..18).collect()).unwrap();
        assert_eq!(resize_bilinear(&img, 3, 2).unwrap(), img);
    }

    #[test]
    fn flips_are_involutions() {
        let img = Image::new(3, 2, (0..18).collect()).unwrap();
        assert_eq!(hflip(&hflip(&img)), img);
        assert_eq!(vflip(&vflip(&img)), img);
        assert_eq!(hflip(&img).rgb(0, 0), img.rgb(2, 0));
        assert_eq!(vflip(&img).rgb(0, 0), img.rgb(0, 1));
    }

    #[test]
    fn cardinal_rotations_permute_pixels_exactly() {
        let img = Image::new(2, 2, (0..12).collect()).unwrap();
        assert_eq!(rotate(&img, 0.0), img);
        assert_eq!(rotate(&img, 360.0), img);

        let r90 = rotate(&img, 90.0);
        assert_eq!(r90.rgb(0, 0), img.rgb(0, 1));
        assert_eq!(r90.rgb(1, 0), img.rgb(0, 0));
        assert_eq!(r90.rgb(1, 1), img.rgb(1, 0));
        assert_eq!(r90.rgb(0, 1), img.rgb(1, 1));

        // 180 degrees equals the two flips composed, on any aspect ratio.
        let rect = Image::new(3, 2, (100..118).collect()).unwrap();
        assert_eq!(rotate(&rect, 180.0), hflip(&vflip(&rect)));
        assert_eq!(rotate(&rect, -180.0), rotate(&rect, 180.0));

        // Four quarter turns come home exactly.
        let mut turned = img.clone();
        for _ in 0..4 {
            turned = rotate(&turned, 90.0);
        }
        assert_eq!(turned, img);
    }

    #[test]
    fn oblique_rotation_keeps_center_and_blanks_corners() {
        let img = Image::filled(9, 9, gray(200)).unwrap();
        let out = rotate(&img, 45.0);
        assert_eq!(out.rgb(4, 4), gray(200));
        // Corners leave the frame and come back black.
        assert_eq!(out.rgb(0, 0), gray(0));
        assert_eq!(out.rgb(8, 8), gray(0));
    }

    #[test]
    fn to_tensor_is_chw_and_unit_scaled() {
        let mut img = Image::filled(2, 2, (0, 0, 0)).unwrap();
        img.set_rgb(1, 0, (255, 51, 0));
        let t = to_tensor(&img);
        assert_eq!(t.shape(), &[3, 2, 2]);
        // Channel-major layout: element (c, y, x) lives at c*4 + y*2 + x.
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[4 + 1], 0.2);
        assert_eq!(t.data()[8 + 1], 0.0);
    }

    #[test]
    fn augment_consumes_exactly_three_draws() {
        let img = Image::new(4, 4, (0..48).collect()).unwrap();
        let policy = AugmentPolicy::default();
        let mut used = Rng::new(77);
        augment(&img, &policy, &mut used);
        let mut reference = Rng::new(77);
        for _ in 0..3 {
            reference.next_f64();
        }
        assert_eq!(used.next_u64(), reference.next_u64());

        // Zero probabilities and zero angle still burn three draws.
        let inert = AugmentPolicy {
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            rotate_degrees: 0.0,
        };
        let mut used = Rng::new(78);
        let out = augment(&img, &inert, &mut used);
        assert_eq!(out, img);
        let mut reference = Rng::new(78);
        for _ in 0..3 {
            reference.next_f64();
        }
        assert_eq!(used.next_u64(), reference.next_u64());
    }

    #[test]
    fn augment_is_deterministic_per_seed() {
        let img = Image::new(6, 6, (0..108).collect()).unwrap();
        let policy = AugmentPolicy::default();
        let a = augment(&img, &policy, &mut Rng::new(5));
        let b = augment(&img, &policy, &mut Rng::new(5));
        assert_eq!(a, b);
    }

    #[test]
    fn policy_validation_rejects_bad_ranges() {
        assert!(AugmentPolicy::default().validate().is_ok());
        assert!(AugmentPolicy {
            hflip_prob: 1.5,
            ..AugmentPolicy::default()
        }
        .validate()
        .is_err());
        assert!(AugmentPolicy {
            rotate_degrees: -1.0,
            ..AugmentPolicy::default()
        }
        .validate()
        .is_err());
    }
}
