//! Rotation augmentation: cut the square inscribed in the image's largest
//! inscribed circle, rotated by `theta`, and resample it axis-aligned.
//!
//! With centre `c = (w/2, h/2)` and radius `r = min(w, h)/2` the square's
//! corners are `c + r * (cos phi, sin phi)` for `phi = theta + 45deg + k*90deg`
//! in pixel coordinates (x right, y down). Output pixel centres map back to
//! the source by the similarity `c + R(theta) * offset`, so corner `k = 0`
//! lands on the output's bottom-right corner, `k = 1` bottom-left, `k = 2`
//! top-left and `k = 3` top-right. At `theta = 0` the output is the plain
//! centred crop.
//!
//! The rotation is split into whole quarter turns, applied exactly by swapping
//! and negating, and a residual angle in `[0, 90deg)`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentError {
    #[error("raster {width}x{height} is too small (need at least 2x2)")]
    Degenerate { width: usize, height: usize },
    #[error("rotation angle must be finite")]
    BadAngle,
    #[error("output size must be >= 1")]
    ZeroOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Nearest,
    #[default]
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationCrop {
    /// Radians in `[0, 2pi)`.
    pub theta: f64,
    pub out_size: usize,
    pub sampling: Sampling,
}

impl RotationCrop {
    pub fn new(theta: f64, out_size: usize, sampling: Sampling) -> Result<Self, AugmentError> {
        if !theta.is_finite() {
            return Err(AugmentError::BadAngle);
        }
        if out_size == 0 {
            return Err(AugmentError::ZeroOutput);
        }
        Ok(RotationCrop {
            theta: theta.rem_euclid(TAU),
            out_size,
            sampling,
        })
    }

    /// Scale-preserving output size: `round(r * sqrt(2))`.
    pub fn default_out_size(width: usize, height: usize) -> usize {
        let r = width.min(height) as f64 / 2.0;
        ((r * SQRT_2).round() as usize).max(1)
    }

    pub fn random_theta<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        rng.random_range(0.0..TAU)
    }

    /// Uniform angle drawn from a ChaCha8 stream seeded with `seed`.
    pub fn seeded_theta(seed: u64) -> f64 {
        RotationCrop::random_theta(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// Exact quarter turns plus the sine and cosine of the residual angle.
#[derive(Debug, Clone, Copy)]
struct Rotation {
    quarter_turns: u8,
    cos: f64,
    sin: f64,
}

impl Rotation {
    fn new(theta: f64) -> Self {
        let theta = theta.rem_euclid(TAU);
        let mut q = (theta / FRAC_PI_2).floor();
        let mut rest = theta - q * FRAC_PI_2;
        if rest < 1e-12 {
            rest = 0.0;
        } else if FRAC_PI_2 - rest < 1e-12 {
            rest = 0.0;
            q += 1.0;
        }
        Rotation {
            quarter_turns: (q as i64).rem_euclid(4) as u8,
            cos: rest.cos(),
            sin: rest.sin(),
        }
    }

    fn apply(&self, a: f64, b: f64) -> (f64, f64) {
        let (mut x, mut y) = (a * self.cos - b * self.sin, a * self.sin + b * self.cos);
        for _ in 0..self.quarter_turns {
            (x, y) = (-y, x);
        }
        (x, y)
    }
}

fn center_radius(width: usize, height: usize) -> ((f64, f64), f64) {
    (
        (width as f64 / 2.0, height as f64 / 2.0),
        width.min(height) as f64 / 2.0,
    )
}

/// Corners of the rotated inscribed square, `k = 0..3` counter-clockwise in
/// angle starting at `theta + 45deg`. The square's side is `r * sqrt(2)`.
pub fn inscribed_square_corners(width: usize, height: usize, theta: f64) -> [(f64, f64); 4] {
    let ((cx, cy), r) = center_radius(width, height);
    std::array::from_fn(|k| {
        let phi = theta + FRAC_PI_4 + k as f64 * FRAC_PI_2;
        (cx + r * phi.cos(), cy + r * phi.sin())
    })
}

/// Offset of output pixel `i` from the square's centre along one axis. Uses
/// the odd integer `2i + 1 - n` so mirrored pixels get exactly negated offsets.
fn offset(i: usize, n: usize, side: f64) -> f64 {
    (2 * i as i64 + 1 - n as i64) as f64 * side / (2 * n) as f64
}

/// Continuous source coordinate sampled for output pixel `(u, v)`.
pub fn source_point(width: usize, height: usize, cfg: &RotationCrop, u: usize, v: usize) -> (f64, f64) {
    let ((cx, cy), r) = center_radius(width, height);
    let side = r * SQRT_2;
    let rot = Rotation::new(cfg.theta);
    let (dx, dy) = rot.apply(offset(u, cfg.out_size, side), offset(v, cfg.out_size, side));
    (cx + dx, cy + dy)
}

pub fn rotated_crop(raster: &Raster, cfg: &RotationCrop) -> Result<Raster, AugmentError> {
    let (w, h, ch) = (raster.width(), raster.height(), raster.channels());
    if w < 2 || h < 2 {
        return Err(AugmentError::Degenerate { width: w, height: h });
    }
    if cfg.out_size == 0 {
        return Err(AugmentError::ZeroOutput);
    }
    let ((cx, cy), r) = center_radius(w, h);
    let side = r * SQRT_2;
    let rot = Rotation::new(cfg.theta);
    let n = cfg.out_size;
    let offsets: Vec<f64> = (0..n).map(|i| offset(i, n, side)).collect();

    let inside = |i: i64, j: i64| {
        i >= 0
            && j >= 0
            && (i as usize) < w
            && (j as usize) < h
            && (i as f64 + 0.5 - cx).hypot(j as f64 + 0.5 - cy) <= r
    };

    let mut out = vec![0u8; n * n * ch];
    let mut acc = vec![0.0f64; ch];
    for (v, &b) in offsets.iter().enumerate() {
        for (u, &a) in offsets.iter().enumerate() {
            let (dx, dy) = rot.apply(a, b);
            let (x, y) = (cx + dx, cy + dy);
            let dst = &mut out[(v * n + u) * ch..(v * n + u + 1) * ch];
            let nearest = || {
                let xi = (x.floor() as i64).clamp(0, w as i64 - 1) as usize;
                let yi = (y.floor() as i64).clamp(0, h as i64 - 1) as usize;
                raster.pixel(xi, yi)
            };
            match cfg.sampling {
                Sampling::Nearest => dst.copy_from_slice(nearest()),
                Sampling::Bilinear => {
                    // pixel centres sit at half-integers
                    let (px, py) = (x - 0.5, y - 0.5);
                    let (x0, y0) = (px.floor() as i64, py.floor() as i64);
                    let (fx, fy) = (px - x0 as f64, py - y0 as f64);
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    let mut wsum = 0.0;
                    for (i, j, wt) in [
                        (x0, y0, (1.0 - fx) * (1.0 - fy)),
                        (x0 + 1, y0, fx * (1.0 - fy)),
                        (x0, y0 + 1, (1.0 - fx) * fy),
                        (x0 + 1, y0 + 1, fx * fy),
                    ] {
                        if wt > 0.0 && inside(i, j) {
                            wsum += wt;
                            for (a, &s) in acc.iter_mut().zip(raster.pixel(i as usize, j as usize)) {
                                *a += wt * s as f64;
                            }
                        }
                    }
                    if wsum > 0.0 {
                        for (d, a) in dst.iter_mut().zip(&acc) {
                            *d = (a / wsum).round().clamp(0.0, 255.0) as u8;
                        }
                    } else {
                        dst.copy_from_slice(nearest());
                    }
                }
            }
        }
    }
    Ok(Raster::new(n, n, ch, out).expect("output dimensions are consistent"))
}
