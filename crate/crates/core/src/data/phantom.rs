//! Synthetic grayscale "MR" phantoms with controlled lesion patterns.
//!
//! Every image is a smooth low-frequency background plus Gaussian noise.
//! Tumor images add bright soft-edged ellipses: one large lesion for the
//! primary class, two to four small ones for the secondary class.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{write_manifest, write_pgm, GrayImage, SampleRecord, SourceType};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomClass {
    None,
    Primary,
    Secondary,
}

impl PhantomClass {
    pub const ALL: [PhantomClass; 3] = [PhantomClass::None, PhantomClass::Primary, PhantomClass::Secondary];

    fn source_type(self) -> SourceType {
        match self {
            PhantomClass::None => SourceType::None,
            PhantomClass::Primary => SourceType::Primary,
            PhantomClass::Secondary => SourceType::Secondary,
        }
    }

    fn class_name(self) -> &'static str {
        match self {
            PhantomClass::None => "no tumor",
            PhantomClass::Primary => "solitary lesion",
            PhantomClass::Secondary => "multiple lesions",
        }
    }
}

impl std::fmt::Display for PhantomClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.source_type().fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhantomConfig {
    pub none: usize,
    pub primary: usize,
    pub secondary: usize,
    pub size: usize,
    pub seed: u64,
    /// Consecutive images of one class share a patient id in blocks of
    /// this size.
    pub images_per_patient: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            none: 100,
            primary: 100,
            secondary: 100,
            size: 64,
            seed: 7,
            images_per_patient: 5,
        }
    }
}

impl PhantomConfig {
    pub fn count(&self, class: PhantomClass) -> usize {
        match class {
            PhantomClass::None => self.none,
            PhantomClass::Primary => self.primary,
            PhantomClass::Secondary => self.secondary,
        }
    }

    pub fn total(&self) -> usize {
        self.none + self.primary + self.secondary
    }

    fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::Config(format!("phantom size {} must be at least 8", self.size)));
        }
        if self.images_per_patient == 0 {
            return Err(Error::Config("images_per_patient must be at least 1".into()));
        }
        Ok(())
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    gain: f64,
}

impl Ellipse {
    fn random<R: Rng>(rng: &mut R, size: f64, radius: (f64, f64), margin: f64) -> Self {
        let a = rng.random_range(radius.0..radius.1) * size;
        let b = rng.random_range(radius.0..radius.1) * size;
        Ellipse {
            cx: rng.random_range(margin..1.0 - margin) * size,
            cy: rng.random_range(margin..1.0 - margin) * size,
            a,
            b,
            angle: rng.random_range(0.0..PI),
            gain: rng.random_range(0.35..0.5),
        }
    }

    fn reach(&self) -> f64 {
        self.a.max(self.b)
    }

    /// Soft indicator: ~1 inside, ~0 outside, logistic edge.
    fn weight(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (c * dx + s * dy) / self.a;
        let v = (-s * dx + c * dy) / self.b;
        let d = (u * u + v * v).sqrt();
        1.0 / (1.0 + ((d - 1.0) * 6.0).exp())
    }
}

/// Render one phantom. Pure function of its arguments.
pub fn render_phantom(class: PhantomClass, size: usize, seed: u64, index: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let s = size as f64;

    // integer frequencies keep the background's image mean exactly at `base`
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let (kx, ky) = loop {
                let k = (rng.random_range(-2i32..=2), rng.random_range(-2i32..=2));
                if k != (0, 0) {
                    break k;
                }
            };
            (
                kx as f64,
                ky as f64,
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.02..0.05),
            )
        })
        .collect();
    let base = rng.random_range(0.30..0.31);

    let lesions: Vec<Ellipse> = match class {
        PhantomClass::None => Vec::new(),
        PhantomClass::Primary => vec![Ellipse::random(&mut rng, s, (0.15, 0.22), 0.3)],
        PhantomClass::Secondary => {
            let count = rng.random_range(2..=4);
            let mut placed: Vec<Ellipse> = Vec::with_capacity(count);
            let mut attempts = 0;
            while placed.len() < count && attempts < 200 {
                attempts += 1;
                let e = Ellipse::random(&mut rng, s, (0.05, 0.08), 0.15);
                let clear = placed.iter().all(|p| {
                    let d = ((p.cx - e.cx).powi(2) + (p.cy - e.cy).powi(2)).sqrt();
                    d > p.reach() + e.reach() + 0.05 * s
                });
                if clear {
                    placed.push(e);
                }
            }
            placed
        }
    };

    let noise = Normal::new(0.0, 0.04).expect("valid std");
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
            let mut v = base;
            for &(kx, ky, phase, amp) in &waves {
                v += amp * (2.0 * PI * (kx * fx + ky * fy) + phase).cos();
            }
            for e in &lesions {
                v += e.gain * e.weight(x as f64 + 0.5, y as f64 + 0.5);
            }
            v += noise.sample(&mut rng);
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    GrayImage {
        width: size,
        height: size,
        pixels,
    }
}

/// Render the full phantom set in memory, ordered none, primary, secondary.
/// Image paths are bare file names.
pub fn render_phantoms(cfg: &PhantomConfig) -> Result<Vec<(SampleRecord, GrayImage)>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.total());
    let mut index = 0u64;
    for class in PhantomClass::ALL {
        let tag = class.source_type().to_string();
        for i in 0..cfg.count(class) {
            let record = SampleRecord {
                image_path: format!("{tag}_{i:04}.pgm").into(),
                patient_id: format!("{tag}-p{:03}", i / cfg.images_per_patient),
                tumor_present: class != PhantomClass::None,
                source_type: class.source_type(),
                class_name: class.class_name().to_string(),
            };
            out.push((record, render_phantom(class, cfg.size, cfg.seed, index)));
            index += 1;
        }
    }
    Ok(out)
}

/// Write every phantom plus `manifest.csv` into `dir`, returning the records.
pub fn generate_phantoms(cfg: &PhantomConfig, dir: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut records = Vec::with_capacity(cfg.total());
    for (record, image) in render_phantoms(cfg)? {
        write_pgm(dir.join(&record.image_path), &image)?;
        records.push(record);
    }
    write_manifest(dir.join("manifest.csv"), &records)?;
    Ok(records)
}
