//! Seeded synthetic dataset: soft-sphere "nodules" on noisy air. Label
//! follows diameter plus noise (bigger means malignant), and the texture
//! inside the sphere is rougher for malignant nodules so the ambiguous
//! mid-range sizes stay learnable but hard.

use super::{CtVolume, Label, NoduleRecord};
use crate::error::{ProcanError, Result};
use crate::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const TISSUE_HU: f64 = 40.0;
const BG_NOISE_HU: f64 = 30.0;
const EDGE_MM: f64 = 0.75;
const LABEL_NOISE_MM: f64 = 1.5;
const LABEL_CUT_MM: f64 = 10.0;

/// Generate `n` records at 1 mm isotropic spacing. `size` is the cube
/// side the pipeline will crop (16 or 32); the stored volume carries a
/// margin around it. Each record derives its own rng stream, so the
/// dataset is reproducible and order-independent.
pub fn gen_synthetic(n: usize, seed: u64, size: usize) -> Result<Vec<NoduleRecord>> {
    if n < 20 {
        return Err(ProcanError::config(format!(
            "synthetic dataset needs n >= 20 for a stratified split, got {n}"
        )));
    }
    if size != 16 && size != 32 {
        return Err(ProcanError::config(format!(
            "synthetic cube size must be 16 or 32, got {size}"
        )));
    }
    let dim = size + size / 2;
    let bg_noise = Normal::new(0.0, BG_NOISE_HU).expect("valid normal");
    let label_noise = Normal::new(0.0, LABEL_NOISE_MM).expect("valid normal");
    let texture = Normal::new(0.0, 1.0).expect("valid normal");

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);

        // Diameter: half the mass below the label cut, half above, so the
        // classes stay near balance.
        let diameter = if rng.random::<f64>() < 0.5 {
            3.0 + 7.0 * rng.random::<f64>()
        } else {
            10.0 + 20.0 * rng.random::<f64>()
        };
        let malignant = diameter + label_noise.sample(&mut rng) > LABEL_CUT_MM;
        let label = if malignant { Label::Malignant } else { Label::Benign };
        let rating = if malignant {
            if rng.random::<f64>() < 0.6 {
                5
            } else {
                4
            }
        } else if rng.random::<f64>() < 0.6 {
            1
        } else {
            2
        };
        // Rough interior texture marks malignancy; this is what makes the
        // mid-range sizes separable at all.
        let texture_amp = if malignant { 80.0 } else { 25.0 };

        let mid = (dim as f64 - 1.0) / 2.0;
        let center = (
            mid + rng.random_range(-2.0..2.0),
            mid + rng.random_range(-2.0..2.0),
            mid + rng.random_range(-2.0..2.0),
        );
        let radius = diameter / 2.0;

        let mut voxels = Tensor::zeros(&[dim, dim, dim]);
        {
            let data = voxels.data_mut();
            for z in 0..dim {
                for y in 0..dim {
                    for x in 0..dim {
                        let bg = super::HU_AIR + bg_noise.sample(&mut rng);
                        let tex = texture.sample(&mut rng);
                        let dz = z as f64 - center.0;
                        let dy = y as f64 - center.1;
                        let dx = x as f64 - center.2;
                        let r = (dz * dz + dy * dy + dx * dx).sqrt();
                        let weight = if r <= radius - EDGE_MM {
                            1.0
                        } else if r >= radius + EDGE_MM {
                            0.0
                        } else {
                            (radius + EDGE_MM - r) / (2.0 * EDGE_MM)
                        };
                        let tissue = TISSUE_HU + texture_amp * tex;
                        let hu = bg + weight * (tissue - bg);
                        // +0.0 normalizes a rounded -0.0 so the i16
                        // round trip stays bit-exact.
                        data[(z * dim + y) * dim + x] = hu.round().clamp(-1024.0, 2000.0) + 0.0;
                    }
                }
            }
        }

        let record = NoduleRecord {
            id: format!("syn{i:04}"),
            volume_file: format!("syn{i:04}.vol"),
            volume: CtVolume::new(voxels, (1.0, 1.0, 1.0))?,
            center_mm: center,
            diameter_mm: diameter,
            median_rating: Some(rating),
            label,
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::{partition, DifficultyCriterion};

    #[test]
    fn same_seed_twice_is_bit_identical() {
        let a = gen_synthetic(25, 7, 16).unwrap();
        let b = gen_synthetic(25, 7, 16).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.diameter_mm, y.diameter_mm);
            assert_eq!(x.label, y.label);
            assert!(x.volume.voxels.bit_eq(&y.volume.voxels));
        }
        let c = gen_synthetic(25, 8, 16).unwrap();
        assert!(!a[0].volume.voxels.bit_eq(&c[0].volume.voxels));
    }

    #[test]
    fn small_n_is_rejected() {
        assert!(gen_synthetic(19, 0, 16).is_err());
        assert!(gen_synthetic(20, 0, 16).is_ok());
        assert!(gen_synthetic(20, 0, 20).is_err());
    }

    #[test]
    fn both_difficulty_classes_appear() {
        let records = gen_synthetic(80, 7, 16).unwrap();
        let (easy, full) = partition(&records, DifficultyCriterion::Diameter).unwrap();
        assert_eq!(full.len(), 80);
        assert!(!easy.is_empty());
        assert!(easy.len() < full.len());
        // Ratings are decisive (never 3) and consistent with labels.
        for r in &records {
            let rating = r.median_rating.unwrap();
            assert_ne!(rating, 3);
        }
    }

    #[test]
    fn labels_are_roughly_balanced() {
        let records = gen_synthetic(300, 7, 16).unwrap();
        let malignant = records.iter().filter(|r| r.label == Label::Malignant).count();
        let frac = malignant as f64 / records.len() as f64;
        assert!((0.35..=0.65).contains(&frac), "malignant fraction {frac}");
    }
}
