//! Dataset ingestion and preprocessing: trilinear resampling to isotropic
//! spacing, cube cropping, Hounsfield clamping, per-cube standardization,
//! and the 21-way rotation augmentation. A seeded synthetic generator
//! stands in for real CT archives at desk scale.
//!
//! The pipeline order is fixed: resample, crop, clamp, standardize, and
//! (during training only) augment.

pub mod io;
pub mod synthetic;

use crate::curriculum::{classify, Difficulty, DifficultyCriterion};
use crate::error::{ProcanError, Result};
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};

pub use synthetic::gen_synthetic;

pub const HU_AIR: f64 = -1000.0;
pub const HU_MAX: f64 = 400.0;
const STD_GUARD: f64 = 1e-8;

/// A CT volume in Hounsfield units with per-axis spacing in mm/voxel,
/// axes ordered (z, y, x).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtVolume {
    pub voxels: Tensor,
    pub spacing: (f64, f64, f64),
}

impl CtVolume {
    pub fn new(voxels: Tensor, spacing: (f64, f64, f64)) -> Result<Self> {
        if voxels.rank() != 3 {
            return Err(ProcanError::data(format!(
                "volume must be rank 3, got {:?}",
                voxels.shape()
            )));
        }
        if spacing.0 <= 0.0 || spacing.1 <= 0.0 || spacing.2 <= 0.0 {
            return Err(ProcanError::data(format!(
                "spacing components must be positive, got {spacing:?}"
            )));
        }
        Ok(CtVolume { voxels, spacing })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.voxels.dim(0), self.voxels.dim(1), self.voxels.dim(2))
    }

    pub fn is_isotropic(&self) -> bool {
        self.spacing.0 == self.spacing.1 && self.spacing.1 == self.spacing.2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Benign,
    Malignant,
}

impl Label {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "benign" => Ok(Label::Benign),
            "malignant" => Ok(Label::Malignant),
            other => Err(ProcanError::data(format!(
                "label must be 'benign' or 'malignant', got '{other}'"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }

    pub fn as_u8(&self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Malignant => 1,
        }
    }
}

/// One labeled nodule: the raw volume, its center and diameter in mm, the
/// median radiologist rating when available, and the class label.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoduleRecord {
    pub id: String,
    pub volume_file: String,
    pub volume: CtVolume,
    pub center_mm: (f64, f64, f64),
    pub diameter_mm: f64,
    pub median_rating: Option<u8>,
    pub label: Label,
}

impl NoduleRecord {
    /// Nodules run 3-30 mm; the label must agree with a decisive rating.
    pub fn validate(&self) -> Result<()> {
        if !(self.diameter_mm > 0.0 && self.diameter_mm <= 30.0) {
            return Err(ProcanError::data(format!(
                "record '{}': diameter {} mm outside (0, 30]",
                self.id, self.diameter_mm
            )));
        }
        if let Some(r) = self.median_rating {
            if !(1..=5).contains(&r) {
                return Err(ProcanError::data(format!(
                    "record '{}': rating {r} outside 1-5",
                    self.id
                )));
            }
            if r <= 2 && self.label != Label::Benign {
                return Err(ProcanError::data(format!(
                    "record '{}': rating {r} implies benign but label is {}",
                    self.id,
                    self.label.name()
                )));
            }
            if r >= 4 && self.label != Label::Malignant {
                return Err(ProcanError::data(format!(
                    "record '{}': rating {r} implies malignant but label is {}",
                    self.id,
                    self.label.name()
                )));
            }
        }
        Ok(())
    }
}

/// A network-ready training sample: standardized cube, binary label,
/// curriculum difficulty, and the standardized image of air (used to fill
/// out-of-bounds voxels when the cube is rotated).
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub cube: Tensor,
    pub label: u8,
    pub difficulty: Difficulty,
    pub air_value: f64,
}

/// Trilinear resampling onto a uniform grid with spacing `target_mm` on
/// every axis. Grid point k samples the source at k * target / spacing,
/// so a volume already at the target spacing is copied through unchanged.
pub fn resample_isotropic(vol: &CtVolume, target_mm: f64) -> Result<CtVolume> {
    if target_mm <= 0.0 {
        return Err(ProcanError::config(format!(
            "target spacing must be positive, got {target_mm}"
        )));
    }
    let (d, h, w) = vol.dims();
    if d < 2 || h < 2 || w < 2 {
        return Err(ProcanError::data(format!(
            "volume dims {:?} too small to interpolate",
            vol.dims()
        )));
    }
    let (sz, sy, sx) = vol.spacing;
    // Work with the step ratio directly: when spacing already equals the
    // target the ratio is exactly 1.0 and the grid coincides.
    let (rz, ry, rx) = (target_mm / sz, target_mm / sy, target_mm / sx);
    let out_len = |n: usize, r: f64| ((n - 1) as f64 / r).floor() as usize + 1;
    let (od, oh, ow) = (out_len(d, rz), out_len(h, ry), out_len(w, rx));
    let src = vol.voxels.data();
    let mut out = Tensor::zeros(&[od, oh, ow]);
    {
        let dst = out.data_mut();
        for z in 0..od {
            let fz = z as f64 * rz;
            let (iz, tz) = split_coord(fz, d);
            for y in 0..oh {
                let fy = y as f64 * ry;
                let (iy, ty) = split_coord(fy, h);
                for x in 0..ow {
                    let fx = x as f64 * rx;
                    let (ix, tx) = split_coord(fx, w);
                    let at = |dz: usize, dy: usize, dx: usize| {
                        src[((iz + dz) * h + (iy + dy)) * w + (ix + dx)]
                    };
                    let c00 = at(0, 0, 0) * (1.0 - tx) + at(0, 0, 1) * tx;
                    let c01 = at(0, 1, 0) * (1.0 - tx) + at(0, 1, 1) * tx;
                    let c10 = at(1, 0, 0) * (1.0 - tx) + at(1, 0, 1) * tx;
                    let c11 = at(1, 1, 0) * (1.0 - tx) + at(1, 1, 1) * tx;
                    let c0 = c00 * (1.0 - ty) + c01 * ty;
                    let c1 = c10 * (1.0 - ty) + c11 * ty;
                    dst[(z * oh + y) * ow + x] = c0 * (1.0 - tz) + c1 * tz;
                }
            }
        }
    }
    CtVolume::new(out, (target_mm, target_mm, target_mm))
}

/// Split a fractional source coordinate into a base index and weight,
/// keeping base+1 in bounds (the top edge lands on the last cell with
/// weight one).
fn split_coord(f: f64, n: usize) -> (usize, f64) {
    let max_base = n - 2;
    let i = (f.floor() as usize).min(max_base);
    (i, f - i as f64)
}

/// Cut a side^3 voxel cube out of an isotropic volume, centered at the
/// voxel nearest to `center_mm`. Out-of-bounds voxels read as air.
pub fn crop_cube(vol: &CtVolume, center_mm: (f64, f64, f64), side: usize) -> Result<Tensor> {
    if !vol.is_isotropic() {
        return Err(ProcanError::usage(
            "crop_cube requires an isotropic volume; resample first".to_string(),
        ));
    }
    let s = vol.spacing.0;
    let (d, h, w) = vol.dims();
    let center = (
        (center_mm.0 / s).round() as i64,
        (center_mm.1 / s).round() as i64,
        (center_mm.2 / s).round() as i64,
    );
    if center.0 < 0
        || center.0 >= d as i64
        || center.1 < 0
        || center.1 >= h as i64
        || center.2 < 0
        || center.2 >= w as i64
    {
        return Err(ProcanError::data(format!(
            "crop center {center_mm:?} mm is outside the volume ({d}x{h}x{w} at {s} mm)"
        )));
    }
    let half = (side / 2) as i64;
    let src = vol.voxels.data();
    let mut cube = Tensor::zeros(&[side, side, side]);
    {
        let dst = cube.data_mut();
        for z in 0..side as i64 {
            let vz = center.0 - half + z;
            for y in 0..side as i64 {
                let vy = center.1 - half + y;
                for x in 0..side as i64 {
                    let vx = center.2 - half + x;
                    let value = if vz >= 0
                        && vz < d as i64
                        && vy >= 0
                        && vy < h as i64
                        && vx >= 0
                        && vx < w as i64
                    {
                        src[((vz as usize) * h + vy as usize) * w + vx as usize]
                    } else {
                        HU_AIR
                    };
                    dst[((z * side as i64 + y) * side as i64 + x) as usize] = value;
                }
            }
        }
    }
    Ok(cube)
}

/// Clamp Hounsfield units into [-1000, 400].
pub fn clamp_hu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(HU_AIR).min(HU_MAX))
}

/// Zero-mean unit-variance standardization with the cube's own moments.
/// Returns the standardized cube plus the moments it used.
pub fn standardize_with_stats(cube: &Tensor) -> (Tensor, f64, f64) {
    let n = cube.numel() as f64;
    let mean = cube.data().iter().sum::<f64>() / n;
    let var = cube.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_GUARD);
    (cube.map(|v| (v - mean) / std), mean, std)
}

pub fn standardize(cube: &Tensor) -> Tensor {
    standardize_with_stats(cube).0
}

const AUG_ANGLES_DEG: [f64; 7] = [0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0];

/// Total augmented views per sample: three axes times seven angles.
pub const AUGMENT_COUNT: usize = 21;

/// The k-th augmented view (k in 0..21), in the same axis-major,
/// angle-minor order as `augment`. k = 0, 7, 14 are identity copies.
pub fn augmented_view(cube: &Tensor, air_fill: f64, k: usize) -> Tensor {
    assert!(k < AUGMENT_COUNT, "augmentation index {k} out of range");
    let axis = AUG_AXES[k / 7];
    let angle = AUG_ANGLES_DEG[k % 7];
    rotate_cube(cube, axis, angle, air_fill)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RotationAxis {
    Z,
    Y,
    X,
}

pub const AUG_AXES: [RotationAxis; 3] = [RotationAxis::Z, RotationAxis::Y, RotationAxis::X];

/// The 21 training augmentations: for each axis (z, y, x), rotations by
/// 0, 45, 90, 135, 180, 225, and 270 degrees about the cube center, in
/// that order. Multiples of 90 degrees are exact index permutations;
/// the 45-degree family interpolates trilinearly with `oob_fill` outside
/// the cube.
pub fn augment(cube: &Tensor, oob_fill: f64) -> Result<Vec<Tensor>> {
    let views = augment_lazy(cube)?;
    Ok(views
        .map(|(axis, angle)| rotate_cube(cube, axis, angle, oob_fill))
        .collect())
}

/// The (axis, angle) pairs of `augment` in output order.
pub fn augment_lazy(
    cube: &Tensor,
) -> Result<impl Iterator<Item = (RotationAxis, f64)> + use<>> {
    let s = cube.shape();
    if s.len() != 3 || s[0] != s[1] || s[1] != s[2] {
        return Err(ProcanError::dimension(format!(
            "augment needs a cubic volume, got {s:?}"
        )));
    }
    Ok(AUG_AXES
        .into_iter()
        .flat_map(|axis| AUG_ANGLES_DEG.into_iter().map(move |a| (axis, a))))
}

/// Rotate a cube about one axis. Exact index permutations at multiples of
/// 90 degrees, trilinear interpolation otherwise.
pub fn rotate_cube(cube: &Tensor, axis: RotationAxis, angle_deg: f64, oob_fill: f64) -> Tensor {
    let side = cube.dim(0);
    let quarter_turns = if angle_deg % 90.0 == 0.0 {
        Some(((angle_deg / 90.0) as usize) % 4)
    } else {
        None
    };
    match quarter_turns {
        Some(0) => cube.clone(),
        Some(q) => rotate_quarter(cube, axis, q),
        None => rotate_interp(cube, axis, angle_deg.to_radians(), oob_fill, side),
    }
}

/// Rotate by q quarter turns via index permutation (a bijection on voxel
/// values). One quarter turn maps plane coords (a, b) to source
/// (b, S-1-a).
fn rotate_quarter(cube: &Tensor, axis: RotationAxis, q: usize) -> Tensor {
    let s = cube.dim(0);
    let src = cube.data();
    let quarter_src = |a: usize, b: usize| (b, s - 1 - a);
    Tensor::from_fn(&[s, s, s], |i| {
        let z = i / (s * s);
        let y = (i / s) % s;
        let x = i % s;
        let (fixed, mut a, mut b) = match axis {
            RotationAxis::Z => (z, y, x),
            RotationAxis::Y => (y, z, x),
            RotationAxis::X => (x, z, y),
        };
        for _ in 0..q {
            let (na, nb) = quarter_src(a, b);
            a = na;
            b = nb;
        }
        let (sz, sy, sx) = match axis {
            RotationAxis::Z => (fixed, a, b),
            RotationAxis::Y => (a, fixed, b),
            RotationAxis::X => (a, b, fixed),
        };
        src[(sz * s + sy) * s + sx]
    })
}

fn rotate_interp(cube: &Tensor, axis: RotationAxis, theta: f64, oob_fill: f64, side: usize) -> Tensor {
    let c = (side as f64 - 1.0) / 2.0;
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    Tensor::from_fn(&[side, side, side], |i| {
        let z = (i / (side * side)) as f64;
        let y = ((i / side) % side) as f64;
        let x = (i % side) as f64;
        // Rotate the in-plane coordinates backwards to find the source.
        let (fixed, a, b) = match axis {
            RotationAxis::Z => (z, y, x),
            RotationAxis::Y => (y, z, x),
            RotationAxis::X => (x, z, y),
        };
        let da = a - c;
        let db = b - c;
        let sa = c + cos_t * da + sin_t * db;
        let sb = c - sin_t * da + cos_t * db;
        let (sz, sy, sx) = match axis {
            RotationAxis::Z => (fixed, sa, sb),
            RotationAxis::Y => (sa, fixed, sb),
            RotationAxis::X => (sa, sb, fixed),
        };
        sample_trilinear(cube, sz, sy, sx, oob_fill)
    })
}

/// Trilinear sample at a fractional coordinate; outside the cube the
/// fill value is returned (corner weights blend with it near the edge).
fn sample_trilinear(cube: &Tensor, z: f64, y: f64, x: f64, fill: f64) -> f64 {
    let s = cube.dim(0) as i64;
    let (z0, y0, x0) = (z.floor(), y.floor(), x.floor());
    let (tz, ty, tx) = (z - z0, y - y0, x - x0);
    let src = cube.data();
    let fetch = |dz: i64, dy: i64, dx: i64| -> f64 {
        let (iz, iy, ix) = (z0 as i64 + dz, y0 as i64 + dy, x0 as i64 + dx);
        if iz < 0 || iz >= s || iy < 0 || iy >= s || ix < 0 || ix >= s {
            fill
        } else {
            src[((iz * s + iy) * s + ix) as usize]
        }
    };
    let c00 = fetch(0, 0, 0) * (1.0 - tx) + fetch(0, 0, 1) * tx;
    let c01 = fetch(0, 1, 0) * (1.0 - tx) + fetch(0, 1, 1) * tx;
    let c10 = fetch(1, 0, 0) * (1.0 - tx) + fetch(1, 0, 1) * tx;
    let c11 = fetch(1, 1, 0) * (1.0 - tx) + fetch(1, 1, 1) * tx;
    let c0 = c00 * (1.0 - ty) + c01 * ty;
    let c1 = c10 * (1.0 - ty) + c11 * ty;
    c0 * (1.0 - tz) + c1 * tz
}

/// Run one record through the full pipeline: resample to 1 mm, crop a
/// side^3 cube, clamp, standardize, and attach the curriculum label.
pub fn preprocess(
    record: &NoduleRecord,
    side: usize,
    criterion: DifficultyCriterion,
) -> Result<Sample> {
    record.validate()?;
    let difficulty = classify(record, criterion)?;
    let iso = resample_isotropic(&record.volume, 1.0)?;
    let cropped = crop_cube(&iso, record.center_mm, side)?;
    let clamped = clamp_hu(&cropped);
    let (cube, mean, std) = standardize_with_stats(&clamped);
    let air_value = (HU_AIR - mean) / std;
    Ok(Sample {
        id: record.id.clone(),
        cube,
        label: record.label.as_u8(),
        difficulty,
        air_value,
    })
}

/// Preprocess a whole dataset in index order.
pub fn preprocess_all(
    records: &[NoduleRecord],
    side: usize,
    criterion: DifficultyCriterion,
) -> Result<Vec<Sample>> {
    records.iter().map(|r| preprocess(r, side, criterion)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: (usize, usize, usize), spacing: (f64, f64, f64), seed: u64) -> CtVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CtVolume::new(
            Tensor::uniform(&[dims.0, dims.1, dims.2], -800.0, 300.0, &mut rng),
            spacing,
        )
        .unwrap()
    }

    #[test]
    fn clamp_examples_and_idempotence() {
        let t = Tensor::new(vec![3], vec![-2000.0, 500.0, 37.0]).unwrap();
        let c = clamp_hu(&t);
        assert_eq!(c.data(), &[-1000.0, 400.0, 37.0]);
        assert!(clamp_hu(&c).bit_eq(&c));
    }

    #[test]
    fn standardize_cases() {
        let constant = Tensor::filled(&[4, 4, 4], 123.0);
        assert!(standardize(&constant).data().iter().all(|&v| v == 0.0));

        let mut two = Tensor::zeros(&[2, 2, 2]);
        for (i, v) in two.data_mut().iter_mut().enumerate() {
            *v = if i % 2 == 0 { -1.0 } else { 1.0 };
        }
        let s = standardize(&two);
        assert!(s.data().iter().all(|&v| (v.abs() - 1.0).abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = Tensor::uniform(&[6, 6, 6], -500.0, 500.0, &mut rng);
        let (z, _, _) = standardize_with_stats(&r);
        let n = z.numel() as f64;
        let mean = z.data().iter().sum::<f64>() / n;
        let var = z.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-10);
        assert!((var.sqrt() - 1.0).abs() < 1e-10);
        // Idempotent up to rounding.
        let zz = standardize(&z);
        assert!(zz.max_abs_diff(&z) < 1e-10);
    }

    #[test]
    fn resample_identity_when_grid_coincides() {
        let vol = random_volume((5, 6, 7), (1.0, 1.0, 1.0), 1);
        let out = resample_isotropic(&vol, 1.0).unwrap();
        assert_eq!(out.dims(), vol.dims());
        assert!(out.voxels.bit_eq(&vol.voxels));

        let vol2 = random_volume((4, 4, 4), (0.7, 0.7, 0.7), 2);
        let out2 = resample_isotropic(&vol2, 0.7).unwrap();
        assert!(out2.voxels.bit_eq(&vol2.voxels));
    }

    #[test]
    fn resample_reproduces_linear_ramp() {
        // v(z,y,x) = x in mm; trilinear interpolation is exact on ramps.
        let vol = CtVolume::new(
            Tensor::from_fn(&[4, 4, 8], |i| (i % 8) as f64 * 1.3),
            (1.3, 1.3, 1.3),
        )
        .unwrap();
        let out = resample_isotropic(&vol, 0.5).unwrap();
        let (_, _, ow) = out.dims();
        for (i, &v) in out.voxels.data().iter().enumerate() {
            let x = (i % ow) as f64 * 0.5;
            assert!((v - x).abs() < 1e-10, "ramp broke at x={x}: {v}");
        }
    }

    #[test]
    fn resample_rejects_degenerate_volumes() {
        let thin = CtVolume::new(Tensor::zeros(&[1, 4, 4]), (1.0, 1.0, 1.0)).unwrap();
        assert!(resample_isotropic(&thin, 1.0).is_err());
        let vol = random_volume((4, 4, 4), (1.0, 1.0, 1.0), 3);
        assert!(resample_isotropic(&vol, 0.0).is_err());
    }

    #[test]
    fn crop_interior_and_corner() {
        let vol = random_volume((64, 64, 64), (1.0, 1.0, 1.0), 4);
        let cube = crop_cube(&vol, (32.0, 32.0, 32.0), 16).unwrap();
        assert_eq!(cube.shape(), &[16, 16, 16]);
        // Interior crop: no padding, values match the source window.
        let (d, h, w) = vol.dims();
        let _ = (d, h, w);
        for z in 0..16 {
            for y in 0..16 {
                for x in 0..16 {
                    let want = vol.voxels.data()[((z + 24) * 64 + (y + 24)) * 64 + (x + 24)];
                    assert_eq!(cube.data()[(z * 16 + y) * 16 + x], want);
                }
            }
        }
        // Corner crop pads with air.
        let corner = crop_cube(&vol, (0.0, 0.0, 0.0), 16).unwrap();
        assert_eq!(corner.data()[0], HU_AIR);
        // Center outside errors.
        assert!(crop_cube(&vol, (200.0, 0.0, 0.0), 16).is_err());
        // Anisotropic volumes must be resampled first.
        let aniso = random_volume((8, 8, 8), (2.0, 1.0, 1.0), 5);
        assert!(crop_cube(&aniso, (4.0, 4.0, 4.0), 4).is_err());
    }

    #[test]
    fn crop_indices_match_an_index_oracle() {
        let vol = random_volume((40, 40, 40), (1.0, 1.0, 1.0), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let center = (
                rng.random_range(0.0..39.0),
                rng.random_range(0.0..39.0),
                rng.random_range(0.0..39.0),
            );
            let side = 8usize;
            let cube = crop_cube(&vol, center, side).unwrap();
            let (cz, cy, cx) = (
                center.0.round() as i64,
                center.1.round() as i64,
                center.2.round() as i64,
            );
            for z in 0..side as i64 {
                for y in 0..side as i64 {
                    for x in 0..side as i64 {
                        let (vz, vy, vx) = (cz - 4 + z, cy - 4 + y, cx - 4 + x);
                        let want = if (0..40).contains(&vz)
                            && (0..40).contains(&vy)
                            && (0..40).contains(&vx)
                        {
                            vol.voxels.data()[((vz * 40 + vy) * 40 + vx) as usize]
                        } else {
                            HU_AIR
                        };
                        let got = cube.data()[((z * 8 + y) * 8 + x) as usize];
                        assert_eq!(got, want);
                    }
                }
            }
        }
    }

    #[test]
    fn augment_count_and_identity_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cube = Tensor::uniform(&[6, 6, 6], -1.0, 1.0, &mut rng);
        let views = augment(&cube, -2.0).unwrap();
        assert_eq!(views.len(), 21);
        // The three 0-degree entries are the input, bit for bit.
        for k in [0, 7, 14] {
            assert!(views[k].bit_eq(&cube));
        }
        assert!(augment(&Tensor::zeros(&[4, 4, 5]), 0.0).is_err());
    }

    #[test]
    fn quarter_rotations_form_a_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cube = Tensor::uniform(&[5, 5, 5], -1.0, 1.0, &mut rng);
        for axis in AUG_AXES {
            // 90 degrees applied four times is the identity.
            let mut v = cube.clone();
            for _ in 0..4 {
                v = rotate_cube(&v, axis, 90.0, 0.0);
            }
            assert!(v.bit_eq(&cube));
            // 180 equals 90 twice.
            let twice = rotate_cube(&rotate_cube(&cube, axis, 90.0, 0.0), axis, 90.0, 0.0);
            let direct = rotate_cube(&cube, axis, 180.0, 0.0);
            assert!(twice.bit_eq(&direct));
            // Quarter-turn rotations preserve the multiset of values.
            let mut a: Vec<u64> = cube.data().iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u64> = rotate_cube(&cube, axis, 270.0, 0.0)
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn oblique_rotation_fills_corners_and_stays_finite() {
        let cube = Tensor::filled(&[8, 8, 8], 3.0);
        let fill = -7.0;
        let v = rotate_cube(&cube, RotationAxis::Z, 45.0, fill);
        assert!(v.all_finite());
        // A corner of the rotated frame samples outside the cube.
        let corner = v.data()[0];
        assert!((corner - fill).abs() < 4.0 && corner != 3.0);
        // Interior voxels away from the corners keep the constant value.
        let mid = v.data()[(4 * 8 + 4) * 8 + 4];
        assert!((mid - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pipeline_produces_standardized_cubes() {
        let recs = synthetic::gen_synthetic(24, 7, 16).unwrap();
        let samples = preprocess_all(&recs, 16, DifficultyCriterion::Diameter).unwrap();
        assert_eq!(samples.len(), 24);
        for s in &samples {
            assert_eq!(s.cube.shape(), &[16, 16, 16]);
            let n = s.cube.numel() as f64;
            let mean = s.cube.data().iter().sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!(s.air_value < 0.0);
        }
    }
}
