//! On-disk dataset format.
//!
//! A dataset directory holds one `index.csv` plus one `.vol` file per
//! record. The index is comma-separated with header
//! `id,volume_file,center_z_mm,center_y_mm,center_x_mm,diameter_mm,median_rating,label`;
//! `median_rating` may be empty. A volume file is a one-line text header
//! `PCVOL <D> <H> <W> <sz> <sy> <sx> i16` followed by D*H*W little-endian
//! signed 16-bit Hounsfield values in row-major z, y, x order.

use super::{CtVolume, Label, NoduleRecord};
use crate::error::{ProcanError, Result};
use crate::numerics::Tensor;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

pub const INDEX_HEADER: &str =
    "id,volume_file,center_z_mm,center_y_mm,center_x_mm,diameter_mm,median_rating,label";
const VOLUME_MAGIC: &str = "PCVOL";

pub fn write_volume(path: &Path, vol: &CtVolume) -> Result<()> {
    let (d, h, w) = vol.dims();
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(
        out,
        "{VOLUME_MAGIC} {d} {h} {w} {} {} {} i16",
        vol.spacing.0, vol.spacing.1, vol.spacing.2
    )?;
    let mut buf = Vec::with_capacity(vol.voxels.numel() * 2);
    for &v in vol.voxels.data() {
        if !(i16::MIN as f64..=i16::MAX as f64).contains(&v) || v.fract() != 0.0 {
            return Err(ProcanError::data(format!(
                "voxel value {v} is not a representable i16 Hounsfield unit"
            )));
        }
        buf.extend_from_slice(&(v as i16).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<CtVolume> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ProcanError::data(format!("{}: missing volume header", path.display())))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| ProcanError::data(format!("{}: header is not utf-8", path.display())))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 8 || fields[0] != VOLUME_MAGIC || fields[7] != "i16" {
        return Err(ProcanError::data(format!(
            "{}: malformed volume header '{header}'",
            path.display()
        )));
    }
    let dim = |i: usize| -> Result<usize> {
        fields[i]
            .parse()
            .map_err(|_| ProcanError::data(format!("{}: bad dimension '{}'", path.display(), fields[i])))
    };
    let spacing_field = |i: usize| -> Result<f64> {
        fields[i]
            .parse()
            .map_err(|_| ProcanError::data(format!("{}: bad spacing '{}'", path.display(), fields[i])))
    };
    let (d, h, w) = (dim(1)?, dim(2)?, dim(3)?);
    let spacing = (spacing_field(4)?, spacing_field(5)?, spacing_field(6)?);
    let numel = d * h * w;
    let payload = &bytes[newline + 1..];
    if payload.len() != numel * 2 {
        return Err(ProcanError::data(format!(
            "{}: expected {} voxel bytes, found {}",
            path.display(),
            numel * 2,
            payload.len()
        )));
    }
    let mut data = Vec::with_capacity(numel);
    for pair in payload.chunks_exact(2) {
        data.push(i16::from_le_bytes([pair[0], pair[1]]) as f64);
    }
    CtVolume::new(Tensor::new(vec![d, h, w], data)?, spacing)
}

/// Write a dataset directory: every record's volume plus the index.
pub fn write_dataset(dir: &Path, records: &[NoduleRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = String::from(INDEX_HEADER);
    index.push('\n');
    for r in records {
        write_volume(&dir.join(&r.volume_file), &r.volume)?;
        let rating = r.median_rating.map(|v| v.to_string()).unwrap_or_default();
        index.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.id,
            r.volume_file,
            r.center_mm.0,
            r.center_mm.1,
            r.center_mm.2,
            r.diameter_mm,
            rating,
            r.label.name()
        ));
    }
    fs::write(dir.join("index.csv"), index)?;
    Ok(())
}

/// Outcome of loading a dataset: the usable records plus how many were
/// dropped for carrying the indeterminate median rating 3.
#[derive(Debug)]
pub struct LoadReport {
    pub records: Vec<NoduleRecord>,
    pub excluded_rating3: usize,
}

/// Parse the index at `index_path`, load each referenced volume from
/// `volumes_dir`, validate every record, and drop rating-3 rows.
pub fn load_dataset(index_path: &Path, volumes_dir: &Path) -> Result<LoadReport> {
    let text = fs::read_to_string(index_path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == INDEX_HEADER => {}
        Some((_, header)) => {
            return Err(ProcanError::data(format!(
                "index header mismatch: got '{header}'"
            )))
        }
        None => return Err(ProcanError::data("index file is empty".to_string())),
    }
    let mut records = Vec::new();
    let mut excluded_rating3 = 0usize;
    for (line_no, line) in lines {
        let row = line_no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(ProcanError::data(format!(
                "index row {row}: expected 8 fields, found {}",
                fields.len()
            )));
        }
        let parse_f = |i: usize, name: &str| -> Result<f64> {
            fields[i].parse().map_err(|_| {
                ProcanError::data(format!("index row {row}: bad {name} '{}'", fields[i]))
            })
        };
        let median_rating = if fields[6].is_empty() {
            None
        } else {
            Some(fields[6].parse::<u8>().map_err(|_| {
                ProcanError::data(format!("index row {row}: bad median_rating '{}'", fields[6]))
            })?)
        };
        if median_rating == Some(3) {
            excluded_rating3 += 1;
            continue;
        }
        let volume_file = fields[1].to_string();
        let volume_path = volumes_dir.join(&volume_file);
        if !volume_path.is_file() {
            return Err(ProcanError::data(format!(
                "record '{}': volume file '{}' not found",
                fields[0], volume_file
            )));
        }
        let record = NoduleRecord {
            id: fields[0].to_string(),
            volume: read_volume(&volume_path)?,
            volume_file,
            center_mm: (
                parse_f(2, "center_z_mm")?,
                parse_f(3, "center_y_mm")?,
                parse_f(4, "center_x_mm")?,
            ),
            diameter_mm: parse_f(5, "diameter_mm")?,
            median_rating,
            label: Label::parse(fields[7])
                .map_err(|e| ProcanError::data(format!("index row {row}: {e}")))?,
        };
        record.validate()?;
        records.push(record);
    }
    Ok(LoadReport {
        records,
        excluded_rating3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::gen_synthetic;

    #[test]
    fn volume_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let records = gen_synthetic(20, 3, 16).unwrap();
        let path = dir.path().join("v.vol");
        write_volume(&path, &records[0].volume).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back.spacing, records[0].volume.spacing);
        assert!(back.voxels.bit_eq(&records[0].volume.voxels));
    }

    #[test]
    fn dataset_round_trip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let records = gen_synthetic(20, 4, 16).unwrap();
        write_dataset(dir.path(), &records).unwrap();
        let report = load_dataset(&dir.path().join("index.csv"), dir.path()).unwrap();
        assert_eq!(report.excluded_rating3, 0);
        assert_eq!(report.records.len(), records.len());
        for (a, b) in report.records.iter().zip(&records) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.center_mm, b.center_mm);
            assert_eq!(a.diameter_mm, b.diameter_mm);
            assert_eq!(a.median_rating, b.median_rating);
            assert_eq!(a.label, b.label);
            assert!(a.volume.voxels.bit_eq(&b.volume.voxels));
        }
    }

    #[test]
    fn rating_three_rows_are_excluded_with_a_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = gen_synthetic(20, 5, 16).unwrap();
        records.truncate(2);
        write_dataset(dir.path(), &records).unwrap();
        // Rewrite the index so the first row carries rating 3.
        let index_path = dir.path().join("index.csv");
        let text = fs::read_to_string(&index_path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let fields: Vec<&str> = lines[1].split(',').collect();
        let mut patched: Vec<String> = fields.iter().map(|s| s.to_string()).collect();
        patched[6] = "3".to_string();
        lines[1] = patched.join(",");
        fs::write(&index_path, lines.join("\n") + "\n").unwrap();

        let report = load_dataset(&index_path, dir.path()).unwrap();
        assert_eq!(report.excluded_rating3, 1);
        assert_eq!(report.records.len(), 1);
    }

    #[test]
    fn malformed_rows_name_the_row_number() {
        let dir = tempfile::tempdir().unwrap();
        let records = gen_synthetic(20, 6, 16).unwrap();
        write_dataset(dir.path(), &records[..1]).unwrap();
        let index_path = dir.path().join("index.csv");
        let text = fs::read_to_string(&index_path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[1] = "only,three,fields".to_string();
        fs::write(&index_path, lines.join("\n") + "\n").unwrap();
        let err = load_dataset(&index_path, dir.path()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "error was: {err}");
    }

    #[test]
    fn missing_volume_file_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let records = gen_synthetic(20, 7, 16).unwrap();
        write_dataset(dir.path(), &records[..1]).unwrap();
        fs::remove_file(dir.path().join(&records[0].volume_file)).unwrap();
        let err = load_dataset(&dir.path().join("index.csv"), dir.path()).unwrap_err();
        assert!(err.to_string().contains(&records[0].id), "error was: {err}");
    }
}
