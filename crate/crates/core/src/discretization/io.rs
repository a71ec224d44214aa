//! CSV and binary serialization of fields.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::field::{Field, SpaceTimeField};
use super::grid::{SpatialGrid, TimeGrid};
use crate::error::{LabError, Result};
use num_complex::Complex64 as C64;

/// Sidecar describing a binary dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub grid: SpatialGrid,
    pub time: Option<TimeGrid>,
    pub dtype: String,
    pub layout: String,
    pub count: usize,
}

pub fn field_csv(f: &Field) -> String {
    let mut s = String::new();
    let axes: Vec<String> = (0..f.grid.dim()).map(|a| format!("x{a}")).collect();
    let _ = writeln!(s, "{},re,im", axes.join(","));
    for (k, v) in f.values.iter().enumerate() {
        let p: Vec<String> = f.grid.point(k).iter().map(|x| format!("{x}")).collect();
        let _ = writeln!(s, "{},{},{}", p.join(","), v.re, v.im);
    }
    s
}

pub fn space_time_csv(f: &SpaceTimeField) -> String {
    let mut s = String::new();
    let axes: Vec<String> = (0..f.grid.dim()).map(|a| format!("x{a}")).collect();
    let _ = writeln!(s, "t,{},re,im", axes.join(","));
    let pts: Vec<String> = (0..f.grid.len())
        .map(|k| f.grid.point(k).iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(","))
        .collect();
    for (n, level) in f.levels.iter().enumerate() {
        let t = f.time.t(n);
        for (k, v) in level.iter().enumerate() {
            let _ = writeln!(s, "{t},{},{},{}", pts[k], v.re, v.im);
        }
    }
    s
}

fn encode(values: impl Iterator<Item = C64>) -> Vec<u8> {
    let mut out = Vec::new();
    for z in values {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Vec<C64> {
    bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect()
}

fn meta(grid: &SpatialGrid, time: Option<TimeGrid>, count: usize) -> DumpMeta {
    DumpMeta {
        grid: grid.clone(),
        time,
        dtype: "complex128-le".into(),
        layout: "row-major, time slowest, last axis fastest".into(),
        count,
    }
}

/// Binary payload and JSON sidecar text for a spatial field.
pub fn field_binary(f: &Field) -> (Vec<u8>, String) {
    let m = meta(&f.grid, None, f.values.len());
    (encode(f.values.iter().copied()), serde_json::to_string_pretty(&m).expect("serializable"))
}

pub fn space_time_binary(f: &SpaceTimeField) -> (Vec<u8>, String) {
    let count = f.levels.len() * f.grid.len();
    let m = meta(&f.grid, Some(f.time), count);
    let bytes = encode(f.levels.iter().flat_map(|l| l.iter().copied()));
    (bytes, serde_json::to_string_pretty(&m).expect("serializable"))
}

pub fn write_field_binary(f: &Field, bin: &Path, sidecar: &Path) -> Result<()> {
    let (b, s) = field_binary(f);
    std::fs::write(bin, b)?;
    std::fs::write(sidecar, s)?;
    Ok(())
}

pub fn read_field_binary(bin: &Path, sidecar: &Path) -> Result<Field> {
    let m: DumpMeta = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
    let values = decode(&std::fs::read(bin)?);
    if values.len() != m.count || m.time.is_some() {
        return Err(LabError::GridMismatch("binary dump does not match its sidecar".into()));
    }
    Field::new(m.grid, values)
}

pub fn read_space_time_binary(bin: &Path, sidecar: &Path) -> Result<SpaceTimeField> {
    let m: DumpMeta = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
    let values = decode(&std::fs::read(bin)?);
    let time = m.time.ok_or_else(|| LabError::GridMismatch("sidecar lacks a time grid".into()))?;
    if values.len() != m.count {
        return Err(LabError::GridMismatch("binary dump does not match its sidecar".into()));
    }
    let levels = values.chunks(m.grid.len()).map(|c| c.to_vec()).collect();
    SpaceTimeField::new(m.grid, time, levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let g = SpatialGrid::unit_box(2, 8);
        let f = Field::from_fn(&g, |x| C64::new(x[0], -x[1]));
        let dir = tempfile::tempdir().unwrap();
        let (b, s) = (dir.path().join("f.bin"), dir.path().join("f.json"));
        write_field_binary(&f, &b, &s).unwrap();
        assert_eq!(read_field_binary(&b, &s).unwrap(), f);
    }

    #[test]
    fn csv_has_header_and_lf() {
        let g = SpatialGrid::unit_periodic(1, 8);
        let f = Field::zeros(&g);
        let s = field_csv(&f);
        assert!(s.starts_with("x0,re,im\n"));
        assert!(!s.contains('\r'));
        assert_eq!(s.lines().count(), 9);
    }
}
