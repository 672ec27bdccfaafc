//! The 20×20 image of a blade.
//!
//! Cell `(row, col)` holds the normalized tangential coordinate of one surface
//! point. Rows 0–9 carry the pressure side and rows 10–19 the suction side,
//! each filled row-major from leading to trailing edge, so point `i` of a side
//! lands in row `offset + i / 20`, column `i % 20`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::geometry::{BladeProfile, Side};

pub const GRID: usize = 20;
pub const CELLS: usize = GRID * GRID;
/// Surface points per side that fit the image.
pub const POINTS_PER_SIDE: usize = CELLS / 2;

/// Library-wide tangential range used to scale coordinates into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRange {
    pub y_min: f64,
    pub y_max: f64,
}

impl NormRange {
    pub fn new(y_min: f64, y_max: f64) -> Result<Self> {
        if !(y_min.is_finite() && y_max.is_finite() && y_min < y_max) {
            return Err(Error::invalid(format!(
                "normalization range [{y_min}, {y_max}] is empty"
            )));
        }
        Ok(NormRange { y_min, y_max })
    }

    /// Smallest range containing every surface point of `profiles`.
    pub fn of_library<'a>(profiles: impl IntoIterator<Item = &'a BladeProfile>) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in profiles {
            for (_, _, q) in p.points() {
                lo = lo.min(q.y);
                hi = hi.max(q.y);
            }
        }
        NormRange::new(lo, hi)
    }

    fn span(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Image cell of surface point `index` on `side`.
pub fn cell_of(side: Side, index: usize) -> (usize, usize) {
    let offset = match side {
        Side::Pressure => 0,
        Side::Suction => GRID / 2,
    };
    (offset + index / GRID, index % GRID)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputMatrix {
    /// Row-major.
    pub cells: [f64; CELLS],
}

impl InputMatrix {
    pub fn zeros() -> Self {
        InputMatrix {
            cells: [0.0; CELLS],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * GRID + col]
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::Range("matrix cell outside [0, 1]".into()))
        }
    }

    /// 400 little-endian `f32`, row-major.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        for &v in &self.cells {
            binio::write_f32(w, v as f32)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut m = InputMatrix::zeros();
        for v in m.cells.iter_mut() {
            *v = binio::read_f32(r)? as f64;
        }
        m.validate()?;
        Ok(m)
    }

    /// Grayscale image, one pixel per cell.
    pub fn write_pgm<W: Write>(&self, w: &mut W) -> Result<()> {
        crate::pgm::write(w, GRID, GRID, &self.cells, 0.0, 1.0)
    }
}

/// Encoded matrix plus the number of coordinates that had to be clamped.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub matrix: InputMatrix,
    pub clamped: usize,
}

pub fn encode(profile: &BladeProfile, norm: &NormRange) -> Result<Encoded> {
    if profile.points_per_side() != POINTS_PER_SIDE
        || profile.pressure_side.len() != POINTS_PER_SIDE
    {
        return Err(Error::shape(format!(
            "encoding needs {POINTS_PER_SIDE} points per side, profile has {}",
            profile.points_per_side()
        )));
    }
    let mut matrix = InputMatrix::zeros();
    let mut clamped = 0;
    let span = norm.span();
    for (side, i, q) in profile.points() {
        let v = (q.y - norm.y_min) / span;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{side} point {i}")));
        }
        let c = v.clamp(0.0, 1.0);
        if c != v {
            clamped += 1;
        }
        let (r, col) = cell_of(side, i);
        matrix.cells[r * GRID + col] = c;
    }
    if clamped > 0 {
        log::warn!(
            "blade {}: {clamped} coordinates clamped into the normalization range",
            profile.id
        );
    }
    Ok(Encoded { matrix, clamped })
}

/// Tangential coordinates, pressure side LE→TE then suction side LE→TE.
pub fn decode(m: &InputMatrix, norm: &NormRange) -> Vec<f64> {
    let span = norm.span();
    Side::BOTH
        .iter()
        .flat_map(|&side| (0..POINTS_PER_SIDE).map(move |i| cell_of(side, i)))
        .map(|(r, c)| norm.y_min + m.get(r, c) * span)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_datum, DatumSpec, Point};

    fn flat(y: f64) -> BladeProfile {
        let side: Vec<Point> = (0..POINTS_PER_SIDE)
            .map(|i| Point::new(i as f64 / (POINTS_PER_SIDE - 1) as f64, y))
            .collect();
        BladeProfile {
            id: 0,
            pressure_side: side.clone(),
            suction_side: side,
        }
    }

    #[test]
    fn bounds_map_to_zero_and_one() {
        let norm = NormRange::new(-1.0, 2.0).unwrap();
        assert!(encode(&flat(-1.0), &norm)
            .unwrap()
            .matrix
            .cells
            .iter()
            .all(|&v| v == 0.0));
        assert!(encode(&flat(2.0), &norm)
            .unwrap()
            .matrix
            .cells
            .iter()
            .all(|&v| v == 1.0));
        let out = encode(&flat(3.0), &norm).unwrap();
        assert_eq!(out.clamped, CELLS);
    }

    #[test]
    fn layout_matches_index_arithmetic() {
        assert_eq!(cell_of(Side::Pressure, 37), (1, 17));
        assert_eq!(cell_of(Side::Suction, 0), (10, 0));
        let mut seen = [false; CELLS];
        for side in Side::BOTH {
            let offset = if side == Side::Pressure { 0 } else { 10 };
            for i in 0..POINTS_PER_SIDE {
                let (r, c) = cell_of(side, i);
                assert_eq!((r, c), (offset + i / 20, i % 20));
                assert!(!seen[r * GRID + c]);
                seen[r * GRID + c] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn datum_round_trip() {
        let d = build_datum(&DatumSpec::default()).unwrap();
        let norm = NormRange::of_library([&d]).unwrap();
        let m = encode(&d, &norm).unwrap().matrix;
        let back = decode(&m, &norm);
        for ((_, _, q), y) in d.points().zip(&back) {
            assert!((q.y - y).abs() < 1e-12);
        }
        assert!(decode(&InputMatrix::zeros(), &norm)
            .iter()
            .all(|&y| y == norm.y_min));
    }

    #[test]
    fn f32_record_is_400_values() {
        let d = build_datum(&DatumSpec::default()).unwrap();
        let norm = NormRange::of_library([&d]).unwrap();
        let m = encode(&d, &norm).unwrap().matrix;
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 1600);
        let back = InputMatrix::read_from(&mut buf.as_slice()).unwrap();
        for (a, b) in m.cells.iter().zip(&back.cells) {
            assert_eq!(*a as f32, *b as f32);
        }
    }
}
