//! Binary (P5) 8-bit grayscale images.

use std::io::Write;

use crate::error::{Error, Result};

/// Writes `values` (row-major, `height × width`) mapping `[lo, hi]` onto 0–255.
pub fn write<W: Write>(
    w: &mut W,
    width: usize,
    height: usize,
    values: &[f64],
    lo: f64,
    hi: f64,
) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::shape(format!(
            "{} values for a {width}×{height} image",
            values.len()
        )));
    }
    write!(w, "P5\n{width} {height}\n255\n")?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = values
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}
