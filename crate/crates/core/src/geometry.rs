//! Datum blade construction and the perturbed blade library.
//!
//! Coordinates are normalized by the axial chord: the leading edge sits at
//! `x = 0`, the trailing edge at `x = 1`, and `y` is the tangential (pitchwise)
//! coordinate. Both sides share the same cosine-clustered `x` stations, so the
//! two surfaces are described as `y = camber(x) ± half_thickness(x)`.
//!
//! Angles follow the usual turbine convention: the inlet metal angle is measured
//! from axial toward `+y` and the exit metal angle toward `-y`, so a blade with
//! inlet 41° and exit 69° turns the flow through 110°.

use std::fmt;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};

/// Closure tolerance for the leading- and trailing-edge points.
pub const CLOSURE_TOL: f64 = 1e-9;
/// Bumps vanish outside `(FADE_START, 1 - FADE_START)`.
pub const FADE_START: f64 = 0.05;
const FADE_RAMP: f64 = 0.05;
const MAX_THICKNESS_AT: f64 = 0.3;
/// Largest admissible bump amplitude, as a fraction of chord.
pub const MAX_AMPLITUDE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Pressure,
    Suction,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Pressure, Side::Suction];

    pub fn name(self) -> &'static str {
        match self {
            Side::Pressure => "pressure",
            Side::Suction => "suction",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatumSpec {
    /// Degrees from axial, toward `+y`.
    pub inlet_metal_angle: f64,
    /// Degrees from axial, toward `-y`.
    pub exit_metal_angle: f64,
    pub pitch_to_chord: f64,
    pub chord: f64,
    pub max_thickness_to_chord: f64,
    pub points_per_side: usize,
    /// Full trailing-edge wedge angle, degrees, measured along the surface.
    pub trailing_edge_wedge: f64,
    /// Weight of the quadratic term in the camber-angle law; 0 gives a camber
    /// angle linear in `x`, positive values shift turning toward the trailing edge.
    pub aft_loading: f64,
}

impl Default for DatumSpec {
    fn default() -> Self {
        DatumSpec {
            inlet_metal_angle: 41.08,
            exit_metal_angle: 69.25,
            pitch_to_chord: 0.79,
            chord: 1.0,
            max_thickness_to_chord: 0.12,
            points_per_side: 200,
            trailing_edge_wedge: 12.0,
            aft_loading: -0.91,
        }
    }
}

impl DatumSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.inlet_metal_angle,
            self.exit_metal_angle,
            self.pitch_to_chord,
            self.chord,
            self.max_thickness_to_chord,
            self.aft_loading,
            self.trailing_edge_wedge,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("datum spec has non-finite fields"));
        }
        if !(0.0..0.5).contains(&self.max_thickness_to_chord) {
            return Err(Error::invalid(format!(
                "max_thickness_to_chord {} outside [0, 0.5)",
                self.max_thickness_to_chord
            )));
        }
        if self.pitch_to_chord <= 0.0 {
            return Err(Error::invalid("pitch_to_chord must be positive"));
        }
        if self.chord <= 0.0 {
            return Err(Error::invalid("chord must be positive"));
        }
        if self.points_per_side < 3 {
            return Err(Error::invalid("points_per_side must be at least 3"));
        }
        if self.inlet_metal_angle.abs() >= 85.0 || self.exit_metal_angle.abs() >= 85.0 {
            return Err(Error::invalid("metal angles must lie within ±85°"));
        }
        if !(0.0..90.0).contains(&self.trailing_edge_wedge) {
            return Err(Error::invalid("trailing_edge_wedge must lie in [0, 90)"));
        }
        if self.aft_loading.abs() > 1.0 {
            return Err(Error::invalid("aft_loading must lie in [-1, 1]"));
        }
        Ok(())
    }

    /// Camber-line angle (radians, signed, positive toward `+y`) at axial position `x`.
    pub fn camber_angle(&self, x: f64) -> f64 {
        let inlet = self.inlet_metal_angle.to_radians();
        let exit = -self.exit_metal_angle.to_radians();
        let w = self.aft_loading;
        let blend = (1.0 - w) * x + w * x * x;
        inlet + (exit - inlet) * blend
    }

    /// Coefficients of `h(x) = a0 √x + a1 x + a2 x² + a3 x³`, the half thickness
    /// normal to the camber line: zero at the trailing edge, maximum
    /// `max_thickness_to_chord / 2` at 30% chord, and a trailing-edge slope giving
    /// the requested wedge angle along the (inclined) surface.
    fn thickness_coefficients(&self) -> [f64; 4] {
        let half = 0.5 * self.max_thickness_to_chord;
        if half == 0.0 {
            return [0.0; 4];
        }
        let xm: f64 = MAX_THICKNESS_AT;
        let te_slope =
            -(0.5 * self.trailing_edge_wedge).to_radians().tan() / self.camber_angle(1.0).cos();
        // rows: h(1) = 0, h(xm) = half, h'(xm) = 0, h'(1) = te_slope
        #[rustfmt::skip]
        let m = nalgebra::Matrix4::new(
            1.0, 1.0, 1.0, 1.0,
            xm.sqrt(), xm, xm * xm, xm.powi(3),
            0.5 / xm.sqrt(), 1.0, 2.0 * xm, 3.0 * xm * xm,
            0.5, 1.0, 2.0, 3.0,
        );
        let rhs = nalgebra::Vector4::new(0.0, half, 0.0, te_slope);
        let a = m.lu().solve(&rhs).unwrap_or_else(nalgebra::Vector4::zeros);
        [a[0], a[1], a[2], a[3]]
    }

    /// Half thickness measured normal to the camber line.
    pub fn normal_half_thickness(&self, x: f64) -> f64 {
        let [a0, a1, a2, a3] = self.thickness_coefficients();
        (a0 * x.sqrt() + a1 * x + a2 * x * x + a3 * x.powi(3)).max(0.0)
    }
}

/// Cosine-clustered stations on `[0, 1]`, dense at both edges.
pub fn cosine_stations(n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / last).cos()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BladeProfile {
    pub id: u32,
    /// Leading edge to trailing edge.
    pub pressure_side: Vec<Point>,
    /// Leading edge to trailing edge.
    pub suction_side: Vec<Point>,
}

impl BladeProfile {
    pub fn points_per_side(&self) -> usize {
        self.suction_side.len()
    }

    pub fn side(&self, side: Side) -> &[Point] {
        match side {
            Side::Pressure => &self.pressure_side,
            Side::Suction => &self.suction_side,
        }
    }

    /// Mean line `(y_s + y_p) / 2` at the shared stations.
    pub fn camber(&self) -> Vec<f64> {
        self.suction_side
            .iter()
            .zip(&self.pressure_side)
            .map(|(s, p)| 0.5 * (s.y + p.y))
            .collect()
    }

    pub fn thickness(&self) -> Vec<f64> {
        self.suction_side
            .iter()
            .zip(&self.pressure_side)
            .map(|(s, p)| s.y - p.y)
            .collect()
    }

    /// All surface points, pressure side first.
    pub fn points(&self) -> impl Iterator<Item = (Side, usize, Point)> + '_ {
        let ps = self
            .pressure_side
            .iter()
            .enumerate()
            .map(|(i, p)| (Side::Pressure, i, *p));
        let ss = self
            .suction_side
            .iter()
            .enumerate()
            .map(|(i, p)| (Side::Suction, i, *p));
        ps.chain(ss)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.suction_side.len();
        if n < 3 || self.pressure_side.len() != n {
            return Err(Error::Geometry(format!(
                "sides have {} and {} points",
                self.pressure_side.len(),
                n
            )));
        }
        if self
            .points()
            .any(|(_, _, p)| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(Error::Geometry("non-finite coordinate".into()));
        }
        let (ps, ss) = (&self.pressure_side, &self.suction_side);
        if ps[0].dist(ss[0]) > CLOSURE_TOL {
            return Err(Error::Geometry(
                "leading-edge points do not coincide".into(),
            ));
        }
        if ps[n - 1].dist(ss[n - 1]) > CLOSURE_TOL {
            return Err(Error::Geometry(
                "trailing-edge points do not coincide".into(),
            ));
        }
        for side in Side::BOTH {
            let pts = self.side(side);
            if pts.iter().any(|p| !(0.0..=1.0).contains(&p.x)) {
                return Err(Error::Geometry(format!("{side} side leaves 0 <= x/c <= 1")));
            }
            if pts.windows(2).any(|w| w[1].x < w[0].x) {
                return Err(Error::Geometry(format!("{side} side x/c decreases")));
            }
        }
        for (i, s) in ss.iter().enumerate() {
            let yp = interp_y(ps, s.x);
            if s.y < yp - 1e-12 {
                return Err(Error::Geometry(format!(
                    "sides cross near x/c = {:.4} (point {i})",
                    s.x
                )));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_u32(w, self.id)?;
        for (_, _, p) in self.points() {
            binio::write_f64(w, p.x)?;
            binio::write_f64(w, p.y)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, points_per_side: usize) -> Result<Self> {
        let id = binio::read_u32(r)?;
        let read_side = |r: &mut R| -> Result<Vec<Point>> {
            (0..points_per_side)
                .map(|_| Ok(Point::new(binio::read_f64(r)?, binio::read_f64(r)?)))
                .collect()
        };
        let pressure_side = read_side(r)?;
        let suction_side = read_side(r)?;
        Ok(BladeProfile {
            id,
            pressure_side,
            suction_side,
        })
    }

    /// One `x y side` line per surface point, for plotting.
    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        for (side, _, p) in self.points() {
            writeln!(w, "{} {} {}", p.x, p.y, side)?;
        }
        Ok(())
    }
}

/// Linear interpolation of `y` on a side whose `x` is non-decreasing.
pub(crate) fn interp_y(pts: &[Point], x: f64) -> f64 {
    let k = pts.partition_point(|p| p.x < x);
    if k == 0 {
        return pts[0].y;
    }
    if k >= pts.len() {
        return pts[pts.len() - 1].y;
    }
    let (a, b) = (pts[k - 1], pts[k]);
    if b.x == a.x {
        return b.y;
    }
    let t = (x - a.x) / (b.x - a.x);
    a.y + t * (b.y - a.y)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_27),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_361_96),
    (0.183_434_642_495_649_8, 0.362_683_783_378_361_96),
    (0.525_532_409_916_329, 0.313_706_645_877_887_27),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// Builds the datum blade from its camber-angle law and thickness distribution.
pub fn build_datum(spec: &DatumSpec) -> Result<BladeProfile> {
    spec.validate()?;
    let xs = cosine_stations(spec.points_per_side);
    let n = xs.len();

    // y_c(x) = ∫ tan θ(s) ds, integrated interval by interval.
    let mut camber = vec![0.0; n];
    for i in 1..n {
        let (a, b) = (xs[i - 1], xs[i]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let seg: f64 = GL8
            .iter()
            .map(|&(t, w)| w * spec.camber_angle(mid + half * t).tan())
            .sum();
        camber[i] = camber[i - 1] + half * seg;
    }

    let mut pressure_side = Vec::with_capacity(n);
    let mut suction_side = Vec::with_capacity(n);
    let [a0, a1, a2, a3] = spec.thickness_coefficients();
    for (i, (&x, &yc)) in xs.iter().zip(&camber).enumerate() {
        let h = if i == 0 || i == n - 1 {
            0.0
        } else {
            let hn = (a0 * x.sqrt() + a1 * x + a2 * x * x + a3 * x.powi(3)).max(0.0);
            hn / spec.camber_angle(x).cos()
        };
        pressure_side.push(Point::new(x, yc - h));
        suction_side.push(Point::new(x, yc + h));
    }
    let profile = BladeProfile {
        id: 0,
        pressure_side,
        suction_side,
    };
    profile
        .validate()
        .map_err(|e| Error::Geometry(format!("datum construction failed: {e}")))?;
    Ok(profile)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub side: Side,
    pub bump_centers: Vec<f64>,
    pub bump_amplitudes: Vec<f64>,
    pub bump_widths: Vec<f64>,
}

impl PerturbSpec {
    pub fn single(side: Side, center: f64, amplitude: f64, width: f64) -> Self {
        PerturbSpec {
            side,
            bump_centers: vec![center],
            bump_amplitudes: vec![amplitude],
            bump_widths: vec![width],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.bump_centers.len();
        if self.bump_amplitudes.len() != n || self.bump_widths.len() != n {
            return Err(Error::invalid("bump parameter lists differ in length"));
        }
        for ((&c, &a), &w) in self
            .bump_centers
            .iter()
            .zip(&self.bump_amplitudes)
            .zip(&self.bump_widths)
        {
            if !(c > FADE_START && c < 1.0 - FADE_START) {
                return Err(Error::invalid(format!(
                    "bump center {c} outside (0.05, 0.95)"
                )));
            }
            if !(a.abs() <= MAX_AMPLITUDE) {
                return Err(Error::invalid(format!(
                    "bump amplitude {a} exceeds 0.05 chord"
                )));
            }
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::invalid(format!("bump width {w} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Edge fade: zero for `x <= 0.05` and `x >= 0.95`, one on `[0.10, 0.90]`.
pub fn edge_fade(x: f64) -> f64 {
    smoothstep((x - FADE_START) / FADE_RAMP) * smoothstep((1.0 - FADE_START - x) / FADE_RAMP)
}

/// Compact sine bump of unit height centered at `center`, support `width`,
/// multiplied by the edge fade.
pub fn bump_shape(x: f64, center: f64, width: f64) -> f64 {
    let u = (x - center) / width;
    if u.abs() >= 0.5 {
        return 0.0;
    }
    let c = (std::f64::consts::PI * u).cos();
    c * c * edge_fade(x)
}

/// Displacement field of one side, normal to the camber line in the
/// tangential direction. Each bump is scaled so that its peak over the
/// discrete surface stations equals its amplitude.
pub fn displacement_field(xs: &[f64], p: &PerturbSpec) -> Result<Vec<f64>> {
    let mut field = vec![0.0; xs.len()];
    for ((&c, &a), &w) in p
        .bump_centers
        .iter()
        .zip(&p.bump_amplitudes)
        .zip(&p.bump_widths)
    {
        if a == 0.0 {
            continue;
        }
        let shape: Vec<f64> = xs.iter().map(|&x| bump_shape(x, c, w)).collect();
        let peak = shape.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(Error::invalid(format!(
                "bump at {c} with width {w} is not resolved by the surface stations"
            )));
        }
        for (f, s) in field.iter_mut().zip(&shape) {
            *f += a * s / peak;
        }
    }
    Ok(field)
}

/// Moves one side away from (positive amplitude) or toward the camber line.
pub fn perturb(datum: &BladeProfile, p: &PerturbSpec) -> Result<BladeProfile> {
    p.validate()?;
    datum.validate()?;
    let xs: Vec<f64> = datum.side(p.side).iter().map(|q| q.x).collect();
    if datum
        .pressure_side
        .iter()
        .zip(&datum.suction_side)
        .any(|(a, b)| a.x != b.x)
    {
        return Err(Error::Geometry(
            "perturbation requires shared stations on both sides".into(),
        ));
    }
    let camber = datum.camber();
    let field = displacement_field(&xs, p)?;

    let mut out = datum.clone();
    let sign = match p.side {
        Side::Suction => 1.0,
        Side::Pressure => -1.0,
    };
    let pts = match p.side {
        Side::Pressure => &mut out.pressure_side,
        Side::Suction => &mut out.suction_side,
    };
    for (i, (q, d)) in pts.iter_mut().zip(&field).enumerate() {
        if *d == 0.0 {
            continue;
        }
        q.y += sign * d;
        let half = sign * (q.y - camber[i]);
        if half < 0.0 {
            return Err(Error::Geometry(format!(
                "negative {} thickness at x/c = {:.4}",
                p.side, q.x
            )));
        }
    }
    out.validate()?;
    Ok(out)
}

/// Parameter axes for one side's single bump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideGrid {
    pub centers: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub widths: Vec<f64>,
}

impl SideGrid {
    fn len(&self) -> usize {
        self.centers.len() * self.amplitudes.len() * self.widths.len()
    }

    /// (center, amplitude, width) of grid cell `k`, widths varying fastest.
    fn at(&self, k: usize) -> (f64, f64, f64) {
        let nw = self.widths.len();
        let na = self.amplitudes.len();
        (
            self.centers[k / (na * nw)],
            self.amplitudes[(k / nw) % na],
            self.widths[k % nw],
        )
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> (f64, f64, f64) {
        fn draw<R: Rng>(axis: &[f64], rng: &mut R) -> f64 {
            let lo = axis.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = axis.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        }
        (
            draw(&self.centers, rng),
            draw(&self.amplitudes, rng),
            draw(&self.widths, rng),
        )
    }
}

/// Library sweep: one bump per side. Without `count` the full product grid
/// is enumerated; with `count` that many blades are drawn uniformly from the
/// ranges spanned by each axis, seeded per blade index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySweep {
    pub suction: SideGrid,
    pub pressure: SideGrid,
    #[serde(default)]
    pub count: Option<usize>,
}

impl Default for LibrarySweep {
    fn default() -> Self {
        LibrarySweep {
            suction: SideGrid {
                centers: vec![0.15, 0.9],
                amplitudes: vec![-0.015, 0.015],
                widths: vec![0.25, 0.45],
            },
            pressure: SideGrid {
                centers: vec![0.1, 0.8],
                amplitudes: vec![-0.04, 0.04],
                widths: vec![0.25, 0.45],
            },
            count: Some(4096),
        }
    }
}

impl LibrarySweep {
    pub fn grid_size(&self) -> usize {
        self.suction.len() * self.pressure.len()
    }

    pub fn requested(&self) -> usize {
        self.count.unwrap_or_else(|| self.grid_size())
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size() == 0 {
            return Err(Error::invalid("sweep grid has an empty axis"));
        }
        if self.requested() == 0 {
            return Err(Error::invalid("sweep requests zero blades"));
        }
        if self.requested() > u32::MAX as usize {
            return Err(Error::invalid("sweep exceeds u32 blade ids"));
        }
        Ok(())
    }

    /// Perturbations (suction, pressure) for library index `index`.
    pub fn perturbations(&self, index: usize, seed: u64) -> [PerturbSpec; 2] {
        let (s, p) = match self.count {
            None => {
                let np = self.pressure.len();
                (self.suction.at(index / np), self.pressure.at(index % np))
            }
            Some(_) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index as u64);
                let s = self.suction.sample(&mut rng);
                (s, self.pressure.sample(&mut rng))
            }
        };
        [
            PerturbSpec::single(Side::Suction, s.0, s.1, s.2),
            PerturbSpec::single(Side::Pressure, p.0, p.1, p.2),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedBlade {
    pub id: u32,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Library {
    pub requested: usize,
    pub profiles: Vec<BladeProfile>,
    pub skipped: Vec<SkippedBlade>,
}

fn library_member(
    datum: &BladeProfile,
    sweep: &LibrarySweep,
    index: usize,
    seed: u64,
) -> Result<BladeProfile> {
    let mut blade = datum.clone();
    for p in sweep.perturbations(index, seed) {
        blade = perturb(&blade, &p)?;
    }
    blade.id = index as u32;
    Ok(blade)
}

/// Generates the library in index order. Invalid members are skipped and logged.
pub fn generate_library(datum: &BladeProfile, sweep: &LibrarySweep, seed: u64) -> Result<Library> {
    sweep.validate()?;
    datum.validate()?;
    let requested = sweep.requested();
    let results: Vec<Result<BladeProfile>> = (0..requested)
        .into_par_iter()
        .map(|i| library_member(datum, sweep, i, seed))
        .collect();

    let mut profiles = Vec::with_capacity(requested);
    let mut skipped = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => profiles.push(p),
            Err(e) => {
                log::warn!("skipping blade {i}: {e}");
                skipped.push(SkippedBlade {
                    id: i as u32,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(Library {
        requested,
        profiles,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn datum() -> BladeProfile {
        build_datum(&DatumSpec::default()).unwrap()
    }

    fn mean_line_angle(p: &BladeProfile, at_te: bool) -> f64 {
        let c = p.camber();
        let n = c.len();
        let (i, j) = if at_te { (n - 2, n - 1) } else { (0, 1) };
        let dx = p.suction_side[j].x - p.suction_side[i].x;
        ((c[j] - c[i]) / dx).atan().to_degrees()
    }

    #[test]
    fn datum_meets_metal_angles() {
        let p = datum();
        assert_eq!(p.pressure_side.len() + p.suction_side.len(), 400);
        let le = mean_line_angle(&p, false);
        let te = mean_line_angle(&p, true);
        assert!((le - 41.08).abs() < 0.1, "LE angle {le}");
        assert!((te + 69.25).abs() < 0.1, "TE angle {te}");
    }

    #[test]
    fn zero_thickness_collapses_to_camber() {
        let spec = DatumSpec {
            max_thickness_to_chord: 0.0,
            ..DatumSpec::default()
        };
        let p = build_datum(&spec).unwrap();
        for (s, q) in p.suction_side.iter().zip(&p.pressure_side) {
            assert_eq!(s, q);
        }
    }

    #[test]
    fn rejects_invalid_datum_specs() {
        for bad in [
            DatumSpec {
                max_thickness_to_chord: 0.5,
                ..DatumSpec::default()
            },
            DatumSpec {
                pitch_to_chord: 0.0,
                ..DatumSpec::default()
            },
            DatumSpec {
                exit_metal_angle: 89.0,
                ..DatumSpec::default()
            },
        ] {
            assert!(build_datum(&bad).is_err());
        }
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let d = datum();
        let p = perturb(&d, &PerturbSpec::single(Side::Suction, 0.5, 0.0, 0.2)).unwrap();
        assert_eq!(p, d);
    }

    #[test]
    fn single_bump_peak_matches_brute_force() {
        let d = datum();
        let p = perturb(&d, &PerturbSpec::single(Side::Suction, 0.5, 0.01, 0.2)).unwrap();
        let disp: Vec<f64> = p
            .suction_side
            .iter()
            .zip(&d.suction_side)
            .map(|(a, b)| a.y - b.y)
            .collect();
        let (imax, dmax) =
            disp.iter().enumerate().fold(
                (0, f64::MIN),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
        assert!((dmax - 0.01).abs() < 1e-6);
        // oracle: station nearest 0.5 by direct scan
        let nearest = d
            .suction_side
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.x - 0.5).abs().total_cmp(&(b.1.x - 0.5).abs()))
            .unwrap()
            .0;
        // two stations straddle 0.5 symmetrically; either is "nearest"
        assert!(
            imax == nearest
                || (d.suction_side[imax].x - 0.5).abs() - (d.suction_side[nearest].x - 0.5).abs()
                    < 1e-12
        );
        assert_eq!(p.pressure_side, d.pressure_side);
    }

    #[test]
    fn edges_do_not_move() {
        let d = datum();
        let p = perturb(&d, &PerturbSpec::single(Side::Pressure, 0.06, -0.03, 0.5)).unwrap();
        let n = d.points_per_side();
        for i in [0, n - 1] {
            assert!((p.pressure_side[i].y - d.pressure_side[i].y).abs() < 1e-4);
        }
    }

    #[test]
    fn rejects_out_of_range_bumps() {
        let d = datum();
        assert!(perturb(&d, &PerturbSpec::single(Side::Suction, 0.02, 0.01, 0.2)).is_err());
        assert!(perturb(&d, &PerturbSpec::single(Side::Suction, 0.5, 0.06, 0.2)).is_err());
    }

    #[test]
    fn rejects_negative_thickness() {
        let thin = DatumSpec {
            max_thickness_to_chord: 0.04,
            trailing_edge_wedge: 4.0,
            ..DatumSpec::default()
        };
        let d = build_datum(&thin).unwrap();
        let err = perturb(&d, &PerturbSpec::single(Side::Suction, 0.5, -0.05, 0.2));
        assert!(matches!(err, Err(Error::Geometry(_))));
    }

    #[test]
    fn grid_count_is_product() {
        let axis = SideGrid {
            centers: vec![0.3, 0.5, 0.7],
            amplitudes: vec![-0.01, -0.005, 0.0, 0.005, 0.01],
            widths: vec![0.2, 0.4],
        };
        let sweep = LibrarySweep {
            suction: axis.clone(),
            pressure: axis,
            count: None,
        };
        assert_eq!(sweep.requested(), 900);
        let lib = generate_library(&datum(), &sweep, 0).unwrap();
        assert_eq!(lib.profiles.len() + lib.skipped.len(), 900);
        let d = datum();
        assert!(lib
            .profiles
            .iter()
            .any(|p| p.pressure_side == d.pressure_side && p.suction_side == d.suction_side));
    }

    #[test]
    fn full_scale_count_is_accepted() {
        let sweep = LibrarySweep {
            count: Some(63_450),
            ..LibrarySweep::default()
        };
        sweep.validate().unwrap();
        assert_eq!(sweep.requested(), 63_450);
    }

    #[test]
    fn binary_record_layout() {
        let d = datum();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 400 * 16);
        let back = BladeProfile::read_from(&mut buf.as_slice(), 200).unwrap();
        assert_eq!(back, d);
    }
}
