//! Incompressible inviscid cascade flow by a linear-strength vortex panel method.
//!
//! The surface is a closed polygon through the profile points, traversed from
//! the trailing edge along the pressure side to the leading edge and back along
//! the suction side. Unknowns are the vortex-sheet strengths at the polygon
//! nodes (the trailing-edge node appears twice). Each panel's influence is the
//! analytic single-panel velocity plus, in cascade mode, the smooth remainder of
//! the periodic vortex-row kernel
//!
//! ```text
//! w(z) = -iΓ / (2t) · coth(π (z - z0) / t)
//! ```
//!
//! integrated with Gauss–Legendre quadrature. The onset flow is the inlet
//! velocity; the uniform `Γ / 2t` tangential shift between inlet and mean flow
//! is carried by the unknowns. Interior flow is stagnant, so the surface speed
//! at a node equals the local sheet strength.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::geometry::{BladeProfile, Point, Side, CLOSURE_TOL};

/// Tangency residual bound, relative to the inlet speed.
pub const TANGENCY_TOL: f64 = 1e-8;
/// Above this pivot-ratio estimate the influence matrix is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

type C = Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConditions {
    pub rho: f64,
    pub inlet_speed: f64,
    pub inlet_static_pressure: f64,
    /// Degrees from axial, positive toward `+y`.
    pub inlet_angle: f64,
    /// `f64::INFINITY` (or `null` in JSON) selects an isolated blade.
    #[serde(with = "infinite_as_null")]
    pub pitch_to_chord: f64,
    pub chord: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for FlowConditions {
    fn default() -> Self {
        FlowConditions {
            rho: 1.0,
            inlet_speed: 1.0,
            inlet_static_pressure: 0.0,
            inlet_angle: 41.08,
            pitch_to_chord: 0.79,
            chord: 1.0,
        }
    }
}

impl FlowConditions {
    pub fn isolated(inlet_angle: f64) -> Self {
        FlowConditions {
            inlet_angle,
            pitch_to_chord: f64::INFINITY,
            ..FlowConditions::default()
        }
    }

    pub fn is_isolated(&self) -> bool {
        self.pitch_to_chord.is_infinite()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0
            && self.inlet_speed > 0.0
            && self.pitch_to_chord > 0.0
            && self.chord > 0.0)
        {
            return Err(Error::invalid(
                "rho, inlet_speed, pitch_to_chord and chord must be positive",
            ));
        }
        if !self.inlet_angle.is_finite() || self.inlet_angle.abs() >= 85.0 {
            return Err(Error::invalid("inlet angle must lie within ±85°"));
        }
        Ok(())
    }

    /// Axial velocity, unchanged through an incompressible cascade.
    pub fn axial_velocity(&self) -> f64 {
        self.inlet_speed * self.inlet_angle.to_radians().cos()
    }

    pub fn inlet_tangential_velocity(&self) -> f64 {
        self.inlet_speed * self.inlet_angle.to_radians().sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpSample {
    pub side: Side,
    pub cx: f64,
    pub cp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpDistribution {
    /// Pressure side LE→TE, then suction side LE→TE.
    pub samples: Vec<CpSample>,
    /// Counter-clockwise circulation per blade, `Γ / (U c)`.
    pub circulation: f64,
    /// Signed, degrees from axial, positive toward `+y`.
    pub exit_angle: f64,
}

impl CpDistribution {
    pub fn side(&self, side: Side) -> &[CpSample] {
        let n = self.samples.len() / 2;
        match side {
            Side::Pressure => &self.samples[..n],
            Side::Suction => &self.samples[n..],
        }
    }

    pub fn max_cp(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.cp)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Cp values only, in surface-point order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        for s in &self.samples {
            binio::write_f64(w, s.cp)?;
        }
        binio::write_f64(w, self.circulation)?;
        binio::write_f64(w, self.exit_angle)?;
        Ok(())
    }

    /// Reads a record written by [`CpDistribution::write_to`]; `x/c` comes from the profile.
    pub fn read_from<R: Read>(r: &mut R, profile: &BladeProfile) -> Result<Self> {
        let mut samples = Vec::with_capacity(2 * profile.points_per_side());
        for (side, _, p) in profile.points() {
            samples.push(CpSample {
                side,
                cx: p.x,
                cp: binio::read_f64(r)?,
            });
        }
        Ok(CpDistribution {
            samples,
            circulation: binio::read_f64(r)?,
            exit_angle: binio::read_f64(r)?,
        })
    }
}

/// Exit-to-inlet dynamic head ratio `(V2 / V1)^2` from the cascade momentum relation.
pub fn dynamic_head_ratio(dist: &CpDistribution, flow: &FlowConditions) -> f64 {
    let a1 = flow.inlet_angle.to_radians();
    let a2 = dist.exit_angle.to_radians();
    (a1.cos() / a2.cos()).powi(2)
}

/// Exit flow angle (degrees) from the normalized circulation and pitch:
/// `v2 = v1 + Γ / s` with the axial velocity unchanged.
pub fn exit_angle_from_circulation(circulation: f64, flow: &FlowConditions) -> f64 {
    let a1 = flow.inlet_angle.to_radians();
    let mut v2 = a1.sin();
    if !flow.is_isolated() {
        v2 += circulation / flow.pitch_to_chord;
    }
    v2.atan2(a1.cos()).to_degrees()
}

/// Recomputes the exit angle from the stored circulation and writes it back.
pub fn exit_flow_angle(dist: &mut CpDistribution, flow: &FlowConditions) -> f64 {
    dist.exit_angle = exit_angle_from_circulation(dist.circulation, flow);
    dist.exit_angle
}

/// Linear interpolation of Cp in `x/c` along one side.
pub fn sample_cp_at(dist: &CpDistribution, side: Side, cx: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&cx) {
        return Err(Error::Range(format!("x/c = {cx} outside [0, 1]")));
    }
    let s = dist.side(side);
    let k = s.partition_point(|p| p.cx < cx);
    if k == 0 {
        return Ok(s[0].cp);
    }
    if k >= s.len() {
        return Ok(s[s.len() - 1].cp);
    }
    let (a, b) = (s[k - 1], s[k]);
    if b.cx == cx || b.cx == a.cx {
        return Ok(b.cp);
    }
    let t = (cx - a.cx) / (b.cx - a.cx);
    Ok(a.cp + t * (b.cp - a.cp))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Trailing-edge Kutta condition; when off, the circulation is set to zero
    /// (closed bodies without a sharp trailing edge).
    pub kutta: bool,
    /// Gauss points per panel for the periodic remainder.
    pub quadrature_points: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kutta: true,
            quadrature_points: 4,
        }
    }
}

/// Solution with solver diagnostics.
#[derive(Debug, Clone)]
pub struct CascadeSolution {
    pub distribution: CpDistribution,
    /// Nodal sheet strengths, TE → pressure → LE → suction → TE.
    pub strengths: Vec<f64>,
    /// Largest normal velocity at a control point, divided by `U`.
    pub tangency_residual: f64,
    pub condition_estimate: f64,
}

struct Panel {
    a: C,
    b: C,
    len: f64,
    /// Unit tangent, `a → b`.
    dir: C,
}

impl Panel {
    fn new(a: Point, b: Point) -> Self {
        let (a, b) = (C::new(a.x, a.y), C::new(b.x, b.y));
        let len = (b - a).norm();
        Panel {
            a,
            b,
            len,
            dir: (b - a) / len,
        }
    }

    fn midpoint(&self) -> C {
        0.5 * (self.a + self.b)
    }

    fn normal(&self) -> C {
        C::i() * self.dir
    }

    /// Complex velocities `u - iv` induced at `z` by unit strength at the start
    /// and end nodes of a linear vortex panel.
    fn isolated_influence(&self, z: C) -> (C, C) {
        let zl = (z - self.a) * self.dir.conj();
        let l = self.len;
        let i0 = (zl / (zl - l)).ln();
        let ca = i0 * (1.0 - zl / l) + 1.0;
        let cb = i0 * (zl / l) - 1.0;
        let k = -C::i() / (2.0 * std::f64::consts::PI * self.dir);
        (k * ca, k * cb)
    }
}

/// `coth(x) - 1/x`, smooth through the origin.
fn coth_remainder(x: C) -> C {
    if x.norm() < 0.1 {
        let x2 = x * x;
        // x/3 - x^3/45 + 2x^5/945 - x^7/4725 + 2x^9/93555
        return x
            * (1.0 / 3.0
                + x2 * (-1.0 / 45.0
                    + x2 * (2.0 / 945.0 + x2 * (-1.0 / 4725.0 + x2 * (2.0 / 93555.0)))));
    }
    coth(x) - 1.0 / x
}

fn coth(x: C) -> C {
    if x.re < 0.0 {
        return -coth(-x);
    }
    let e = (-2.0 * x).exp();
    (1.0 + e) / (1.0 - e)
}

/// Gauss–Legendre nodes/weights on [0, 1].
fn gauss_unit(n: usize) -> Vec<(f64, f64)> {
    let table: &[(f64, f64)] = match n {
        1 => &[(0.0, 2.0)],
        2 => &[
            (-0.577_350_269_189_625_8, 1.0),
            (0.577_350_269_189_625_8, 1.0),
        ],
        3 => &[
            (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
            (0.0, 8.0 / 9.0),
            (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
        ],
        4 => &[
            (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
            (-0.339_981_043_584_856_3, 0.652_145_154_862_546_2),
            (0.339_981_043_584_856_3, 0.652_145_154_862_546_2),
            (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
        ],
        _ => &[
            (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
            (-0.538_469_310_105_683, 0.478_628_670_499_366_5),
            (0.0, 0.568_888_888_888_888_9),
            (0.538_469_310_105_683, 0.478_628_670_499_366_5),
            (0.906_179_845_938_664, 0.236_926_885_056_189_08),
        ],
    };
    table
        .iter()
        .map(|&(t, w)| (0.5 * (t + 1.0), 0.5 * w))
        .collect()
}

/// Closed node loop: TE, pressure side back to LE, suction side to TE.
fn node_loop(profile: &BladeProfile) -> Vec<Point> {
    let n = profile.points_per_side();
    let mut nodes: Vec<Point> = profile.pressure_side.iter().rev().cloned().collect();
    nodes.extend_from_slice(&profile.suction_side[1..n]);
    nodes
}

fn check_closed(profile: &BladeProfile) -> Result<()> {
    let n = profile.points_per_side();
    if n < 3 || profile.pressure_side.len() != n {
        return Err(Error::Geometry("profile sides differ in length".into()));
    }
    let le = (profile.pressure_side[0].x - profile.suction_side[0].x)
        .hypot(profile.pressure_side[0].y - profile.suction_side[0].y);
    let te = (profile.pressure_side[n - 1].x - profile.suction_side[n - 1].x)
        .hypot(profile.pressure_side[n - 1].y - profile.suction_side[n - 1].y);
    if le > CLOSURE_TOL || te > CLOSURE_TOL {
        return Err(Error::Geometry(format!(
            "profile is not closed (LE gap {le:.2e}, TE gap {te:.2e})"
        )));
    }
    Ok(())
}

pub fn solve_cascade(profile: &BladeProfile, flow: &FlowConditions) -> Result<CpDistribution> {
    Ok(solve_detailed(profile, flow, &SolverOptions::default())?.distribution)
}

pub fn solve_detailed(
    profile: &BladeProfile,
    flow: &FlowConditions,
    opts: &SolverOptions,
) -> Result<CascadeSolution> {
    flow.validate()?;
    check_closed(profile)?;
    let nodes = node_loop(profile);
    let panels: Vec<Panel> = nodes.windows(2).map(|w| Panel::new(w[0], w[1])).collect();
    if panels.iter().any(|p| !(p.len > 0.0)) {
        return Err(Error::Geometry("zero-length panel".into()));
    }
    let np = panels.len();
    let nu = np + 1;

    let pitch = flow.pitch_to_chord;
    let periodic = !flow.is_isolated();
    let gauss = gauss_unit(opts.quadrature_points);
    let u_axial = flow.axial_velocity();
    let v_inlet = flow.inlet_tangential_velocity();
    let onset = C::new(u_axial, v_inlet) / flow.inlet_speed;

    // Γ weights: Γ = Σ_j weight_j γ_j
    let mut circ_weight = vec![0.0; nu];
    for (j, p) in panels.iter().enumerate() {
        circ_weight[j] += 0.5 * p.len;
        circ_weight[j + 1] += 0.5 * p.len;
    }

    let mut a = DMatrix::<f64>::zeros(nu, nu);
    let mut rhs = DVector::<f64>::zeros(nu);
    for (i, pi) in panels.iter().enumerate() {
        let z = pi.midpoint();
        let n = pi.normal();
        for (j, pj) in panels.iter().enumerate() {
            let (mut wa, mut wb) = pj.isolated_influence(z);
            if periodic {
                let scale = -C::i() / (2.0 * pitch);
                for &(s, w) in &gauss {
                    let zeta = pj.a + pj.dir * (s * pj.len);
                    let r = scale * coth_remainder(std::f64::consts::PI * (z - zeta) / pitch);
                    let wl = w * pj.len;
                    wa += r * (wl * (1.0 - s));
                    wb += r * (wl * s);
                }
            }
            // normal velocity = Re(w · n)
            a[(i, j)] += (wa * n).re;
            a[(i, j + 1)] += (wb * n).re;
        }
        if periodic {
            // mean-flow tangential shift Γ / (2t), normal component n_y
            let k = n.im / (2.0 * pitch);
            for (j, cw) in circ_weight.iter().enumerate() {
                a[(i, j)] += k * cw;
            }
        }
        rhs[i] = -(onset.conj() * n).re;
    }
    if opts.kutta {
        a[(np, 0)] = 1.0;
        a[(np, np)] = 1.0;
    } else {
        for (j, cw) in circ_weight.iter().enumerate() {
            a[(np, j)] = *cw;
        }
    }

    let lu = a.clone().lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..nu).map(|k| u[(k, k)].abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if dmin > 0.0 {
        dmax / dmin
    } else {
        f64::INFINITY
    };
    if !(condition < SINGULAR_CONDITION) {
        return Err(Error::SingularSystem { condition });
    }
    let mut gamma = lu.solve(&rhs).ok_or(Error::SingularSystem { condition })?;
    // one step of iterative refinement
    let r = &rhs - &a * &gamma;
    if let Some(dg) = lu.solve(&r) {
        gamma += dg;
    }
    let resid = (&a * &gamma - &rhs).rows(0, np).amax();
    if !resid.is_finite() || resid > TANGENCY_TOL {
        return Err(Error::Residual { residual: resid });
    }

    let strengths: Vec<f64> = gamma.iter().cloned().collect();
    let circulation: f64 = circ_weight.iter().zip(&strengths).map(|(w, g)| w * g).sum();

    // Node k ↔ pressure point (n-1-k) for k < n, suction point (k-n+1) beyond.
    let npts = profile.points_per_side();
    let mut samples = Vec::with_capacity(2 * npts);
    for (i, p) in profile.pressure_side.iter().enumerate() {
        let g = strengths[npts - 1 - i];
        samples.push(CpSample {
            side: Side::Pressure,
            cx: p.x,
            cp: 1.0 - g * g,
        });
    }
    for (i, p) in profile.suction_side.iter().enumerate() {
        let g = strengths[npts - 1 + i];
        samples.push(CpSample {
            side: Side::Suction,
            cx: p.x,
            cp: 1.0 - g * g,
        });
    }
    let mut distribution = CpDistribution {
        samples,
        circulation,
        exit_angle: 0.0,
    };
    exit_flow_angle(&mut distribution, flow);
    Ok(CascadeSolution {
        distribution,
        strengths,
        tangency_residual: resid,
        condition_estimate: condition,
    })
}
