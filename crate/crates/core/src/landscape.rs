//! Ground-truth potential energy landscape.
//!
//! Each beam is a zero-thickness plate hinged along the lab y-axis at `x = 0,
//! z = 0`. At deflection `theta` it occupies the points `(s sin theta, y,
//! s cos theta)` for `0 <= s <= height` and `y` inside its lateral slab. The
//! clearance between plate and body is `min rho * sin(theta - phi)` over the
//! body points inside the slab, where `(rho, phi)` are polar coordinates in
//! the x-z plane measured from the hinge (`phi = atan2(x, z)`). Clearance is
//! monotone in `theta`, and its root is the largest `phi` among body points
//! within reach of the plate.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{shell_build, BodyParams, Dof, Mat3, Pose, ShellMesh, ShellParams, SurfaceHit, TouchCell, Vec3};

/// Largest admissible deflection before the pose is declared infeasible.
pub const MAX_DEFLECTION: f64 = 89.0 * std::f64::consts::PI / 180.0;

/// Relative disagreement between one-sided slopes that triggers a refinement.
const SLOPE_SPLIT: f64 = 0.05;

/// Finite-difference step for both translations (mm) and rotations (rad).
pub const GRADIENT_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// A torsional-hinge plate obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub side: Side,
    /// Lateral position of the plate's mid-line (mm).
    pub hinge_y: f64,
    pub width: f64,
    pub height: f64,
    /// Torsional stiffness (N mm / rad).
    pub k: f64,
    /// Preload torque at zero deflection (N mm).
    pub tau: f64,
}

impl Beam {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(invalid("beam.k", "stiffness must be > 0"));
        }
        if !(self.tau >= 0.0) {
            return Err(invalid("beam.tau", "preload must be >= 0"));
        }
        if !(self.width > 0.0) || !(self.height > 0.0) {
            return Err(invalid("beam.width", "plate dimensions must be > 0"));
        }
        Ok(())
    }

    pub fn y_min(&self) -> f64 {
        self.hinge_y - 0.5 * self.width
    }

    pub fn y_max(&self) -> f64 {
        self.hinge_y + 0.5 * self.width
    }

    /// Elastic energy `k theta^2 / 2 + tau theta` (N mm).
    pub fn energy(&self, theta: f64) -> f64 {
        0.5 * self.k * theta * theta + self.tau * theta
    }

    /// Restoring torque about the hinge (N mm).
    pub fn torque(&self, theta: f64) -> f64 {
        self.k * theta + self.tau
    }
}

/// Beam pair layout and calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamParams {
    /// Clear gap between the two plates, symmetric about `y = 0` (mm).
    pub gap: f64,
    pub width: f64,
    pub height: f64,
    pub left_k: f64,
    pub left_tau: f64,
    pub right_k: f64,
    pub right_tau: f64,
}

impl Default for BeamParams {
    fn default() -> Self {
        Self {
            gap: 130.0,
            width: 30.0,
            height: 200.0,
            left_k: 285.0,
            left_tau: 91.0,
            right_k: 324.0,
            right_tau: 77.0,
        }
    }
}

impl BeamParams {
    /// Left beam at `+y`, right beam at `-y`.
    pub fn beams(&self) -> Result<[Beam; 2]> {
        if !(self.gap > 0.0) {
            return Err(invalid("beams.gap", "must be > 0"));
        }
        let offset = 0.5 * self.gap + 0.5 * self.width;
        let beams = [
            Beam {
                side: Side::Left,
                hinge_y: offset,
                width: self.width,
                height: self.height,
                k: self.left_k,
                tau: self.left_tau,
            },
            Beam {
                side: Side::Right,
                hinge_y: -offset,
                width: self.width,
                height: self.height,
                k: self.right_k,
                tau: self.right_tau,
            },
        ];
        for b in &beams {
            b.validate()?;
        }
        Ok(beams)
    }
}

/// Fixed coordinates of the traverse: lateral offset, height and yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    pub y: f64,
    pub z: f64,
    pub gamma: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self { y: -6.0, z: 138.0, gamma: 0.0 }
    }
}

impl Protocol {
    pub fn pose(&self, x: f64, alpha: f64, beta: f64) -> Pose {
        Pose::new(x, self.y, self.z, alpha, beta, self.gamma)
    }
}

/// Everything needed to evaluate the landscape.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: ShellMesh,
    pub beams: [Beam; 2],
    pub body: BodyParams,
    /// Gravitational potential is zero at this height with `alpha = beta = 0`.
    pub z_ref: f64,
}

impl Scene {
    pub fn new(mesh: ShellMesh, beams: [Beam; 2], body: BodyParams, z_ref: f64) -> Result<Self> {
        body.validate()?;
        for b in &beams {
            b.validate()?;
        }
        if !z_ref.is_finite() {
            return Err(invalid("z_ref", "must be finite"));
        }
        Ok(Self { mesh, beams, body, z_ref })
    }

    /// Builds the mesh and beams from their parameter sets.
    pub fn build(shell: &ShellParams, beams: &BeamParams, body: BodyParams, z_ref: f64) -> Result<Self> {
        Self::new(shell_build(shell)?, beams.beams()?, body, z_ref)
    }
}

/// Body point that could touch the plate, in lab coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub point: Vec3,
    pub rho: f64,
    pub phi: f64,
    pub triangle: u32,
    /// Lies on the plate's top edge circle `rho = height`.
    pub on_tip: bool,
    /// Lies on one of the plate's lateral edge planes.
    pub on_side: bool,
    /// Which triangle edges (bits 0..3) the point lies on: two bits for a
    /// mesh vertex, one for a point on an edge, none for a face interior.
    pub edges: u8,
}

/// Body surface clipped to the region one plate can sweep.
#[derive(Debug, Clone, Default)]
pub struct Candidates {
    pub points: Vec<Candidate>,
}

impl Candidates {
    /// Signed plate-body clearance at deflection `theta` (mm). Positive when
    /// every body point lies behind the plate.
    pub fn clearance(&self, theta: f64) -> f64 {
        self.points
            .iter()
            .map(|c| c.rho * (theta - c.phi).sin())
            .fold(f64::INFINITY, f64::min)
    }

    /// The candidate with the largest polar angle.
    pub fn extreme(&self) -> Option<&Candidate> {
        self.points.iter().max_by(|a, b| a.phi.total_cmp(&b.phi))
    }
}

/// Resolved beam state for one pose.
#[derive(Debug, Clone, Copy)]
pub struct BeamContact {
    pub theta: f64,
    /// Contact point in the lab frame (mm).
    pub point: Vec3,
    /// Contact point in the body frame (mm).
    pub body_point: Vec3,
    /// Unit direction `n` such that the force on the robot is `-|N| n` (lab).
    pub normal: Vec3,
    /// Moment arm `(p x n) . y` of the contact line about the hinge (mm).
    pub arm: f64,
    pub on_tip: bool,
    pub on_side: bool,
    /// Touch-sensor view of the contact (cell, cell normal, type).
    pub hit: SurfaceHit,
}

impl BeamContact {
    /// Normal force magnitude from the massless-plate torque balance (N).
    pub fn normal_force(&self, beam: &Beam) -> Result<f64> {
        if self.arm.abs() < 1.0 {
            return Err(Error::IllConditionedContact { arm: self.arm.abs() });
        }
        Ok(beam.torque(self.theta) / self.arm.abs())
    }
}

struct PoseFrame {
    r: Mat3,
    t: Vec3,
}

impl PoseFrame {
    fn new(pose: &Pose) -> Self {
        Self { r: pose.rotation(), t: pose.position() }
    }

    fn lab(&self, p: &Vec3) -> Vec3 {
        self.r * p + self.t
    }
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: Vec3,
    side: bool,
    edges: u8,
}

// Sutherland-Hodgman against `sign * (p[axis] - value) >= 0`.
fn clip_plane(input: &[ClipVertex], out: &mut Vec<ClipVertex>, axis: usize, value: f64, sign: f64, mark_side: bool) {
    out.clear();
    let n = input.len();
    for i in 0..n {
        let a = input[i];
        let b = input[(i + 1) % n];
        let da = sign * (a.p[axis] - value);
        let db = sign * (b.p[axis] - value);
        if da >= 0.0 {
            out.push(a);
        }
        if (da >= 0.0) != (db >= 0.0) {
            let t = da / (da - db);
            let mut p = a.p + (b.p - a.p) * t;
            p[axis] = value;
            out.push(ClipVertex {
                p,
                side: mark_side || (a.side && b.side),
                edges: a.edges & b.edges,
            });
        }
    }
}

/// Collects the body points that bound the deflection of `beam` at `pose`.
pub fn beam_candidates(scene: &Scene, pose: &Pose, beam: &Beam) -> Candidates {
    let frame = PoseFrame::new(pose);
    let mut out = Candidates::default();
    collect_candidates(scene, &frame, beam, &mut out);
    out
}

fn collect_candidates(scene: &Scene, frame: &PoseFrame, beam: &Beam, out: &mut Candidates) {
    gather(scene, frame, beam, out, false);
}

// Only the points within `TIE_TOLERANCE` of the largest polar angle decide a
// deflection, so cells whose bounding sphere cannot reach that angle are
// skipped when `prune` is set. The kept points stay in mesh order.
fn gather(scene: &Scene, frame: &PoseFrame, beam: &Beam, out: &mut Candidates, prune: bool) {
    out.points.clear();
    let mesh = &scene.mesh;
    // Cheap cull: the whole hull sits behind the hinge line.
    let reach = mesh.bounding_radius();
    if frame.t.x + reach < 0.0 {
        return;
    }
    let (y0, y1, l) = (beam.y_min(), beam.y_max(), beam.height);
    let mut live: Vec<(f64, usize, &TouchCell)> = Vec::new();
    for (order, cell) in mesh.surface_cells().enumerate() {
        let c = frame.lab(&cell.center);
        let r = cell.bound_radius + 1e-9;
        if c.x < -r || c.y < y0 - r || c.y > y1 + r {
            continue;
        }
        if c.x.hypot(c.z) - r > l {
            // Entirely beyond the plate tip.
            continue;
        }
        live.push((phi_bound(c, r), order, cell));
    }
    let mut a: Vec<ClipVertex> = Vec::with_capacity(8);
    let mut b: Vec<ClipVertex> = Vec::with_capacity(8);
    if !prune {
        for &(_, _, cell) in &live {
            clip_cell(mesh, frame, cell, (y0, y1, l), &mut a, &mut b, &mut out.points);
        }
        return;
    }
    live.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)));
    let mut best = f64::NEG_INFINITY;
    let mut spans: Vec<(usize, usize, usize)> = Vec::new();
    for &(bound, order, cell) in &live {
        if bound < best - 2.0 * TIE_TOLERANCE {
            break;
        }
        let start = out.points.len();
        clip_cell(mesh, frame, cell, (y0, y1, l), &mut a, &mut b, &mut out.points);
        for c in &out.points[start..] {
            best = best.max(c.phi);
        }
        spans.push((order, start, out.points.len()));
    }
    spans.sort_unstable();
    let mut ordered = Vec::with_capacity(out.points.len());
    for (_, s, e) in spans {
        ordered.extend_from_slice(&out.points[s..e]);
    }
    out.points = ordered;
}

// Upper bound on the polar angle atan2(x, z) over a sphere in the lab frame.
fn phi_bound(c: Vec3, r: f64) -> f64 {
    let d = c.x.hypot(c.z);
    if d <= r || c.x < 0.0 {
        return std::f64::consts::PI;
    }
    c.x.atan2(c.z) + (r / d).asin() + 1e-12
}

fn clip_cell(
    mesh: &ShellMesh,
    frame: &PoseFrame,
    cell: &TouchCell,
    (y0, y1, l): (f64, f64, f64),
    a: &mut Vec<ClipVertex>,
    b: &mut Vec<ClipVertex>,
    out: &mut Vec<Candidate>,
) {
    for &t in &cell.triangles {
        let tri = &mesh.triangles[t as usize];
        a.clear();
        // Vertex k lies on edges k (to k+1) and k+2 (from k-1).
        for (k, v) in tri.vertices.iter().enumerate() {
            a.push(ClipVertex {
                p: frame.lab(&mesh.vertices[*v as usize]),
                side: false,
                edges: (1 << k) | (1 << ((k + 2) % 3)),
            });
        }
        clip_plane(a, b, 0, 0.0, 1.0, false);
        if b.is_empty() {
            continue;
        }
        clip_plane(b, a, 1, y0, 1.0, true);
        if a.is_empty() {
            continue;
        }
        clip_plane(a, b, 1, y1, -1.0, true);
        if b.is_empty() {
            continue;
        }
        push_within_reach(b, l, t, out);
    }
}

// Keeps polygon vertices with rho <= l and adds crossings of rho = l.
fn push_within_reach(poly: &[ClipVertex], l: f64, tri: u32, out: &mut Vec<Candidate>) {
    let n = poly.len();
    let l2 = l * l;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let ra2 = a.p.x * a.p.x + a.p.z * a.p.z;
        let rb2 = b.p.x * b.p.x + b.p.z * b.p.z;
        if ra2 <= l2 {
            out.push(make_candidate(a.p, false, a.side, a.edges, tri));
        }
        if (ra2 <= l2) != (rb2 <= l2) {
            // Solve |a + t (b - a)|^2 = l^2 in the x-z plane.
            let dx = b.p.x - a.p.x;
            let dz = b.p.z - a.p.z;
            let qa = dx * dx + dz * dz;
            let qb = 2.0 * (a.p.x * dx + a.p.z * dz);
            let qc = ra2 - l2;
            let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
            let t1 = (-qb + disc) / (2.0 * qa);
            let t2 = (-qb - disc) / (2.0 * qa);
            let t = if (0.0..=1.0).contains(&t1) { t1 } else { t2.clamp(0.0, 1.0) };
            let p = a.p + (b.p - a.p) * t;
            out.push(make_candidate(p, true, a.side && b.side, a.edges & b.edges, tri));
        }
    }
}

fn make_candidate(point: Vec3, on_tip: bool, on_side: bool, edges: u8, triangle: u32) -> Candidate {
    Candidate {
        edges,
        point,
        rho: point.x.hypot(point.z),
        phi: point.x.atan2(point.z),
        triangle,
        on_tip,
        on_side,
    }
}

/// Deflection of `beam` at `pose` and the contact that sets it.
///
/// Returns `Ok(None)` when the body does not reach the undeflected plate.
pub fn beam_deflection(scene: &Scene, pose: &Pose, beam: &Beam) -> Result<Option<BeamContact>> {
    pose.validate()?;
    let frame = PoseFrame::new(pose);
    let mut cands = Candidates::default();
    deflection_with(scene, pose, &frame, beam, &mut cands)
}

fn deflection_with(
    scene: &Scene,
    pose: &Pose,
    frame: &PoseFrame,
    beam: &Beam,
    cands: &mut Candidates,
) -> Result<Option<BeamContact>> {
    gather(scene, frame, beam, cands, true);
    let Some(best) = cands.extreme().copied() else {
        return Ok(None);
    };
    // Clearance at theta = 0 is -max(rho sin phi); a non-positive maximum
    // angle means the plate stays upright.
    if best.phi <= 0.0 {
        return Ok(None);
    }
    if best.phi > MAX_DEFLECTION {
        return Err(Error::InfeasiblePose {
            x: pose.x,
            alpha_deg: pose.alpha.to_degrees(),
            beta_deg: pose.beta.to_degrees(),
            reason: format!(
                "{:?} beam would deflect past {:.0} deg",
                beam.side,
                MAX_DEFLECTION.to_degrees()
            ),
        });
    }
    let theta = best.phi;
    let e_phi = Vec3::new(theta.cos(), 0.0, -theta.sin());
    let point = line_contact_center(cands, &best);
    let body_point = frame.r.transpose() * (point - frame.t);
    let normal = contact_normal(scene, frame, &best, e_phi);
    let arm = point.z * normal.x - point.x * normal.z;
    let hit = scene
        .mesh
        .hit_on_triangle(&body_point, best.triangle as usize, 0.0);
    Ok(Some(BeamContact {
        theta,
        point,
        body_point,
        normal,
        arm,
        on_tip: best.on_tip,
        on_side: best.on_side,
        hit,
    }))
}

/// Angular tolerance under which candidates count as touching together.
const TIE_TOLERANCE: f64 = 1e-9;

// When the plate lies flat against a face, the limiting angle is shared by a
// whole segment of points along the plate. The resultant then acts at the
// middle of that segment, which is also where the landscape's central
// difference sees it.
fn line_contact_center(cands: &Candidates, best: &Candidate) -> Vec3 {
    let mut lo = best.point;
    let mut hi = best.point;
    for c in &cands.points {
        if c.phi >= best.phi - TIE_TOLERANCE {
            if c.point.y < lo.y {
                lo = c.point;
            }
            if c.point.y > hi.y {
                hi = c.point;
            }
        }
    }
    if hi.y - lo.y > 1e-6 {
        (lo + hi) * 0.5
    } else {
        best.point
    }
}

// Direction of the force the plate exerts, consistent with how the limiting
// body point moves. A mesh vertex moves rigidly, so the plate face pushes
// along its own normal. A point sliding along a mesh edge while pinned to a
// plate side plane or tip circle takes the plate-face normal plus a multiple
// of that constraint's normal, chosen perpendicular to the edge. A point
// pinned to both inside a face takes the face normal.
fn contact_normal(scene: &Scene, frame: &PoseFrame, c: &Candidate, e_phi: Vec3) -> Vec3 {
    let tri = &scene.mesh.triangles[c.triangle as usize];
    let raw = match (c.edges.count_ones(), c.on_side, c.on_tip) {
        (2.., _, _) => e_phi,
        (1, side, tip) if side != tip => {
            let k = c.edges.trailing_zeros() as usize;
            let a = scene.mesh.vertices[tri.vertices[k] as usize];
            let b = scene.mesh.vertices[tri.vertices[(k + 1) % 3] as usize];
            let d = frame.r * (b - a);
            let axis = if side {
                Vec3::y()
            } else {
                Vec3::new(c.phi.sin(), 0.0, c.phi.cos())
            };
            let ad = axis.dot(&d);
            if ad.abs() < 1e-9 * d.norm() {
                e_phi
            } else {
                e_phi - axis * (e_phi.dot(&d) / ad)
            }
        }
        (0, true, true) => frame.r * tri.normal,
        _ => e_phi,
    };
    let len = raw.norm();
    if len < 1e-12 {
        return e_phi;
    }
    let n = raw / len;
    if n.dot(&e_phi) > 0.0 {
        n
    } else if n.dot(&e_phi) < 0.0 {
        -n
    } else {
        e_phi
    }
}

/// Potential energy at one pose with its parts.
#[derive(Debug, Clone, Copy)]
pub struct Energy {
    pub total: f64,
    pub gravity: f64,
    pub beams: f64,
    pub theta: [f64; 2],
    pub contacts: [Option<BeamContact>; 2],
}

/// Gravitational potential, zero at `z_ref` with the body level (N mm).
pub fn gravity_energy(body: &BodyParams, z_ref: f64, pose: &Pose) -> f64 {
    let w = body.weight();
    let h = body.com_offset;
    w * (pose.z - h * pose.alpha.cos() * pose.beta.cos()) - w * (z_ref - h)
}

/// Generalized gravity forces `(F_x, F_alpha, F_beta) = -grad PE_G`.
pub fn gravity_forces(body: &BodyParams, alpha: f64, beta: f64) -> [f64; 3] {
    let wh = body.weight() * body.com_offset;
    [0.0, -wh * alpha.sin() * beta.cos(), -wh * alpha.cos() * beta.sin()]
}

/// Solves both beams at `pose`.
pub fn solve_beams(scene: &Scene, pose: &Pose) -> Result<[Option<BeamContact>; 2]> {
    pose.validate()?;
    let frame = PoseFrame::new(pose);
    let mut cands = Candidates::default();
    let left = deflection_with(scene, pose, &frame, &scene.beams[0], &mut cands)?;
    let right = deflection_with(scene, pose, &frame, &scene.beams[1], &mut cands)?;
    Ok([left, right])
}

pub fn potential_energy(scene: &Scene, pose: &Pose) -> Result<Energy> {
    let contacts = solve_beams(scene, pose)?;
    let theta = contacts.map(|c| c.map_or(0.0, |c| c.theta));
    let beams = scene.beams[0].energy(theta[0]) + scene.beams[1].energy(theta[1]);
    let gravity = gravity_energy(&scene.body, scene.z_ref, pose);
    Ok(Energy {
        total: gravity + beams,
        gravity,
        beams,
        theta,
        contacts,
    })
}

/// Numerical gradient of the potential energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    /// Indexed by [`Dof::index`]; N for translations, N mm / rad for rotations.
    /// Entries that were not requested are NaN.
    pub values: [f64; 6],
    /// Set where a perturbed pose was infeasible and a one-sided difference was used.
    pub one_sided: [bool; 6],
}

impl Gradient {
    pub fn get(&self, dof: Dof) -> f64 {
        self.values[dof.index()]
    }
}

/// Central-difference gradient along all six degrees of freedom.
pub fn gradient_central_diff(scene: &Scene, pose: &Pose) -> Result<Gradient> {
    gradient_along(scene, pose, &Dof::ALL, GRADIENT_STEP)
}

/// Central-difference gradient along selected degrees of freedom. Falls back
/// to a one-sided difference next to an infeasible pose, or when a contact
/// switch falls inside one step on just one side.
pub fn gradient_along(scene: &Scene, pose: &Pose, dofs: &[Dof], step: f64) -> Result<Gradient> {
    let mut g = Gradient {
        values: [f64::NAN; 6],
        one_sided: [false; 6],
    };
    let mut center: Option<f64> = None;
    let mut center_pe = || -> Result<f64> {
        match center {
            Some(c) => Ok(c),
            None => Ok(*center.insert(potential_energy(scene, pose)?.total)),
        }
    };
    let pe = |dof: Dof, h: f64| potential_energy(scene, &pose.perturbed(dof, h)).map(|e| e.total);
    for &dof in dofs {
        let plus = pe(dof, step);
        let minus = pe(dof, -step);
        let i = dof.index();
        match (plus, minus) {
            (Ok(p), Ok(m)) => {
                let c = center_pe()?;
                let (dp, dm) = ((p - c) / step, (c - m) / step);
                g.values[i] = (p - m) / (2.0 * step);
                if (dp - dm).abs() > SLOPE_SPLIT * (dp.abs() + dm.abs()) + 1e-3 {
                    // A contact switch within one step puts a kink or, when a
                    // beam slips off, a jump between the samples. Past such a
                    // point the difference quotient changes with the step;
                    // keep the side whose quotient does not.
                    let h = step / 10.0;
                    let floor = SLOPE_SPLIT * dp.abs().max(dm.abs());
                    let unstable = |d: f64, d2: f64| (d - d2).abs() > SLOPE_SPLIT * (d.abs() + d2.abs()) + floor;
                    let jump_p = pe(dof, h).is_ok_and(|p2| unstable(dp, (p2 - c) / h));
                    let jump_m = pe(dof, -h).is_ok_and(|m2| unstable(dm, (c - m2) / h));
                    match (jump_p, jump_m) {
                        (true, false) => (g.values[i], g.one_sided[i]) = (dm, true),
                        (false, true) => (g.values[i], g.one_sided[i]) = (dp, true),
                        _ => {}
                    }
                }
            }
            (Ok(p), Err(_)) => {
                g.values[i] = (p - center_pe()?) / step;
                g.one_sided[i] = true;
            }
            (Err(_), Ok(m)) => {
                g.values[i] = (center_pe()? - m) / step;
                g.one_sided[i] = true;
            }
            (Err(e), Err(_)) => return Err(e),
        }
    }
    Ok(g)
}

/// Axes of an x-alpha-beta grid. Angles are stored in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    pub x: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Inclusive arithmetic range `start, start + step, ..., end`.
pub fn linspace_step(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step).round() as i64;
    (0..=n.max(0)).map(|i| start + i as f64 * step).collect()
}

impl GridAxes {
    /// Builds axes from ranges given as `(start, end, step)`; angles in degrees.
    pub fn from_ranges(x: (f64, f64, f64), alpha_deg: (f64, f64, f64), beta_deg: (f64, f64, f64)) -> Result<Self> {
        for (name, r) in [("grid.x", x), ("grid.alpha", alpha_deg), ("grid.beta", beta_deg)] {
            if !(r.2 > 0.0) || !(r.1 >= r.0) {
                return Err(invalid(name, "range must have end >= start and step > 0"));
            }
        }
        let axes = Self {
            x: linspace_step(x.0, x.1, x.2),
            alpha: linspace_step(alpha_deg.0, alpha_deg.1, alpha_deg.2)
                .into_iter()
                .map(f64::to_radians)
                .collect(),
            beta: linspace_step(beta_deg.0, beta_deg.1, beta_deg.2)
                .into_iter()
                .map(f64::to_radians)
                .collect(),
        };
        axes.validate()?;
        Ok(axes)
    }

    /// The comparison grid: x in [-100, 100] step 5 mm, alpha in [0, 40] and
    /// beta in [-40, -10] step 2.5 deg.
    pub fn evaluation() -> Self {
        Self::from_ranges((-100.0, 100.0, 5.0), (0.0, 40.0, 2.5), (-40.0, -10.0, 2.5)).expect("static axes")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, axis) in [("x", &self.x), ("alpha", &self.alpha), ("beta", &self.beta)] {
            if axis.is_empty() {
                return Err(Error::AxisMismatch(format!("axis {name} is empty")));
            }
            if axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::AxisMismatch(format!("axis {name} is not strictly increasing")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len() * self.alpha.len() * self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.x.len(), self.alpha.len(), self.beta.len())
    }

    /// Flat index, beta fastest.
    pub fn index(&self, ix: usize, ia: usize, ib: usize) -> usize {
        (ix * self.alpha.len() + ia) * self.beta.len() + ib
    }

    /// `(x, alpha, beta)` at flat index `i`.
    pub fn node(&self, i: usize) -> (f64, f64, f64) {
        let nb = self.beta.len();
        let na = self.alpha.len();
        let ib = i % nb;
        let ia = (i / nb) % na;
        let ix = i / (na * nb);
        (self.x[ix], self.alpha[ia], self.beta[ib])
    }

    /// True when both grids share axes to within 1e-9.
    pub fn matches(&self, other: &GridAxes) -> bool {
        let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(u, v)| (u - v).abs() < 1e-9);
        same(&self.x, &other.x) && same(&self.alpha, &other.alpha) && same(&self.beta, &other.beta)
    }
}

/// Scalar field over an x-alpha-beta grid with optional gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub axes: GridAxes,
    /// PE in N mm; `+inf` marks infeasible nodes.
    pub values: Vec<f64>,
    /// `(dPE/dx [N], dPE/dalpha [N mm/rad], dPE/dbeta [N mm/rad])` per node.
    pub gradient: Option<Vec<[f64; 3]>>,
}

impl LandscapeGrid {
    pub fn value(&self, ix: usize, ia: usize, ib: usize) -> f64 {
        self.values[self.axes.index(ix, ia, ib)]
    }

    /// Writes the shared grid CSV schema.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "x_mm,alpha_deg,beta_deg,PE_Nmm,dPE_dx_N,dPE_dalpha_Nmm,dPE_dbeta_Nmm")?;
        for i in 0..self.values.len() {
            let (x, a, b) = self.axes.node(i);
            let g = self
                .gradient
                .as_ref()
                .map_or([f64::NAN; 3], |g| g[i]);
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                x,
                a.to_degrees(),
                b.to_degrees(),
                self.values[i],
                g[0],
                g[1],
                g[2]
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a grid written by [`LandscapeGrid::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            message,
        };
        let mut rows: Vec<[f64; 7]> = Vec::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if n == 0 || line.trim().is_empty() {
                continue;
            }
            let mut row = [0.0; 7];
            let mut count = 0;
            for (k, field) in line.split(',').enumerate() {
                if k >= 7 {
                    return Err(malformed(format!("line {}: too many fields", n + 1)));
                }
                row[k] = field
                    .trim()
                    .parse()
                    .map_err(|_| malformed(format!("line {}: bad number `{field}`", n + 1)))?;
                count += 1;
            }
            if count != 7 {
                return Err(malformed(format!("line {}: expected 7 fields", n + 1)));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(malformed("no data rows".into()));
        }
        let unique = |k: usize| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            v
        };
        let axes = GridAxes {
            x: unique(0),
            alpha: unique(1).into_iter().map(f64::to_radians).collect(),
            beta: unique(2).into_iter().map(f64::to_radians).collect(),
        };
        if axes.len() != rows.len() {
            return Err(malformed(format!("{} rows do not form a full grid", rows.len())));
        }
        let has_gradient = rows.iter().all(|r| !r[4].is_nan());
        let mut values = vec![0.0; rows.len()];
        let mut gradient = vec![[0.0; 3]; rows.len()];
        for (i, r) in rows.iter().enumerate() {
            let (x, a, b) = axes.node(i);
            if (x - r[0]).abs() > 1e-6 || (a.to_degrees() - r[1]).abs() > 1e-6 || (b.to_degrees() - r[2]).abs() > 1e-6 {
                return Err(malformed("rows are not in x, alpha, beta order".into()));
            }
            values[i] = r[3];
            gradient[i] = [r[4], r[5], r[6]];
        }
        Ok(Self {
            axes,
            values,
            gradient: has_gradient.then_some(gradient),
        })
    }
}

/// Evaluates the flexible-beam landscape on a grid. Infeasible nodes hold `+inf`.
pub fn landscape_grid(scene: &Scene, axes: &GridAxes, protocol: &Protocol, with_gradient: bool) -> Result<LandscapeGrid> {
    axes.validate()?;
    let nodes: Vec<(f64, [f64; 3])> = (0..axes.len())
        .into_par_iter()
        .map(|i| {
            let (x, a, b) = axes.node(i);
            let pose = protocol.pose(x, a, b);
            let pe = potential_energy(scene, &pose).map_or(f64::INFINITY, |e| e.total);
            let g = if with_gradient && pe.is_finite() {
                gradient_along(scene, &pose, &[Dof::X, Dof::Alpha, Dof::Beta], GRADIENT_STEP)
                    .map_or([f64::INFINITY; 3], |g| [g.get(Dof::X), g.get(Dof::Alpha), g.get(Dof::Beta)])
            } else {
                [f64::INFINITY; 3]
            };
            (pe, g)
        })
        .collect();
    let values = nodes.iter().map(|n| n.0).collect();
    let gradient = with_gradient.then(|| nodes.iter().map(|n| n.1).collect());
    Ok(LandscapeGrid {
        axes: axes.clone(),
        values,
        gradient,
    })
}

/// Search range and tolerance for the rigid-beam baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigidSearch {
    /// Height above the protocol height searched for a collision-free pose (mm).
    pub max_lift: f64,
    pub tolerance: f64,
}

impl Default for RigidSearch {
    fn default() -> Self {
        Self { max_lift: 250.0, tolerance: 0.1 }
    }
}

/// True when the body intersects an undeflected plate at `pose`.
pub fn collides_rigid(scene: &Scene, pose: &Pose) -> bool {
    let frame = PoseFrame::new(pose);
    let mut cands = Candidates::default();
    scene.beams.iter().any(|beam| {
        gather(scene, &frame, beam, &mut cands, true);
        cands.extreme().is_some_and(|c| c.phi > 0.0)
    })
}

/// Lowest collision-free height with the beams held upright, or `None`.
pub fn rigid_lift_height(scene: &Scene, pose: &Pose, search: &RigidSearch) -> Option<f64> {
    let at = |z: f64| Pose { z, ..*pose };
    if !collides_rigid(scene, pose) {
        return Some(pose.z);
    }
    let mut hi = pose.z + search.max_lift;
    if collides_rigid(scene, &at(hi)) {
        return None;
    }
    let mut lo = pose.z;
    while hi - lo > search.tolerance {
        let mid = 0.5 * (lo + hi);
        if collides_rigid(scene, &at(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

/// Gravitational PE after lifting the body clear of rigid beams; `+inf` if no
/// collision-free height exists in the search range.
pub fn rigid_geometry_landscape(scene: &Scene, pose: &Pose, search: &RigidSearch) -> f64 {
    match rigid_lift_height(scene, pose, search) {
        Some(z) => gravity_energy(&scene.body, scene.z_ref, &Pose { z, ..*pose }),
        None => f64::INFINITY,
    }
}

/// Rigid-beam baseline on a grid (no gradients).
pub fn rigid_grid(scene: &Scene, axes: &GridAxes, protocol: &Protocol, search: &RigidSearch) -> Result<LandscapeGrid> {
    axes.validate()?;
    let values = (0..axes.len())
        .into_par_iter()
        .map(|i| {
            let (x, a, b) = axes.node(i);
            rigid_geometry_landscape(scene, &protocol.pose(x, a, b), search)
        })
        .collect();
    Ok(LandscapeGrid {
        axes: axes.clone(),
        values,
        gradient: None,
    })
}
