//! Shield-shaped shell surface.
//!
//! The uncropped counterpart is the upper half of an ellipsoid centered on
//! the body origin, closed by a flat base disc at `z'' = 0`. The rim where the
//! dome meets the base is the sharp edge; its front half carries the edge
//! cells. Crop regions (midline split, rear crop) are tracked per triangle but
//! every triangle takes part in contact, matching the uncropped hull used for
//! modeling.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pose::Vec3;
use crate::error::{invalid, Error, Result};

/// Shape and sensing-layout parameters of the shell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShellParams {
    /// Semi-axis along body x'' (mm).
    pub semi_length: f64,
    /// Semi-axis along body y'' (mm).
    pub semi_width: f64,
    /// Dome height along body z'' (mm).
    pub height: f64,
    /// Target triangle edge length (mm).
    pub resolution: f64,
    /// Width of the midline split between the left and right shell pieces (mm).
    pub midline_gap: f64,
    /// Shell area behind this body x'' coordinate is cropped (mm).
    pub rear_crop_x: f64,
    /// Number of edge sections per half (front rim).
    pub edge_sections_per_side: usize,
    /// Max distance from a touch cell center to any of its vertices (mm).
    pub max_cell_radius: f64,
    /// Max angle between a cell's averaged normal and any member triangle normal (deg).
    pub max_cell_normal_spread_deg: f64,
    /// Distance from the rim under which a contact counts as an edge contact (mm).
    pub edge_tolerance: f64,
}

impl Default for ShellParams {
    fn default() -> Self {
        Self {
            semi_length: 90.0,
            semi_width: 100.0,
            height: 60.0,
            resolution: 2.0,
            midline_gap: 2.0,
            rear_crop_x: 0.0,
            edge_sections_per_side: 3,
            max_cell_radius: 24.0,
            max_cell_normal_spread_deg: 4.0,
            edge_tolerance: 0.5,
        }
    }
}

impl ShellParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("shell.semi_length", self.semi_length),
            ("shell.semi_width", self.semi_width),
            ("shell.height", self.height),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("semi-axis must be positive, got {v}")));
            }
        }
        if !(self.resolution > 0.0) {
            return Err(invalid("shell.resolution", "must be > 0"));
        }
        if self.midline_gap < 0.0 || self.midline_gap >= self.semi_width {
            return Err(invalid("shell.midline_gap", "must lie in [0, semi_width)"));
        }
        if self.rear_crop_x.abs() >= self.semi_length {
            return Err(invalid("shell.rear_crop_x", "crop plane must cut the shell"));
        }
        if self.edge_sections_per_side == 0 {
            return Err(invalid("shell.edge_sections_per_side", "must be >= 1"));
        }
        if !(self.max_cell_radius > 0.0) || !(self.max_cell_normal_spread_deg > 0.0) {
            return Err(invalid("shell.max_cell_radius", "cell limits must be positive"));
        }
        Ok(())
    }

    /// Outward normal of the dome at a body-frame point on (or near) the ellipsoid.
    pub fn dome_normal(&self, p: &Vec3) -> Vec3 {
        let (a, b, c) = (self.semi_length, self.semi_width, self.height);
        Vec3::new(p.x / (a * a), p.y / (b * b), p.z / (c * c)).normalize()
    }

    fn rim_point(&self, psi: f64) -> Vec3 {
        Vec3::new(self.semi_length * psi.cos(), self.semi_width * psi.sin(), 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Dome,
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Half {
    /// +y'' side.
    Left,
    /// -y'' side.
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactKind {
    Surface,
    Edge,
}

impl ContactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContactKind::Surface => "surface",
            ContactKind::Edge => "edge",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Triangle {
    pub vertices: [u32; 3],
    /// Unit outward normal (body frame).
    pub normal: Vec3,
    pub centroid: Vec3,
    pub area: f64,
    pub region: Region,
    pub half: Half,
    /// False for triangles removed by the midline split or rear crop.
    pub retained: bool,
    pub cell: u32,
}

#[derive(Debug, Clone)]
pub struct TouchCell {
    /// Representative position reported when this cell fires (body frame).
    pub center: Vec3,
    /// Averaged outward normal (body frame).
    pub normal: Vec3,
    pub kind: ContactKind,
    pub half: Half,
    /// Member triangles; empty for edge cells.
    pub triangles: Vec<u32>,
    /// Radius of a sphere around `center` containing every member vertex.
    pub bound_radius: f64,
    /// Edge section index within its half (edge cells only).
    pub section: Option<usize>,
}

/// Result of locating a body-frame point on the shell.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceHit {
    pub cell: usize,
    /// Normal reported by the touch sensor (body frame).
    pub normal: Vec3,
    pub kind: ContactKind,
    pub triangle: usize,
    pub distance: f64,
}

/// Triangulated closed hull of the shield with its touch-cell partition.
#[derive(Debug, Clone)]
pub struct ShellMesh {
    pub params: ShellParams,
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<Triangle>,
    /// Surface cells first, then `2 * edge_sections_per_side` edge cells.
    pub cells: Vec<TouchCell>,
    /// Indices into `cells` of the edge cells (left sections first).
    pub edge_cells: Vec<usize>,
}

// Grid coordinates used to group triangles into cells.
#[derive(Clone, Copy)]
struct GridTag {
    region: Region,
    band: usize,
    seg: usize,
}

pub fn shell_build(params: &ShellParams) -> Result<ShellMesh> {
    params.validate()?;
    let (a, b, c) = (params.semi_length, params.semi_width, params.height);
    let res = params.resolution;
    let rmax = a.max(b);

    let n_half = ((PI * rmax / res).ceil() as usize).max(4);
    let n_ring = 2 * n_half;
    let meridian = quarter_ellipse_arc(rmax, c);
    let n_dome = ((meridian / res).ceil() as usize).max(2);
    let n_base = ((rmax / res).ceil() as usize).max(2);

    let mut vertices = Vec::new();
    let push_ring = |vertices: &mut Vec<Vec3>, f: &dyn Fn(f64) -> Vec3| -> usize {
        let start = vertices.len();
        let mut ring = vec![Vec3::zeros(); n_ring];
        for (i, slot) in ring.iter_mut().enumerate().take(n_half + 1) {
            let psi = i as f64 * PI / n_half as f64;
            let mut p = f(psi);
            if i == 0 || i == n_half {
                p.y = 0.0;
            }
            *slot = p;
        }
        for i in n_half + 1..n_ring {
            let m = ring[n_ring - i];
            ring[i] = Vec3::new(m.x, -m.y, m.z);
        }
        vertices.extend(ring);
        start
    };

    // Dome: pole, rings 1..=n_dome (ring n_dome is the rim).
    let pole = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, c));
    let mut dome_rings = Vec::with_capacity(n_dome);
    for j in 1..=n_dome {
        let v = j as f64 * FRAC_PI_2 / n_dome as f64;
        let (sv, cv) = if j == n_dome { (1.0, 0.0) } else { v.sin_cos() };
        let start = push_ring(&mut vertices, &|psi: f64| {
            Vec3::new(a * psi.cos() * sv, b * psi.sin() * sv, c * cv)
        });
        dome_rings.push(start);
    }
    let rim = *dome_rings.last().unwrap();

    // Base: rim shared, inner rings, center.
    let mut base_rings = vec![rim];
    for k in 1..n_base {
        let s = 1.0 - k as f64 / n_base as f64;
        let start = push_ring(&mut vertices, &|psi: f64| {
            Vec3::new(s * a * psi.cos(), s * b * psi.sin(), 0.0)
        });
        base_rings.push(start);
    }
    let center = vertices.len();
    vertices.push(Vec3::zeros());

    let mut faces: Vec<([u32; 3], GridTag)> = Vec::new();
    let idx = |start: usize, i: usize| (start + i % n_ring) as u32;
    // The right half uses the opposite diagonal so the halves mirror exactly.
    let quad = |r0: usize, r1: usize, i: usize| -> [[u32; 3]; 2] {
        if i < n_half {
            [
                [idx(r0, i), idx(r1, i), idx(r1, i + 1)],
                [idx(r0, i), idx(r1, i + 1), idx(r0, i + 1)],
            ]
        } else {
            [
                [idx(r0, i), idx(r1, i), idx(r0, i + 1)],
                [idx(r0, i + 1), idx(r1, i), idx(r1, i + 1)],
            ]
        }
    };

    for i in 0..n_ring {
        let tag = GridTag { region: Region::Dome, band: 0, seg: i };
        faces.push(([pole as u32, idx(dome_rings[0], i), idx(dome_rings[0], i + 1)], tag));
    }
    for j in 0..n_dome - 1 {
        let (r0, r1) = (dome_rings[j], dome_rings[j + 1]);
        for i in 0..n_ring {
            let tag = GridTag { region: Region::Dome, band: j + 1, seg: i };
            for tri in quad(r0, r1, i) {
                faces.push((tri, tag));
            }
        }
    }
    for k in 0..n_base - 1 {
        let (r0, r1) = (base_rings[k], base_rings[k + 1]);
        for i in 0..n_ring {
            let tag = GridTag { region: Region::Base, band: k, seg: i };
            for tri in quad(r0, r1, i) {
                faces.push((tri, tag));
            }
        }
    }
    let last = *base_rings.last().unwrap();
    for i in 0..n_ring {
        let tag = GridTag { region: Region::Base, band: n_base - 1, seg: i };
        faces.push(([idx(last, i), center as u32, idx(last, i + 1)], tag));
    }

    let mut triangles = Vec::with_capacity(faces.len());
    let mut tags = Vec::with_capacity(faces.len());
    for (mut tri, tag) in faces {
        let [p0, p1, p2] = tri.map(|v| vertices[v as usize]);
        let cross = (p1 - p0).cross(&(p2 - p0));
        let area = 0.5 * cross.norm();
        let centroid = (p0 + p1 + p2) / 3.0;
        let hint = match tag.region {
            Region::Dome => params.dome_normal(&centroid),
            Region::Base => -Vec3::z(),
        };
        let mut normal = cross.normalize();
        if normal.dot(&hint) < 0.0 {
            tri.swap(1, 2);
            normal = -normal;
        }
        let half = if tag.seg < n_half { Half::Left } else { Half::Right };
        let retained = tag.region == Region::Dome
            && centroid.y.abs() >= 0.5 * params.midline_gap
            && centroid.x >= params.rear_crop_x;
        triangles.push(Triangle {
            vertices: tri,
            normal,
            centroid,
            area,
            region: tag.region,
            half,
            retained,
            cell: 0,
        });
        tags.push(tag);
    }

    let mut mesh = ShellMesh {
        params: params.clone(),
        vertices,
        triangles,
        cells: Vec::new(),
        edge_cells: Vec::new(),
    };
    mesh.build_cells(&tags, n_half, n_dome, n_base);
    Ok(mesh)
}

fn quarter_ellipse_arc(a: f64, b: f64) -> f64 {
    // Ramanujan's perimeter approximation, quartered.
    let h = ((a - b) / (a + b)).powi(2);
    PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt())) / 4.0
}

struct Block {
    region: Region,
    bands: (usize, usize),
    segs: (usize, usize),
}

impl ShellMesh {
    fn build_cells(&mut self, tags: &[GridTag], n_half: usize, n_dome: usize, n_base: usize) {
        let n_ring = 2 * n_half;
        // Index triangles by grid position for block lookups.
        let mut by_grid: std::collections::HashMap<(u8, usize, usize), Vec<u32>> =
            std::collections::HashMap::new();
        for (t, tag) in tags.iter().enumerate() {
            let r = matches!(tag.region, Region::Base) as u8;
            by_grid.entry((r, tag.band, tag.seg)).or_default().push(t as u32);
        }

        let collect = |region: Region, bands: (usize, usize), segs: (usize, usize)| {
            let r = matches!(region, Region::Base) as u8;
            let mut tris = Vec::new();
            for band in bands.0..bands.1 {
                for seg in segs.0..segs.1 {
                    if let Some(ts) = by_grid.get(&(r, band, seg)) {
                        tris.extend_from_slice(ts);
                    }
                }
            }
            tris
        };

        // Partition the left half, then mirror each block onto the right half
        // (segment i on the left mirrors segment 2n-1-i).
        let mut stack = vec![
            Block { region: Region::Dome, bands: (0, n_dome), segs: (0, n_half) },
            Block { region: Region::Base, bands: (0, n_base), segs: (0, n_half) },
        ];
        let spread_limit = self.params.max_cell_normal_spread_deg.to_radians().cos();
        let mut accepted: Vec<Vec<u32>> = Vec::new();
        while let Some(block) = stack.pop() {
            let tris = collect(block.region, block.bands, block.segs);
            if tris.is_empty() {
                continue;
            }
            let (center, normal) = self.area_weighted(&tris);
            let radius = self.bound_radius(&tris, &center);
            let min_cos = tris
                .iter()
                .map(|&t| self.triangles[t as usize].normal.dot(&normal))
                .fold(1.0, f64::min);
            let too_big = radius > self.params.max_cell_radius || min_cos < spread_limit;
            let nb = block.bands.1 - block.bands.0;
            let ns = block.segs.1 - block.segs.0;
            if too_big && (nb > 1 || ns > 1) {
                let split_bands = if nb > 1 && ns > 1 {
                    // Split along the longer physical direction.
                    self.band_extent(&block, &by_grid) >= self.seg_extent(&block, &by_grid)
                } else {
                    nb > 1
                };
                let (lo, hi) = if split_bands {
                    let mid = block.bands.0 + nb / 2;
                    (
                        Block { region: block.region, bands: (block.bands.0, mid), segs: block.segs },
                        Block { region: block.region, bands: (mid, block.bands.1), segs: block.segs },
                    )
                } else {
                    let mid = block.segs.0 + ns / 2;
                    (
                        Block { region: block.region, bands: block.bands, segs: (block.segs.0, mid) },
                        Block { region: block.region, bands: block.bands, segs: (mid, block.segs.1) },
                    )
                };
                stack.push(hi);
                stack.push(lo);
            } else {
                let mirror = collect(block.region, block.bands, (n_ring - block.segs.1, n_ring - block.segs.0));
                accepted.push(tris);
                accepted.push(mirror);
            }
        }
        // Stable order: sort cells by their first triangle.
        accepted.sort_by_key(|t| t.iter().copied().min().unwrap_or(0));

        for tris in accepted {
            let (center, normal) = self.area_weighted(&tris);
            let bound_radius = self.bound_radius(&tris, &center);
            let id = self.cells.len() as u32;
            for &t in &tris {
                self.triangles[t as usize].cell = id;
            }
            let half = self.triangles[tris[0] as usize].half;
            self.cells.push(TouchCell {
                center,
                normal,
                kind: ContactKind::Surface,
                half,
                triangles: tris,
                bound_radius,
                section: None,
            });
        }

        let n = self.params.edge_sections_per_side;
        for half in [Half::Left, Half::Right] {
            for s in 0..n {
                let psi_mid = (s as f64 + 0.5) * FRAC_PI_2 / n as f64;
                let psi = if half == Half::Left { psi_mid } else { -psi_mid };
                let center = self.params.rim_point(psi);
                self.edge_cells.push(self.cells.len());
                self.cells.push(TouchCell {
                    center,
                    normal: self.rim_normal(psi),
                    kind: ContactKind::Edge,
                    half,
                    triangles: Vec::new(),
                    bound_radius: 0.0,
                    section: Some(s),
                });
            }
        }
    }

    fn area_weighted(&self, tris: &[u32]) -> (Vec3, Vec3) {
        let mut c = Vec3::zeros();
        let mut n = Vec3::zeros();
        let mut area = 0.0;
        for &t in tris {
            let tri = &self.triangles[t as usize];
            c += tri.centroid * tri.area;
            n += tri.normal * tri.area;
            area += tri.area;
        }
        (c / area, n.normalize())
    }

    fn bound_radius(&self, tris: &[u32], center: &Vec3) -> f64 {
        tris.iter()
            .flat_map(|&t| self.triangles[t as usize].vertices)
            .map(|v| (self.vertices[v as usize] - center).norm())
            .fold(0.0, f64::max)
    }

    fn extent_along(&self, tris: &[u32]) -> f64 {
        let (c, _) = self.area_weighted(tris);
        self.bound_radius(tris, &c)
    }

    fn band_extent(&self, b: &Block, grid: &std::collections::HashMap<(u8, usize, usize), Vec<u32>>) -> f64 {
        let r = matches!(b.region, Region::Base) as u8;
        let seg = (b.segs.0 + b.segs.1) / 2;
        let tris: Vec<u32> = (b.bands.0..b.bands.1)
            .filter_map(|band| grid.get(&(r, band, seg)))
            .flatten()
            .copied()
            .collect();
        if tris.is_empty() { 0.0 } else { self.extent_along(&tris) }
    }

    fn seg_extent(&self, b: &Block, grid: &std::collections::HashMap<(u8, usize, usize), Vec<u32>>) -> f64 {
        let r = matches!(b.region, Region::Base) as u8;
        let band = (b.bands.0 + b.bands.1) / 2;
        let tris: Vec<u32> = (b.segs.0..b.segs.1)
            .filter_map(|seg| grid.get(&(r, band, seg)))
            .flatten()
            .copied()
            .collect();
        if tris.is_empty() { 0.0 } else { self.extent_along(&tris) }
    }

    /// Outward rim normal, perpendicular to z'' and to the rim tangent.
    fn rim_normal(&self, psi: f64) -> Vec3 {
        let (a, b) = (self.params.semi_length, self.params.semi_width);
        Vec3::new(b * psi.cos(), a * psi.sin(), 0.0).normalize()
    }

    /// Unit rim tangent at parameter `psi` (direction of increasing psi).
    pub fn rim_tangent(&self, psi: f64) -> Vec3 {
        let (a, b) = (self.params.semi_length, self.params.semi_width);
        Vec3::new(-a * psi.sin(), b * psi.cos(), 0.0).normalize()
    }

    /// Elliptic rim parameter of the rim point nearest (approximately) to `p`.
    pub fn rim_parameter(&self, p: &Vec3) -> f64 {
        (p.y / self.params.semi_width).atan2(p.x / self.params.semi_length)
    }

    /// Edge section cell for a body-frame point, if the point lies on the
    /// front part of the rim within the edge tolerance.
    pub fn edge_cell_at(&self, p: &Vec3) -> Option<usize> {
        let psi = self.rim_parameter(p);
        if psi.cos() <= 0.0 {
            return None;
        }
        let d = (p - self.params.rim_point(psi)).norm();
        if d > self.params.edge_tolerance {
            return None;
        }
        let n = self.params.edge_sections_per_side;
        let s = ((psi.abs() / FRAC_PI_2) * n as f64).floor().min(n as f64 - 1.0) as usize;
        let offset = if psi >= 0.0 { 0 } else { n };
        Some(self.edge_cells[offset + s])
    }

    pub fn triangle_points(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].vertices.map(|v| self.vertices[v as usize])
    }

    /// Classifies a point already known to lie on triangle `t`.
    pub fn hit_on_triangle(&self, p: &Vec3, t: usize, distance: f64) -> SurfaceHit {
        if let Some(cell) = self.edge_cell_at(p) {
            return SurfaceHit {
                cell,
                normal: self.cells[cell].normal,
                kind: ContactKind::Edge,
                triangle: t,
                distance,
            };
        }
        let cell = self.triangles[t].cell as usize;
        SurfaceHit {
            cell,
            normal: self.cells[cell].normal,
            kind: ContactKind::Surface,
            triangle: t,
            distance,
        }
    }

    /// Bounding radius of the whole hull around the body origin.
    pub fn bounding_radius(&self) -> f64 {
        self.params.semi_length.max(self.params.semi_width).max(self.params.height)
    }

    pub fn surface_cells(&self) -> impl Iterator<Item = &TouchCell> {
        self.cells.iter().filter(|c| c.kind == ContactKind::Surface)
    }

    /// Writes `vertices.csv` and `faces.csv` into `dir`.
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut v = std::io::BufWriter::new(std::fs::File::create(dir.join("vertices.csv"))?);
        writeln!(v, "id,x_mm,y_mm,z_mm")?;
        for (i, p) in self.vertices.iter().enumerate() {
            writeln!(v, "{i},{},{},{}", p.x, p.y, p.z)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("faces.csv"))?);
        writeln!(f, "id,v0,v1,v2,cell,region,half,retained")?;
        for (i, t) in self.triangles.iter().enumerate() {
            let region = match t.region {
                Region::Dome => "dome",
                Region::Base => "base",
            };
            let half = match t.half {
                Half::Left => "left",
                Half::Right => "right",
            };
            writeln!(
                f,
                "{i},{},{},{},{},{region},{half},{}",
                t.vertices[0], t.vertices[1], t.vertices[2], t.cell, t.retained
            )?;
        }
        Ok(())
    }
}

/// Locates a body-frame point on the shell and reports what the touch sensor sees.
pub fn surface_query(mesh: &ShellMesh, point: &Vec3) -> Result<SurfaceHit> {
    const TOLERANCE: f64 = 1.0;
    let mut best = (f64::INFINITY, 0usize);
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle_points(t);
        let q = closest_point_on_triangle(point, &a, &b, &c);
        let d = (q - point).norm_squared();
        if d < best.0 {
            best = (d, t);
        }
    }
    let distance = best.0.sqrt();
    if distance > TOLERANCE {
        return Err(Error::NoContact {
            distance,
            tolerance: TOLERANCE,
        });
    }
    Ok(mesh.hit_on_triangle(point, best.1, distance))
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
