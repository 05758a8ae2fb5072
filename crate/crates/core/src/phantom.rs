//! Seeded procedural airway phantoms: a binary tree of tapered cylinders
//! rasterized into an image, a mask and a branch-label map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid3, Voxel};
use crate::tree::{Branch, TreeGraph};
use crate::volume::{Volume, VolumeError};

/// Smallest radius a branch is rasterized with; keeps every centerline voxel
/// inside its own cylinder.
pub const MIN_BRANCH_RADIUS: f64 = 1.0;

const AXES: [&str; 3] = ["z", "y", "x"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub depth: u32,
    pub trunk_radius_vox: f64,
    pub radius_taper: f64,
    pub branch_angle_deg: f64,
    pub segment_length_vox: f64,
    pub length_taper: f64,
    pub airway_intensity: f32,
    pub background_intensity: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            depth: 2,
            trunk_radius_vox: 2.5,
            radius_taper: 0.75,
            branch_angle_deg: 35.0,
            segment_length_vox: 14.0,
            length_taper: 0.85,
            airway_intensity: -1000.0,
            background_intensity: -700.0,
            noise_sigma: 60.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("dimension {axis} = {dim} is too small for the trunk (needs at least {required})")]
    DimTooSmall {
        axis: &'static str,
        dim: usize,
        required: usize,
    },
    #[error("tree of depth {depth} does not fit along dimension {axis} even with shortened segments")]
    TreeDoesNotFit { axis: &'static str, depth: u32 },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Volume,
    pub mask: Volume,
    pub branch_labels: Volume,
    pub tree: TreeGraph,
}

/// One rasterized cylinder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub label: u32,
    pub parent_label: u32,
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius: f64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidSpec(m));
        if let Some(a) = self.dims.iter().position(|&d| d < 8) {
            return bad(format!("dimension {} = {} must be at least 8", AXES[a], self.dims[a]));
        }
        if self.depth < 1 {
            return bad("depth must be at least 1".into());
        }
        if !(self.trunk_radius_vox >= 1.0) {
            return bad(format!("trunk_radius_vox {} must be at least 1", self.trunk_radius_vox));
        }
        if !(self.radius_taper > 0.0 && self.radius_taper <= 1.0) {
            return bad(format!("radius_taper {} must lie in (0, 1]", self.radius_taper));
        }
        if !(self.length_taper > 0.0 && self.length_taper <= 1.0) {
            return bad(format!("length_taper {} must lie in (0, 1]", self.length_taper));
        }
        if !(self.branch_angle_deg > 0.0 && self.branch_angle_deg < 90.0) {
            return bad(format!("branch_angle_deg {} must lie in (0, 90)", self.branch_angle_deg));
        }
        if !(self.segment_length_vox > 0.0) {
            return bad("segment_length_vox must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        Ok(())
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let segments = layout(spec)?;
    let dims = spec.dims;

    let mut labels = Grid3::filled(dims, 0u32);
    // Ascending label order so overlaps keep the smaller label.
    for seg in &segments {
        let r = seg.radius;
        let lo: Vec<usize> = (0..3)
            .map(|a| (seg.start[a].min(seg.end[a]) - r).floor().max(0.0) as usize)
            .collect();
        let hi: Vec<usize> = (0..3)
            .map(|a| ((seg.start[a].max(seg.end[a]) + r).ceil() as usize).min(dims[a] - 1))
            .collect();
        for z in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for x in lo[2]..=hi[2] {
                    let v = [z, y, x];
                    if *labels.get(v) == 0 && inside_cylinder(v, seg) {
                        labels.set(v, seg.label);
                    }
                }
            }
        }
    }
    let mask = labels.map(|&l| u8::from(l > 0));

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0f32, spec.noise_sigma).expect("sigma validated"));
    let mut image = mask.map(|&m| {
        if m == 1 {
            spec.airway_intensity
        } else {
            spec.background_intensity
        }
    });
    if let Some(noise) = noise {
        for value in image.as_mut_slice() {
            *value += noise.sample(&mut rng);
        }
    }

    let tree = TreeGraph {
        branches: segments
            .iter()
            .map(|seg| {
                let line = rasterize_line(to_voxel(seg.start), to_voxel(seg.end));
                let centerline = if seg.parent_label == 0 {
                    line
                } else {
                    // The first voxel is the parent's end point.
                    line[1..].to_vec()
                };
                Branch {
                    label: seg.label,
                    parent_label: seg.parent_label,
                    centerline,
                }
            })
            .collect(),
    };

    let spacing = [1.0; 3];
    Ok(Phantom {
        image: Volume::image(image, spacing)?,
        mask: Volume::mask(&mask, spacing)?,
        branch_labels: Volume::branch_labels(&labels, spacing)?,
        tree,
    })
}

/// Closed point-in-cylinder test between the segment's end faces.
pub fn inside_cylinder(v: Voxel, seg: &Segment) -> bool {
    let p = [v[0] as f64, v[1] as f64, v[2] as f64];
    let d = sub(seg.end, seg.start);
    let w = sub(p, seg.start);
    let dd = dot(d, d);
    let t = dot(w, d) / dd;
    if !(0.0..=1.0).contains(&t) {
        return false;
    }
    let foot = [
        seg.start[0] + t * d[0],
        seg.start[1] + t * d[1],
        seg.start[2] + t * d[2],
    ];
    let off = sub(p, foot);
    dot(off, off) <= seg.radius * seg.radius
}

/// Branch geometry in breadth-first label order. Segment lengths shrink by
/// 10% steps until the whole tree fits inside the volume.
pub fn layout(spec: &PhantomSpec) -> Result<Vec<Segment>, PhantomError> {
    spec.validate()?;
    let margin = spec.trunk_radius_vox.ceil() as usize;
    let required = 2 * margin + 3;
    for (a, &dim) in spec.dims.iter().enumerate() {
        if dim < required {
            return Err(PhantomError::DimTooSmall {
                axis: AXES[a],
                dim,
                required,
            });
        }
    }
    let mut scale = 1.0;
    let mut last_axis = 0;
    while spec.segment_length_vox * scale >= 2.0 {
        let segments = build_tree(spec, scale);
        match misfit_axis(spec, &segments) {
            None => return Ok(segments),
            Some(axis) => last_axis = axis,
        }
        scale *= 0.9;
    }
    Err(PhantomError::TreeDoesNotFit {
        axis: AXES[last_axis],
        depth: spec.depth,
    })
}

fn build_tree(spec: &PhantomSpec, scale: f64) -> Vec<Segment> {
    let dims = spec.dims;
    let start = [
        (dims[0] - 2) as f64,
        ((dims[1] - 1) as f64 / 2.0).round(),
        ((dims[2] - 1) as f64 / 2.0).round(),
    ];
    let angle = spec.branch_angle_deg.to_radians();
    // (segment, intended direction, generation)
    let mut out: Vec<(Segment, [f64; 3], u32)> = Vec::new();
    let root_dir = [-1.0, 0.0, 0.0];
    let root_len = spec.segment_length_vox * scale;
    out.push((
        Segment {
            label: 1,
            parent_label: 0,
            start,
            end: snap(add(start, mul(root_dir, root_len))),
            radius: spec.trunk_radius_vox.max(MIN_BRANCH_RADIUS),
        },
        root_dir,
        0,
    ));
    let mut next = 0;
    while next < out.len() {
        let (parent, dir, generation) = out[next];
        next += 1;
        if generation + 1 >= spec.depth {
            continue;
        }
        let g = generation + 1;
        let axis = rotation_axis(dir, generation);
        let len = spec.segment_length_vox * scale * spec.length_taper.powi(g as i32);
        let radius = (spec.trunk_radius_vox * spec.radius_taper.powi(g as i32)).max(MIN_BRANCH_RADIUS);
        for sign in [1.0, -1.0] {
            let child_dir = rotate(dir, axis, sign * angle);
            let label = out.len() as u32 + 1;
            out.push((
                Segment {
                    label,
                    parent_label: parent.label,
                    start: parent.end,
                    end: snap(add(parent.end, mul(child_dir, len))),
                    radius,
                },
                child_dir,
                g,
            ));
        }
    }
    out.into_iter().map(|(s, _, _)| s).collect()
}

/// Axis perpendicular to `dir`, alternating reference axes per generation so
/// successive bifurcations spread in different planes.
fn rotation_axis(dir: [f64; 3], generation: u32) -> [f64; 3] {
    let refs = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
    let first = refs[(generation % 2) as usize];
    let second = refs[((generation + 1) % 2) as usize];
    for r in [first, second, [1.0, 0.0, 0.0]] {
        let c = cross(dir, r);
        let n = dot(c, c).sqrt();
        if n > 1e-6 {
            return mul(c, 1.0 / n);
        }
    }
    unreachable!("a unit vector is parallel to at most one coordinate axis")
}

fn misfit_axis(spec: &PhantomSpec, segments: &[Segment]) -> Option<usize> {
    for seg in segments {
        let m = seg.radius.ceil();
        let len = dot(sub(seg.end, seg.start), sub(seg.end, seg.start)).sqrt();
        if len < 2.0 {
            return Some(0);
        }
        let points: &[[f64; 3]] = if seg.parent_label == 0 {
            std::slice::from_ref(&seg.end)
        } else {
            &[seg.start, seg.end]
        };
        for p in points {
            for a in 0..3 {
                if p[a] < m || p[a] > spec.dims[a] as f64 - 1.0 - m {
                    return Some(a);
                }
            }
        }
    }
    None
}

/// 26-connected digital line between two voxels, both ends included.
pub fn rasterize_line(a: Voxel, b: Voxel) -> Vec<Voxel> {
    let steps = (0..3).map(|i| a[i].abs_diff(b[i])).max().unwrap_or(0);
    if steps == 0 {
        return vec![a];
    }
    let mut out: Vec<Voxel> = Vec::with_capacity(steps + 1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let v = [0, 1, 2].map(|i| (a[i] as f64 + t * (b[i] as f64 - a[i] as f64)).round() as usize);
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

fn to_voxel(p: [f64; 3]) -> Voxel {
    [p[0] as usize, p[1] as usize, p[2] as usize]
}

fn snap(p: [f64; 3]) -> [f64; 3] {
    [p[0].round(), p[1].round(), p[2].round()]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn mul(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Rodrigues rotation of `v` about unit `axis`.
fn rotate(v: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let kxv = cross(axis, v);
    let kv = dot(axis, v);
    [0, 1, 2].map(|i| v[i] * c + kxv[i] * s + axis[i] * kv * (1.0 - c))
}
