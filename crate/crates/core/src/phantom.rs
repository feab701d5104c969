//! Synthetic vessel phantoms with known artery/vein truth, and CNN-like
//! probability maps derived from them.
//!
//! One artery tree and one vein tree grow from near the image centre (the
//! optic disc) as random binary trees of straight thick segments. Pixels are
//! owned by the nearest covering segment, so segment ownership partitions
//! the vessel pixels and every corruption can be traced back to a segment.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, OdSidecar};
use crate::raster::{BinaryImage, FovMask, Label, LabelMap, ProbabilityTriplet, Raster2D};

/// Layout attempts before giving up with `SpecInfeasible`.
const MAX_ATTEMPTS: usize = 200;

/// Minimum gap (pixels) kept between artery and vein pixels when crossings
/// are disabled.
const AV_GAP: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    /// Depth 0 is a single segment per tree; each level doubles the leaves.
    pub depth: usize,
    pub branch_length: (f64, f64),
    /// Root segments draw from the upper part of this range; children
    /// narrow towards the lower bound.
    pub width: (f64, f64),
    pub size: (usize, usize),
    pub flip_fraction: f64,
    pub noise_sigma: f64,
    /// Probability of the true class is `0.5 + margin` before noise.
    pub margin: f64,
    /// Lets the vein tree grow in any direction, so it may cross arteries.
    pub crossings: bool,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            depth: 3,
            branch_length: (20.0, 35.0),
            width: (1.5, 6.0),
            size: (384, 384),
            flip_fraction: 0.0,
            noise_sigma: 0.0,
            margin: 0.3,
            crossings: false,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        let (l0, l1) = self.branch_length;
        if !(l0 > 0.0 && l0 <= l1 && l1.is_finite()) {
            return bad(format!("branch length range {l0}..{l1}"));
        }
        let (w0, w1) = self.width;
        if !(w0 >= 1.0 && w0 <= w1 && w1.is_finite()) {
            return bad(format!("width range {w0}..{w1}"));
        }
        if self.size.0 < 16 || self.size.1 < 16 {
            return bad(format!("image size {}x{} below 16x16", self.size.0, self.size.1));
        }
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            return bad(format!("flip_fraction {} not in [0, 1]", self.flip_fraction));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {}", self.noise_sigma));
        }
        if !(self.margin > 0.0 && self.margin <= 0.5) {
            return bad(format!("margin {} not in (0, 0.5]", self.margin));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSegment {
    pub id: usize,
    pub class: Label,
    pub parent: Option<usize>,
    pub depth: usize,
    pub start: (f64, f64),
    pub end: (f64, f64),
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub truth: LabelMap,
    pub fov: FovMask,
    pub od: OdSidecar,
    pub segments: Vec<PhantomSegment>,
    /// Owning segment of each vessel pixel, row-major.
    pub owner: Vec<Option<usize>>,
}

/// Distance from `p` to the segment `a`-`b`.
fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn grow_tree(
    rng: &mut ChaCha8Rng,
    spec: &PhantomSpec,
    class: Label,
    origin: (f64, f64),
    heading: f64,
    out: &mut Vec<PhantomSegment>,
) {
    let (w0, w1) = spec.width;
    let root_width = w0 + (w1 - w0) * rng.random_range(0.75..=1.0);
    // (parent, start, heading, width, depth)
    let mut stack = vec![(None, origin, heading, root_width, 0usize)];
    while let Some((parent, start, dir, width, depth)) = stack.pop() {
        let len = rng.random_range(spec.branch_length.0..=spec.branch_length.1);
        let end = (start.0 + len * dir.cos(), start.1 + len * dir.sin());
        let id = out.len();
        out.push(PhantomSegment {
            id,
            class,
            parent,
            depth,
            start,
            end,
            width,
        });
        if depth < spec.depth {
            let spread = rng.random_range(0.45..0.8);
            let skew = rng.random_range(-0.15..0.15);
            for side in [-1.0, 1.0] {
                let child_w = (width * rng.random_range(0.7..0.85)).max(w0);
                stack.push((Some(id), end, dir + side * spread + skew, child_w, depth + 1));
            }
        }
    }
}

struct Layout {
    segments: Vec<PhantomSegment>,
    owner: Vec<Option<usize>>,
}

fn render(segments: &[PhantomSegment], w: usize, h: usize) -> Vec<Option<usize>> {
    let mut best = vec![(f64::INFINITY, None); w * h];
    for s in segments {
        let r = s.width / 2.0;
        let x0 = (s.start.0.min(s.end.0) - r).floor().max(0.0) as usize;
        let y0 = (s.start.1.min(s.end.1) - r).floor().max(0.0) as usize;
        let x1 = ((s.start.0.max(s.end.0) + r).ceil().max(0.0) as usize).min(w - 1);
        let y1 = ((s.start.1.max(s.end.1) + r).ceil().max(0.0) as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = segment_distance((x as f64, y as f64), s.start, s.end);
                let cell = &mut best[y * w + x];
                // strict: earlier segments win exact ties
                if d <= r && d < cell.0 {
                    *cell = (d, Some(s.id));
                }
            }
        }
    }
    best.into_iter().map(|(_, o)| o).collect()
}

fn try_layout(
    rng: &mut ChaCha8Rng,
    spec: &PhantomSpec,
    center: (f64, f64),
    fov_radius: f64,
    dd: f64,
) -> Option<Layout> {
    let (w, h) = spec.size;
    let a_dir = rng.random_range(0.0..2.0 * PI);
    let v_dir = if spec.crossings {
        rng.random_range(0.0..2.0 * PI)
    } else {
        a_dir + PI + rng.random_range(-0.3..0.3)
    };
    let start = |dir: f64| (center.0 + 0.3 * dd * dir.cos(), center.1 + 0.3 * dd * dir.sin());
    let mut segments = Vec::new();
    grow_tree(rng, spec, Label::Artery, start(a_dir), a_dir, &mut segments);
    grow_tree(rng, spec, Label::Vein, start(v_dir), v_dir, &mut segments);

    let inner = fov_radius - 2.0;
    for s in &segments {
        for p in [s.start, s.end] {
            let (dx, dy) = (p.0 - center.0, p.1 - center.1);
            if (dx * dx + dy * dy).sqrt() + s.width / 2.0 > inner {
                return None;
            }
        }
    }
    if !spec.crossings {
        for a in segments.iter().filter(|s| s.class == Label::Artery) {
            for v in segments.iter().filter(|s| s.class == Label::Vein) {
                if segments_distance(a, v) < a.width / 2.0 + v.width / 2.0 + AV_GAP {
                    return None;
                }
            }
        }
    }
    let owner = render(&segments, w, h);
    let mut owned = vec![false; segments.len()];
    for o in owner.iter().flatten() {
        owned[*o] = true;
    }
    if owned.contains(&false) {
        return None;
    }
    Some(Layout { segments, owner })
}

fn segments_distance(a: &PhantomSegment, b: &PhantomSegment) -> f64 {
    if segments_intersect(a.start, a.end, b.start, b.end) {
        return 0.0;
    }
    [
        segment_distance(a.start, b.start, b.end),
        segment_distance(a.end, b.start, b.end),
        segment_distance(b.start, a.start, a.end),
        segment_distance(b.end, a.start, a.end),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

fn segments_intersect(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Renders a phantom. A pure function of `spec`.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (w, h) = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let center = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let fov_radius = 0.48 * w.min(h) as f64;
    let dd = (0.12 * w.min(h) as f64).max(4.0);
    let fov_img = BinaryImage::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - center.0, y as f64 - center.1);
        dx * dx + dy * dy <= fov_radius * fov_radius
    });
    let fov = FovMask::new(fov_img)?;

    for _ in 0..MAX_ATTEMPTS {
        let Some(layout) = try_layout(&mut rng, spec, center, fov_radius, dd) else {
            continue;
        };
        let labels = (0..w * h)
            .map(|i| {
                if !fov.inside_index(i) {
                    Label::Outside
                } else {
                    layout.owner[i].map_or(Label::Background, |s| layout.segments[s].class)
                }
            })
            .collect();
        return Ok(Phantom {
            truth: LabelMap::new(w, h, labels)?,
            fov,
            od: OdSidecar {
                cx: center.0,
                cy: center.1,
                dd,
            },
            segments: layout.segments,
            owner: layout.owner,
        });
    }
    Err(Error::SpecInfeasible(format!(
        "no layout of depth {} with lengths {:?} fits a {}x{} field of view after {MAX_ATTEMPTS} attempts",
        spec.depth, spec.branch_length, w, h
    )))
}

/// The ids of `ceil(flip_fraction * n)` segments, drawn without replacement.
pub fn flipped_segments(n: usize, spec: &PhantomSpec) -> Vec<usize> {
    let k = ((spec.flip_fraction * n as f64).ceil() as usize).min(n);
    // decorrelated from the layout stream
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_F11B);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let mut out = ids[..k].to_vec();
    out.sort_unstable();
    out
}

/// CNN-like probabilities: the true class gets `0.5 + margin` and the other
/// two share the rest; flipped segments swap their artery and vein values;
/// Gaussian noise is then added per channel, negatives clamped to 0, and
/// each pixel renormalized to sum 1.
pub fn corrupt(phantom: &Phantom, spec: &PhantomSpec) -> Result<(ProbabilityTriplet, Vec<usize>)> {
    spec.validate()?;
    let (w, h) = (phantom.truth.width, phantom.truth.height);
    let flipped = flipped_segments(phantom.segments.len(), spec);
    let mut is_flipped = vec![false; phantom.segments.len()];
    for &f in &flipped {
        is_flipped[f] = true;
    }
    let hi = (0.5 + spec.margin) as f32;
    let lo = ((0.5 - spec.margin) / 2.0) as f32;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x0015_E5ED);

    let n = w * h;
    let (mut pb, mut pa, mut pv) = (vec![0f32; n], vec![0f32; n], vec![0f32; n]);
    for i in 0..n {
        let mut p = match phantom.truth.labels()[i] {
            Label::Artery => [lo, hi, lo],
            Label::Vein => [lo, lo, hi],
            Label::Background | Label::Outside => [hi, lo, lo],
        };
        if phantom.owner[i].is_some_and(|s| is_flipped[s]) {
            p.swap(1, 2);
        }
        if spec.noise_sigma > 0.0 {
            let noisy = p.map(|v| (v as f64 + noise.sample(&mut rng)).max(0.0));
            let sum: f64 = noisy.iter().sum();
            if sum > 0.0 {
                p = noisy.map(|v| (v / sum) as f32);
            }
        }
        (pb[i], pa[i], pv[i]) = (p[0], p[1], p[2]);
    }
    let trip = ProbabilityTriplet::new(w, h, pb, pa, pv, &phantom.fov)?;
    Ok((trip, flipped))
}

/// A smooth gray fundus stand-in: vignetted background, darker vessels,
/// veins darker than arteries.
pub fn synthetic_image(phantom: &Phantom) -> Raster2D {
    let (w, h) = (phantom.truth.width, phantom.truth.height);
    let (cx, cy) = (phantom.od.cx, phantom.od.cy);
    let plane = Raster2D::from_fn(w, h, |x, y| {
        if !phantom.fov.inside(x, y) {
            return 0.0;
        }
        let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() / w.max(h) as f64;
        let base = 170.0 - 60.0 * r;
        let v = match phantom.truth.get(x, y) {
            Label::Artery => base - 35.0,
            Label::Vein => base - 60.0,
            _ => base,
        };
        v.round() as f32
    })
    .expect("phantom size is validated");
    Raster2D::stack(&[&plane, &plane, &plane]).expect("equal planes")
}

#[derive(Debug, Clone, Serialize)]
struct BranchTruth<'a> {
    spec: &'a PhantomSpec,
    flipped: &'a [usize],
    segments: &'a [PhantomSegment],
}

/// File names inside a phantom bundle directory.
pub mod bundle {
    pub const IMAGE: &str = "image.png";
    pub const TRUTH: &str = "truth.png";
    pub const PROBS: &str = "probs.avpm";
    pub const FOV: &str = "fov.png";
    pub const OD: &str = "od.json";
    pub const BRANCHES: &str = "branches.json";
}

/// Generates, corrupts and writes a complete bundle into `dir`.
pub fn write_bundle(spec: &PhantomSpec, dir: &Path) -> Result<Phantom> {
    let phantom = generate(spec)?;
    let (probs, flipped) = corrupt(&phantom, spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_rgb_png(&synthetic_image(&phantom), dir.join(bundle::IMAGE))?;
    io::write_label_png(&phantom.truth, dir.join(bundle::TRUTH))?;
    io::write_avpm(&probs.to_raster(), dir.join(bundle::PROBS))?;
    io::write_binary_png(phantom.fov.as_binary(), dir.join(bundle::FOV))?;
    io::write_json(&phantom.od, dir.join(bundle::OD))?;
    io::write_json(
        &BranchTruth {
            spec,
            flipped: &flipped,
            segments: &phantom.segments,
        },
        dir.join(bundle::BRANCHES),
    )?;
    Ok(phantom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::argmax_labels;

    fn spec(seed: u64) -> PhantomSpec {
        PhantomSpec {
            seed,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn depth_zero_is_two_segments() {
        let p = generate(&PhantomSpec {
            depth: 0,
            ..spec(3)
        })
        .unwrap();
        assert_eq!(p.segments.len(), 2);
        assert_eq!(p.segments[0].class, Label::Artery);
        assert_eq!(p.segments[1].class, Label::Vein);
    }

    #[test]
    fn same_seed_same_phantom() {
        let a = generate(&spec(11)).unwrap();
        let b = generate(&spec(11)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.truth, generate(&spec(12)).unwrap().truth);
    }

    #[test]
    fn owners_partition_vessel_pixels() {
        for seed in 0..5 {
            let p = generate(&spec(seed)).unwrap();
            for (i, l) in p.truth.labels().iter().enumerate() {
                match p.owner[i] {
                    Some(s) => assert_eq!(*l, p.segments[s].class),
                    None => assert!(!l.is_vessel()),
                }
            }
        }
    }

    #[test]
    fn no_contact_without_crossings() {
        for seed in 0..5 {
            let p = generate(&spec(seed)).unwrap();
            let (w, h) = (p.truth.width, p.truth.height);
            for y in 0..h {
                for x in 0..w {
                    if p.truth.get(x, y) != Label::Artery {
                        continue;
                    }
                    for yy in y.saturating_sub(2)..(y + 3).min(h) {
                        for xx in x.saturating_sub(2)..(x + 3).min(w) {
                            assert_ne!(p.truth.get(xx, yy), Label::Vein);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn clean_corruption_recovers_truth() {
        let s = spec(5);
        let p = generate(&s).unwrap();
        let (probs, flipped) = corrupt(&p, &s).unwrap();
        assert!(flipped.is_empty());
        assert_eq!(argmax_labels(&probs, &p.fov).unwrap(), p.truth);
    }

    #[test]
    fn full_flip_swaps_every_vessel_pixel() {
        let s = PhantomSpec {
            flip_fraction: 1.0,
            ..spec(6)
        };
        let p = generate(&s).unwrap();
        let labels = argmax_labels(&corrupt(&p, &s).unwrap().0, &p.fov).unwrap();
        for (got, want) in labels.labels().iter().zip(p.truth.labels()) {
            let expect = match want {
                Label::Artery => Label::Vein,
                Label::Vein => Label::Artery,
                other => *other,
            };
            assert_eq!(*got, expect);
        }
    }

    #[test]
    fn flipped_count_from_truth_comparison() {
        let s = PhantomSpec {
            flip_fraction: 0.2,
            ..spec(8)
        };
        let p = generate(&s).unwrap();
        let labels = argmax_labels(&corrupt(&p, &s).unwrap().0, &p.fov).unwrap();
        let mut swapped = vec![false; p.segments.len()];
        for (i, o) in p.owner.iter().enumerate() {
            if let Some(seg) = o {
                if labels.labels()[i] != p.truth.labels()[i] {
                    swapped[*seg] = true;
                }
            }
        }
        let n = p.segments.len();
        let expect = (0.2 * n as f64).ceil() as usize;
        assert_eq!(swapped.iter().filter(|s| **s).count(), expect);
    }

    #[test]
    fn noisy_output_is_a_valid_triplet() {
        let s = PhantomSpec {
            flip_fraction: 0.2,
            noise_sigma: 0.3,
            ..spec(9)
        };
        let p = generate(&s).unwrap();
        let (probs, _) = corrupt(&p, &s).unwrap();
        // re-validate through the checked constructor
        ProbabilityTriplet::from_raster(&probs.to_raster(), &p.fov).unwrap();
    }

    #[test]
    fn infeasible_spec_reported() {
        let s = PhantomSpec {
            depth: 6,
            branch_length: (200.0, 250.0),
            size: (64, 64),
            ..spec(1)
        };
        assert!(matches!(generate(&s), Err(Error::SpecInfeasible(_))));
    }

    #[test]
    fn invalid_spec_rejected() {
        let s = PhantomSpec {
            flip_fraction: 1.5,
            ..spec(1)
        };
        assert!(matches!(generate(&s), Err(Error::InvalidParams(_))));
    }
}
