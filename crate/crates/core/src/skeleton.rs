//! Skeletonization of the vessel segmentation and its decomposition into
//! junction-free branches.

use std::f64::consts::PI;

use serde::Serialize;

use crate::components::label_components;
use crate::raster::BinaryImage;

/// One-pixel-wide centerline image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    pub pixels: BinaryImage,
}

impl Skeleton {
    pub fn width(&self) -> usize {
        self.pixels.width
    }

    pub fn height(&self) -> usize {
        self.pixels.height
    }

    pub fn is_on(&self, x: usize, y: usize) -> bool {
        self.pixels.get(x, y)
    }
}

/// Clockwise from north: P2..P9 in the usual Zhang-Suen naming.
const RING: [(isize, isize); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

fn ring(img: &BinaryImage, x: usize, y: usize) -> [bool; 8] {
    let mut n = [false; 8];
    for (k, (dx, dy)) in RING.iter().enumerate() {
        n[k] = img.get_signed(x as isize + dx, y as isize + dy);
    }
    n
}

fn deletable(n: &[bool; 8], first: bool) -> bool {
    let b = n.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&k| !n[k] && n[(k + 1) % 8]).count();
    if a != 1 {
        return false;
    }
    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
    if first {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// Zhang-Suen thinning run to its fixpoint.
///
/// The parallel sub-iterations of the classical rules can erase a small
/// component outright (a 2x2 block is the canonical case). When every pixel
/// of a component is marked in the same sub-iteration, its first pixel in
/// raster order is kept so that the component count is preserved.
pub fn zhang_suen_thin(mask: &BinaryImage) -> Skeleton {
    let mut img = mask.clone();
    let w = img.width;
    let mut active: Vec<usize> = (0..img.data.len()).filter(|&i| img.data[i]).collect();
    let mut marked = vec![false; img.data.len()];
    loop {
        let mut changed = false;
        for first in [true, false] {
            let candidates: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&i| img.data[i] && deletable(&ring(&img, i % w, i / w), first))
                .collect();
            if candidates.is_empty() {
                continue;
            }
            for &i in &candidates {
                marked[i] = true;
            }
            let keep = vanishing_components(&img, &candidates, &marked);
            for &i in &candidates {
                marked[i] = false;
            }
            for &i in &candidates {
                if !keep.contains(&i) {
                    img.data[i] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        active.retain(|&i| img.data[i]);
    }
    Skeleton { pixels: img }
}

/// Groups of marked pixels that make up an entire component; returns the
/// first pixel (raster order) of each such group.
fn vanishing_components(img: &BinaryImage, candidates: &[usize], marked: &[bool]) -> Vec<usize> {
    let w = img.width;
    let mut seen = std::collections::HashSet::new();
    let mut keep = Vec::new();
    for &start in candidates {
        if !seen.insert(start) {
            continue;
        }
        let mut stack = vec![start];
        let mut group_min = start;
        let mut touches_survivor = false;
        while let Some(i) = stack.pop() {
            group_min = group_min.min(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in RING {
                if !img.get_signed(x + dx, y + dy) {
                    continue;
                }
                let j = (y + dy) as usize * w + (x + dx) as usize;
                if marked[j] {
                    if seen.insert(j) {
                        stack.push(j);
                    }
                } else {
                    touches_survivor = true;
                }
            }
        }
        if !touches_survivor {
            keep.push(group_min);
        }
    }
    keep
}

/// Yokoi 8-connectivity number of the centre pixel; 1 means deleting it
/// changes neither the foreground nor the background topology.
fn connectivity_number(n: &[bool; 8]) -> usize {
    let off = |k: usize| !n[k % 8];
    (0..8)
        .step_by(2)
        .filter(|&k| off(k) && !(off(k + 1) && off(k + 2)))
        .count()
}

/// Deletes the redundant corner pixels of 4-connected staircases that
/// Zhang-Suen leaves on diagonal strokes, in raster order until nothing
/// changes. Only simple pixels with at least two neighbours go, so line
/// ends, junctions and component counts are kept.
pub fn remove_staircases(s: &Skeleton) -> Skeleton {
    let mut img = s.pixels.clone();
    loop {
        let mut changed = false;
        for y in 0..img.height {
            for x in 0..img.width {
                if !img.get(x, y) {
                    continue;
                }
                let n = ring(&img, x, y);
                // an L of two perpendicular 4-neighbours marks a staircase corner
                let corner = (0..8).step_by(2).any(|k| n[k] && n[(k + 2) % 8]);
                if corner && connectivity_number(&n) == 1 {
                    img.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Skeleton { pixels: img }
}

/// The pipeline's centerline: Zhang-Suen followed by staircase removal, so
/// that the result is 8-thin and the neighbour-count junction test only
/// fires at real branch points.
/// The two passes alternate until neither changes anything, which makes
/// `thin` idempotent.
pub fn thin(mask: &BinaryImage) -> Skeleton {
    let mut s = zhang_suen_thin(mask);
    loop {
        let cleaned = remove_staircases(&s);
        if cleaned == s {
            return s;
        }
        s = zhang_suen_thin(&cleaned.pixels);
    }
}

fn neighbour_count(img: &BinaryImage, x: usize, y: usize) -> usize {
    ring(img, x, y).iter().filter(|&&b| b).count()
}

/// Skeleton pixels with at least three skeleton 8-neighbours, in raster order.
pub fn detect_junctions(s: &Skeleton) -> Vec<(usize, usize)> {
    s.pixels
        .iter_on()
        .filter(|&(x, y)| neighbour_count(&s.pixels, x, y) >= 3)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    pub id: usize,
    /// 8-connected, ordered from the first endpoint to the second.
    pub pixels: Vec<(usize, usize)>,
    /// Orientation at the first endpoint, radians in `[0, pi)`.
    pub alpha1: f64,
    /// Orientation at the second endpoint, radians in `[0, pi)`.
    pub alpha2: f64,
    /// Single-pixel branch; orientations are 0 by convention.
    pub degenerate: bool,
}

impl Branch {
    /// Builds a branch from an ordered pixel list, fitting endpoint orientations.
    pub fn from_pixels(id: usize, pixels: Vec<(usize, usize)>) -> Self {
        assert!(!pixels.is_empty(), "branch needs at least one pixel");
        let n = pixels.len();
        let k = n.min(ORIENTATION_WINDOW);
        let alpha1 = fit_orientation(&pixels[..k]);
        let alpha2 = fit_orientation(&pixels[n - k..]);
        Self {
            id,
            pixels,
            alpha1,
            alpha2,
            degenerate: n == 1,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn endpoint1(&self) -> (usize, usize) {
        self.pixels[0]
    }

    pub fn endpoint2(&self) -> (usize, usize) {
        self.pixels[self.pixels.len() - 1]
    }

    pub fn endpoints(&self) -> [((usize, usize), f64); 2] {
        [
            (self.endpoint1(), self.alpha1),
            (self.endpoint2(), self.alpha2),
        ]
    }

    pub fn midpoint(&self) -> (usize, usize) {
        self.pixels[self.pixels.len() / 2]
    }
}

/// Number of pixels nearest each endpoint used for the orientation fit.
pub const ORIENTATION_WINDOW: usize = 5;

/// Folds any angle into `[0, pi)`.
pub fn fold_angle(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Principal-axis (total least squares) direction of a point set; the secant
/// for two points and 0 for a single point.
pub fn fit_orientation(pts: &[(usize, usize)]) -> f64 {
    match pts.len() {
        0 | 1 => 0.0,
        2 => {
            let (a, b) = (pts[0], pts[1]);
            fold_angle((b.1 as f64 - a.1 as f64).atan2(b.0 as f64 - a.0 as f64))
        }
        n => {
            let n = n as f64;
            let mx = pts.iter().map(|p| p.0 as f64).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1 as f64).sum::<f64>() / n;
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for &(x, y) in pts {
                let (dx, dy) = (x as f64 - mx, y as f64 - my);
                sxx += dx * dx;
                syy += dy * dy;
                sxy += dx * dy;
            }
            fold_angle(0.5 * (2.0 * sxy).atan2(sxx - syy))
        }
    }
}

/// Removes junctions, labels the remaining skeleton with the two-pass
/// algorithm and traces each component into an ordered branch.
///
/// Every remaining pixel has at most two neighbours, so each component is a
/// simple path or a closed loop. Paths are traced from the endpoint with the
/// smaller `(y, x)`; loops from their smallest pixel.
pub fn extract_branches(s: &Skeleton) -> Vec<Branch> {
    let mut rest = s.pixels.clone();
    for (x, y) in detect_junctions(s) {
        rest.set(x, y, false);
    }
    let comps = label_components(&rest);
    comps
        .pixel_lists()
        .into_iter()
        .enumerate()
        .map(|(id, pixels)| Branch::from_pixels(id, trace(&rest, &pixels)))
        .collect()
}

fn trace(img: &BinaryImage, pixels: &[(usize, usize)]) -> Vec<(usize, usize)> {
    // raster order == (y, x) order, so the first endpoint found is the smallest
    let start = pixels
        .iter()
        .copied()
        .find(|&(x, y)| neighbour_count(img, x, y) <= 1)
        .unwrap_or(pixels[0]);
    let w = img.width;
    let mut visited = std::collections::HashSet::with_capacity(pixels.len());
    let mut order = Vec::with_capacity(pixels.len());
    let mut cur = Some(start);
    while let Some((x, y)) = cur {
        visited.insert(y * w + x);
        order.push((x, y));
        cur = RING.iter().find_map(|&(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if !img.get_signed(nx, ny) {
                return None;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            (!visited.contains(&(ny * w + nx))).then_some((nx, ny))
        });
    }
    debug_assert_eq!(order.len(), pixels.len());
    order
}

/// Per-pixel branch index (row-major), `None` off the branches.
pub fn branch_index_map(branches: &[Branch], width: usize, height: usize) -> Vec<Option<usize>> {
    let mut map = vec![None; width * height];
    for (k, b) in branches.iter().enumerate() {
        for &(x, y) in &b.pixels {
            map[y * width + x] = Some(k);
        }
    }
    map
}
