//! Exact Euclidean distance transform with nearest-seed tracking
//! (separable lower-envelope algorithm of Felzenszwalb and Huttenlocher).

use crate::raster::BinaryImage;

/// Result of [`nearest_seed`]: squared distance and row-major index of the
/// closest seed pixel for every pixel. Both are `None`/infinite if the image has no seed.
#[derive(Debug, Clone)]
pub struct NearestSeed {
    pub width: usize,
    pub height: usize,
    pub dist_sq: Vec<f64>,
    pub seed: Vec<Option<usize>>,
}

impl NearestSeed {
    pub fn distance(&self, x: usize, y: usize) -> f64 {
        self.dist_sq[y * self.width + x].sqrt()
    }
}

/// 1-D lower envelope of parabolas rooted at finite `f[q]`; writes the
/// minimum value and minimizing position for each output coordinate.
fn envelope_1d(f: &[f64], out_d: &mut [f64], out_arg: &mut [Option<usize>]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if k < 0 {
            k = 0;
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            continue;
        }
        loop {
            let p = v[k as usize];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k as usize] {
                k -= 1;
                if k < 0 {
                    k = 0;
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
            } else {
                k += 1;
                v[k as usize] = q;
                z[k as usize] = s;
                z[k as usize + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if k < 0 {
        out_d.iter_mut().for_each(|d| *d = f64::INFINITY);
        out_arg.iter_mut().for_each(|a| *a = None);
        return;
    }
    let mut j = 0usize;
    for q in 0..n {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let d = q as f64 - p as f64;
        out_d[q] = d * d + f[p];
        out_arg[q] = Some(p);
    }
}

/// Distance from every pixel to the nearest `true` pixel of `seeds`.
pub fn nearest_seed(seeds: &BinaryImage) -> NearestSeed {
    let (w, h) = (seeds.width, seeds.height);
    // column pass: squared distance along the column and the seed row
    let mut col_d = vec![f64::INFINITY; w * h];
    let mut col_row = vec![None; w * h];
    let mut f = vec![0f64; h];
    let mut d = vec![0f64; h];
    let mut a = vec![None; h];
    for x in 0..w {
        for y in 0..h {
            f[y] = if seeds.get(x, y) { 0.0 } else { f64::INFINITY };
        }
        envelope_1d(&f, &mut d, &mut a);
        for y in 0..h {
            col_d[y * w + x] = d[y];
            col_row[y * w + x] = a[y];
        }
    }
    let mut dist_sq = vec![f64::INFINITY; w * h];
    let mut seed = vec![None; w * h];
    let mut d = vec![0f64; w];
    let mut a = vec![None; w];
    for y in 0..h {
        let row = &col_d[y * w..(y + 1) * w];
        envelope_1d(row, &mut d, &mut a);
        for x in 0..w {
            dist_sq[y * w + x] = d[x];
            seed[y * w + x] = a[x].and_then(|sx| col_row[y * w + sx].map(|sy| sy * w + sx));
        }
    }
    NearestSeed {
        width: w,
        height: h,
        dist_sq,
        seed,
    }
}

/// Euclidean distance from each pixel of `mask` to the nearest `false` pixel
/// (zero on background).
pub fn distance_to_background(mask: &BinaryImage) -> Vec<f64> {
    let bg = BinaryImage {
        width: mask.width,
        height: mask.height,
        data: mask.data.iter().map(|&b| !b).collect(),
    };
    nearest_seed(&bg).dist_sq.into_iter().map(f64::sqrt).collect()
}
