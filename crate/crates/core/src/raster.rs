//! Raster and label containers shared by every pipeline stage.
//!
//! Samples are stored planar: channel-major, row-major within a channel, so a
//! single channel is always a contiguous slice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `p_back + p_artery + p_vein` at inside-FOV pixels.
pub const SIMPLEX_TOLERANCE: f32 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster2D {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<f32>,
}

impl Raster2D {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidRaster(format!(
                "dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidRaster("dimensions overflow".into()))?;
        if samples.len() != expected {
            return Err(Error::InvalidRaster(format!(
                "expected {expected} samples, got {}",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width.saturating_mul(height).saturating_mul(channels)],
        )
    }

    /// Builds a single-channel raster from a row-major closure.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self::new(width, height, 1, samples)
    }

    /// Stacks single-channel rasters of equal size into one multi-channel raster.
    pub fn stack(planes: &[&Raster2D]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidRaster("no planes to stack".into()))?;
        let mut samples = Vec::with_capacity(first.plane_len() * planes.len());
        for p in planes {
            if p.width != first.width || p.height != first.height {
                return Err(Error::DimensionMismatch(format!(
                    "{}x{} vs {}x{}",
                    p.width, p.height, first.width, first.height
                )));
            }
            samples.extend_from_slice(&p.samples);
        }
        Self::new(first.width, first.height, samples.len() / first.plane_len(), samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.samples[c * n..(c + 1) * n]
    }

    /// Copies one channel out as a single-channel raster.
    pub fn extract_channel(&self, c: usize) -> Raster2D {
        Raster2D {
            width: self.width,
            height: self.height,
            channels: 1,
            samples: self.channel(c).to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.samples[c * self.plane_len() + y * self.width + x]
    }

    pub(crate) fn check_size(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::DimensionMismatch(format!(
                "{what}: raster is {}x{}, expected {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Dense boolean image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as `false`.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Set pixels in row-major order.
    pub fn iter_on(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FovMask {
    mask: BinaryImage,
}

impl FovMask {
    pub fn new(mask: BinaryImage) -> Result<Self> {
        if mask.width == 0 || mask.height == 0 {
            return Err(Error::InvalidRaster("empty FOV mask".into()));
        }
        if !mask.data.iter().any(|&b| b) {
            return Err(Error::InvalidRaster("FOV mask has no inside pixel".into()));
        }
        Ok(Self { mask })
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::new(BinaryImage::from_fn(width, height, |_, _| true))
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    #[inline]
    pub fn inside(&self, x: usize, y: usize) -> bool {
        self.mask.get(x, y)
    }

    #[inline]
    pub fn inside_index(&self, i: usize) -> bool {
        self.mask.data[i]
    }

    pub fn as_binary(&self) -> &BinaryImage {
        &self.mask
    }

    /// Number of rows containing at least one inside pixel, first to last.
    pub fn vertical_extent(&self) -> usize {
        let w = self.mask.width;
        let rows: Vec<usize> = (0..self.mask.height)
            .filter(|&y| self.mask.data[y * w..(y + 1) * w].iter().any(|&b| b))
            .collect();
        match (rows.first(), rows.last()) {
            (Some(a), Some(b)) => b - a + 1,
            _ => 0,
        }
    }
}

/// Three aligned single-channel probability maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTriplet {
    pub width: usize,
    pub height: usize,
    pub p_back: Vec<f32>,
    pub p_artery: Vec<f32>,
    pub p_vein: Vec<f32>,
}

impl ProbabilityTriplet {
    /// Checks range and simplex constraints; the simplex is only enforced inside the FOV.
    pub fn new(
        width: usize,
        height: usize,
        p_back: Vec<f32>,
        p_artery: Vec<f32>,
        p_vein: Vec<f32>,
        mask: &FovMask,
    ) -> Result<Self> {
        let n = width * height;
        if p_back.len() != n || p_artery.len() != n || p_vein.len() != n {
            return Err(Error::DimensionMismatch(
                "probability planes differ from declared size".into(),
            ));
        }
        if mask.width() != width || mask.height() != height {
            return Err(Error::DimensionMismatch(format!(
                "FOV mask {}x{} vs probabilities {width}x{height}",
                mask.width(),
                mask.height()
            )));
        }
        for i in 0..n {
            let (b, a, v) = (p_back[i], p_artery[i], p_vein[i]);
            for p in [b, a, v] {
                if !p.is_finite() {
                    return Err(Error::NonFiniteSample(i));
                }
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidRaster(format!(
                        "probability {p} outside [0, 1] at index {i}"
                    )));
                }
            }
            let sum = b + a + v;
            if mask.inside_index(i) && (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::SimplexViolation {
                    x: i % width,
                    y: i / width,
                    sum,
                });
            }
        }
        Ok(Self {
            width,
            height,
            p_back,
            p_artery,
            p_vein,
        })
    }

    /// Interprets a 3-channel raster as `[p_back, p_artery, p_vein]`.
    pub fn from_raster(r: &Raster2D, mask: &FovMask) -> Result<Self> {
        if r.channels() != 3 {
            return Err(Error::InvalidRaster(format!(
                "probability raster needs 3 channels, got {}",
                r.channels()
            )));
        }
        Self::new(
            r.width(),
            r.height(),
            r.channel(0).to_vec(),
            r.channel(1).to_vec(),
            r.channel(2).to_vec(),
            mask,
        )
    }

    pub fn to_raster(&self) -> Raster2D {
        let mut samples = Vec::with_capacity(3 * self.p_back.len());
        samples.extend_from_slice(&self.p_back);
        samples.extend_from_slice(&self.p_artery);
        samples.extend_from_slice(&self.p_vein);
        Raster2D::new(self.width, self.height, 3, samples).expect("triplet planes are valid")
    }

    /// Per-pixel artery likelihood `p_a / (p_a + p_v)`; 0.5 where both vanish.
    pub fn artery_likelihood(&self) -> Vec<f64> {
        self.p_artery
            .iter()
            .zip(&self.p_vein)
            .map(|(&a, &v)| {
                let (a, v) = (a as f64, v as f64);
                if a + v > 0.0 {
                    a / (a + v)
                } else {
                    0.5
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Artery = 1,
    Vein = 2,
    Outside = 255,
}

impl Label {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Background),
            1 => Some(Label::Artery),
            2 => Some(Label::Vein),
            255 => Some(Label::Outside),
            _ => None,
        }
    }

    pub fn is_vessel(self) -> bool {
        matches!(self, Label::Artery | Label::Vein)
    }
}

/// Per-pixel class codes; `Outside` exactly where the FOV mask is outside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    labels: Vec<Label>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "label map of {} entries for {width}x{height}",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn from_codes(width: usize, height: usize, codes: &[u8]) -> Result<Self> {
        let labels = codes
            .iter()
            .map(|&c| {
                Label::from_code(c)
                    .ok_or_else(|| Error::InvalidRaster(format!("unknown label code {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(width, height, labels)
    }

    /// Validates the outside-code invariant against `mask`.
    pub fn check_fov(&self, mask: &FovMask) -> Result<()> {
        self.check_size(mask.width(), mask.height(), "label map")?;
        for (i, l) in self.labels.iter().enumerate() {
            if (*l == Label::Outside) == mask.inside_index(i) {
                return Err(Error::InvalidRaster(format!(
                    "outside code mismatch with FOV at ({}, {})",
                    i % self.width,
                    i / self.width
                )));
            }
        }
        Ok(())
    }

    pub fn codes(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.code()).collect()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Label {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, l: Label) {
        self.labels[y * self.width + x] = l;
    }

    pub fn vessel_mask(&self) -> BinaryImage {
        BinaryImage {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|l| l.is_vessel()).collect(),
        }
    }

    pub fn check_size(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Picks the most probable class per inside pixel.
///
/// Ties resolve background > artery > vein.
pub fn argmax_labels(p: &ProbabilityTriplet, mask: &FovMask) -> Result<LabelMap> {
    if mask.width() != p.width || mask.height() != p.height {
        return Err(Error::DimensionMismatch(format!(
            "FOV mask {}x{} vs probabilities {}x{}",
            mask.width(),
            mask.height(),
            p.width,
            p.height
        )));
    }
    let labels = (0..p.width * p.height)
        .map(|i| {
            if !mask.inside_index(i) {
                return Label::Outside;
            }
            let (b, a, v) = (p.p_back[i], p.p_artery[i], p.p_vein[i]);
            if b >= a && b >= v {
                Label::Background
            } else if a >= v {
                Label::Artery
            } else {
                Label::Vein
            }
        })
        .collect();
    LabelMap::new(p.width, p.height, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(b: f32, a: f32, v: f32) -> (ProbabilityTriplet, FovMask) {
        let mask = FovMask::full(1, 1).unwrap();
        let p = ProbabilityTriplet::new(1, 1, vec![b], vec![a], vec![v], &mask).unwrap();
        (p, mask)
    }

    #[test]
    fn strict_argmax() {
        let (p, m) = single(0.1, 0.8, 0.1);
        assert_eq!(argmax_labels(&p, &m).unwrap().get(0, 0), Label::Artery);
        let (p, m) = single(0.34, 0.33, 0.33);
        assert_eq!(argmax_labels(&p, &m).unwrap().get(0, 0), Label::Background);
        let (p, m) = single(0.4, 0.4, 0.2);
        assert_eq!(argmax_labels(&p, &m).unwrap().get(0, 0), Label::Background);
    }

    #[test]
    fn tie_order_exhaustive() {
        // Every pattern of equal maxima: the first class in the order
        // background > artery > vein that attains the maximum wins.
        let order = [Label::Background, Label::Artery, Label::Vein];
        for pattern in 1u8..8 {
            let hi = 0.5f32;
            let lo = 0.0f32;
            let vals: Vec<f32> = (0..3)
                .map(|k| if pattern & (1 << k) != 0 { hi } else { lo })
                .collect();
            let mask = FovMask::full(1, 1).unwrap();
            // Not a simplex; bypass validation to probe the raw tie rule.
            let p = ProbabilityTriplet {
                width: 1,
                height: 1,
                p_back: vec![vals[0]],
                p_artery: vec![vals[1]],
                p_vein: vec![vals[2]],
            };
            let expected = order[(0..3).find(|&k| pattern & (1 << k) != 0).unwrap()];
            assert_eq!(argmax_labels(&p, &mask).unwrap().get(0, 0), expected);
        }
    }

    #[test]
    fn outside_pixels_get_sentinel() {
        let mask = FovMask::new(BinaryImage::from_fn(2, 1, |x, _| x == 0)).unwrap();
        let p = ProbabilityTriplet::new(2, 1, vec![0.1, 0.0], vec![0.8, 0.0], vec![0.1, 0.0], &mask)
            .unwrap();
        let l = argmax_labels(&p, &mask).unwrap();
        assert_eq!(l.codes(), vec![1, 255]);
        l.check_fov(&mask).unwrap();
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Raster2D::new(2, 2, 0, vec![]).is_err());
        assert!(matches!(
            Raster2D::new(1, 1, 1, vec![f32::NAN]),
            Err(Error::NonFiniteSample(0))
        ));
        let mask = FovMask::full(1, 1).unwrap();
        assert!(matches!(
            ProbabilityTriplet::new(1, 1, vec![0.5], vec![0.2], vec![0.2], &mask),
            Err(Error::SimplexViolation { .. })
        ));
        assert!(FovMask::new(BinaryImage::new(3, 3)).is_err());
        let other = FovMask::full(2, 2).unwrap();
        let (p, _) = single(0.2, 0.3, 0.5);
        assert!(matches!(
            argmax_labels(&p, &other),
            Err(Error::DimensionMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn argmax_scale_invariant(
            b in 0.0f32..1.0, a in 0.0f32..1.0, v in 0.0f32..1.0, k in 0.01f32..100.0
        ) {
            let mask = FovMask::full(1, 1).unwrap();
            let raw = |s: f32| ProbabilityTriplet {
                width: 1, height: 1,
                p_back: vec![b * s], p_artery: vec![a * s], p_vein: vec![v * s],
            };
            let l1 = argmax_labels(&raw(1.0), &mask).unwrap();
            let l2 = argmax_labels(&raw(k), &mask).unwrap();
            // Scaling can only merge values through rounding; skip near-ties.
            let mut s = [b, a, v];
            s.sort_by(|x, y| y.total_cmp(x));
            prop_assume!(s[0] - s[1] > 1e-5 * s[0].max(1e-6));
            prop_assert_eq!(l1, l2);
        }
    }
}
