//! Vessel calibre measurement and arterio-venous ratios.
//!
//! Widths come from the distance transform at centerline pixels. The local
//! ratio summarises the six widest arteries and veins in the ring 0.5-2 disc
//! diameters from the optic disc centre with the revised Knudtson pairing
//! formulas; the global ratio compares mean artery and vein calibre over the
//! whole field of view.

use serde::{Deserialize, Serialize};

use crate::distance::{distance_to_background, nearest_seed};
use crate::error::{Error, Result};
use crate::raster::{BinaryImage, FovMask};
use crate::skeleton::{thin, Branch, Skeleton};

/// Number of widest vessels per class kept for the local ratio.
pub const WIDEST_KEPT: usize = 6;
pub const ANNULUS_INNER_DD: f64 = 0.5;
pub const ANNULUS_OUTER_DD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticDiscSpec {
    pub center: (f64, f64),
    pub diameter: f64,
}

impl OpticDiscSpec {
    pub fn new(center: (f64, f64), diameter: f64, mask: &FovMask) -> Result<Self> {
        if !(diameter > 0.0) {
            return Err(Error::InvalidParams(format!("disc diameter {diameter} must be > 0")));
        }
        let (x, y) = (center.0.round(), center.1.round());
        let inside = x >= 0.0
            && y >= 0.0
            && (x as usize) < mask.width()
            && (y as usize) < mask.height()
            && mask.inside(x as usize, y as usize);
        if !inside {
            return Err(Error::InvalidParams(format!(
                "disc centre ({}, {}) is outside the FOV",
                center.0, center.1
            )));
        }
        Ok(Self { center, diameter })
    }

    /// Distance from the disc centre in disc diameters.
    pub fn distance_dd(&self, p: (usize, usize)) -> f64 {
        let dx = p.0 as f64 - self.center.0;
        let dy = p.1 as f64 - self.center.1;
        (dx * dx + dy * dy).sqrt() / self.diameter
    }

    pub fn in_annulus(&self, p: (usize, usize)) -> bool {
        (ANNULUS_INNER_DD..=ANNULUS_OUTER_DD).contains(&self.distance_dd(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnudtsonConstants {
    pub c_artery: f64,
    pub c_vein: f64,
}

impl Default for KnudtsonConstants {
    fn default() -> Self {
        Self {
            c_artery: 0.88,
            c_vein: 0.95,
        }
    }
}

impl KnudtsonConstants {
    pub fn validate(&self) -> Result<()> {
        for (n, c) in [("c_artery", self.c_artery), ("c_vein", self.c_vein)] {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::InvalidParams(format!("{n} = {c} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VesselClass {
    Artery,
    Vein,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VesselSegmentMeasure {
    pub branch_id: usize,
    pub class: VesselClass,
    /// Mean diameter over the measured centerline pixels.
    pub diameter: f64,
    pub point: (usize, usize),
    /// Number of centerline pixels measured.
    pub pixels: usize,
}

/// `2 * EDT - 1` at every skeleton pixel, `None` elsewhere.
pub fn diameter_map(vessel_mask: &BinaryImage, skeleton: &Skeleton) -> Result<Vec<Option<f64>>> {
    if vessel_mask.width != skeleton.width() || vessel_mask.height != skeleton.height() {
        return Err(Error::DimensionMismatch("skeleton vs vessel mask".into()));
    }
    if let Some((x, y)) = skeleton.pixels.iter_on().find(|&(x, y)| !vessel_mask.get(x, y)) {
        return Err(Error::SkeletonOutsideMask { x, y });
    }
    let edt = distance_to_background(vessel_mask);
    Ok(skeleton
        .pixels
        .data
        .iter()
        .zip(&edt)
        .map(|(&on, &d)| on.then_some(2.0 * d - 1.0))
        .collect())
}

/// Diameter for every vessel pixel, taken from its nearest centerline pixel;
/// 0 off the vessels.
pub fn vessel_pixel_diameters(vessel_mask: &BinaryImage) -> Vec<f64> {
    let skel = thin(vessel_mask);
    let diam = diameter_map(vessel_mask, &skel).expect("skeleton lies inside its own mask");
    let near = nearest_seed(&skel.pixels);
    (0..vessel_mask.data.len())
        .map(|i| {
            if !vessel_mask.data[i] {
                return 0.0;
            }
            near.seed[i].and_then(|s| diam[s]).unwrap_or(0.0)
        })
        .collect()
}

/// Per-branch width measurements. With `clip`, only branch pixels inside
/// the disc annulus are measured and branches with none are dropped.
pub fn segment_measures(
    branches: &[Branch],
    classes: &[Option<VesselClass>],
    diameters: &[Option<f64>],
    width: usize,
    clip: Option<&OpticDiscSpec>,
) -> Vec<VesselSegmentMeasure> {
    branches
        .iter()
        .zip(classes)
        .filter_map(|(b, class)| {
            let class = (*class)?;
            let pts: Vec<(usize, usize)> = b
                .pixels
                .iter()
                .copied()
                .filter(|&p| clip.is_none_or(|od| od.in_annulus(p)))
                .filter(|&(x, y)| diameters[y * width + x].is_some_and(|d| d > 0.0))
                .collect();
            if pts.is_empty() {
                return None;
            }
            let sum: f64 = pts.iter().map(|&(x, y)| diameters[y * width + x].unwrap()).sum();
            Some(VesselSegmentMeasure {
                branch_id: b.id,
                class,
                diameter: sum / pts.len() as f64,
                point: pts[pts.len() / 2],
                pixels: pts.len(),
            })
        })
        .collect()
}

/// Segments in the annulus, each class sorted widest first and cut to six.
pub fn annulus_select(
    measures: &[VesselSegmentMeasure],
    od: &OpticDiscSpec,
) -> (Vec<VesselSegmentMeasure>, Vec<VesselSegmentMeasure>) {
    let pick = |class| {
        let mut v: Vec<VesselSegmentMeasure> = measures
            .iter()
            .filter(|m| m.class == class && od.in_annulus(m.point))
            .cloned()
            .collect();
        v.sort_by(|a, b| b.diameter.total_cmp(&a.diameter).then(a.branch_id.cmp(&b.branch_id)));
        v.truncate(WIDEST_KEPT);
        v
    };
    (pick(VesselClass::Artery), pick(VesselClass::Vein))
}

/// Iterative pairing: each round combines the widest with the narrowest as
/// `c * sqrt(a^2 + b^2)`, carrying the middle value of an odd count, until
/// one value remains.
pub fn knudtson_equivalent(widths: &[f64], c: f64) -> Result<f64> {
    if widths.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut cur = widths.to_vec();
    while cur.len() > 1 {
        cur.sort_by(|a, b| b.total_cmp(a));
        let n = cur.len();
        let mut next = Vec::with_capacity(n.div_ceil(2));
        for k in 0..n / 2 {
            let (a, b) = (cur[k], cur[n - 1 - k]);
            next.push(c * (a * a + b * b).sqrt());
        }
        if n % 2 == 1 {
            next.push(cur[n / 2]);
        }
        cur = next;
    }
    Ok(cur[0])
}

/// CRAE / CRVE over the annulus selections.
pub fn local_avr(
    arteries: &[VesselSegmentMeasure],
    veins: &[VesselSegmentMeasure],
    k: &KnudtsonConstants,
) -> Result<f64> {
    if arteries.is_empty() {
        return Err(Error::MissingClassInAnnulus("artery"));
    }
    if veins.is_empty() {
        return Err(Error::MissingClassInAnnulus("vein"));
    }
    let wa: Vec<f64> = arteries.iter().map(|m| m.diameter).collect();
    let wv: Vec<f64> = veins.iter().map(|m| m.diameter).collect();
    Ok(knudtson_equivalent(&wa, k.c_artery)? / knudtson_equivalent(&wv, k.c_vein)?)
}

/// Pixel-weighted mean artery diameter over pixel-weighted mean vein
/// diameter, for segments whose representative point is in the FOV.
pub fn global_avr(measures: &[VesselSegmentMeasure], mask: &FovMask) -> Result<f64> {
    let mean = |class| {
        let (mut s, mut n) = (0.0, 0usize);
        for m in measures
            .iter()
            .filter(|m| m.class == class && mask.inside(m.point.0, m.point.1))
        {
            s += m.diameter * m.pixels as f64;
            n += m.pixels;
        }
        (n > 0).then(|| s / n as f64)
    };
    let a = mean(VesselClass::Artery).ok_or(Error::MissingClass("artery"))?;
    let v = mean(VesselClass::Vein).ok_or(Error::MissingClass("vein"))?;
    Ok(a / v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvrReport {
    pub local_avr: Option<f64>,
    pub global_avr: Option<f64>,
    pub annulus_arteries: usize,
    pub annulus_veins: usize,
    pub mean_artery_diameter: Option<f64>,
    pub mean_vein_diameter: Option<f64>,
}

impl AvrReport {
    pub fn write_csv<W: std::io::Write>(&self, image: &str, out: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "image",
            "local_avr",
            "global_avr",
            "annulus_arteries",
            "annulus_veins",
            "mean_artery_diameter",
            "mean_vein_diameter",
        ])?;
        wtr.write_record([
            image.to_string(),
            opt(self.local_avr),
            opt(self.global_avr),
            self.annulus_arteries.to_string(),
            self.annulus_veins.to_string(),
            opt(self.mean_artery_diameter),
            opt(self.mean_vein_diameter),
        ])?;
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Both ratios for a labelled vessel tree. Missing classes leave the
/// corresponding ratio empty rather than failing.
pub fn measure_avr(
    vessel_mask: &BinaryImage,
    skeleton: &Skeleton,
    branches: &[Branch],
    classes: &[Option<VesselClass>],
    od: Option<&OpticDiscSpec>,
    fov: &FovMask,
    k: &KnudtsonConstants,
) -> Result<AvrReport> {
    k.validate()?;
    let diam = diameter_map(vessel_mask, skeleton)?;
    let w = vessel_mask.width;
    let all = segment_measures(branches, classes, &diam, w, None);
    let global = match global_avr(&all, fov) {
        Ok(v) => Some(v),
        Err(Error::MissingClass(_)) => None,
        Err(e) => return Err(e),
    };
    let class_mean = |class| {
        let (mut s, mut n) = (0.0, 0usize);
        for m in all.iter().filter(|m| m.class == class) {
            s += m.diameter * m.pixels as f64;
            n += m.pixels;
        }
        (n > 0).then(|| s / n as f64)
    };
    let (mut local, mut na, mut nv) = (None, 0, 0);
    if let Some(od) = od {
        let clipped = segment_measures(branches, classes, &diam, w, Some(od));
        let (a, v) = annulus_select(&clipped, od);
        na = a.len();
        nv = v.len();
        local = match local_avr(&a, &v, k) {
            Ok(r) => Some(r),
            Err(Error::MissingClassInAnnulus(_)) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(AvrReport {
        local_avr: local,
        global_avr: global,
        annulus_arteries: na,
        annulus_veins: nv,
        mean_artery_diameter: class_mean(VesselClass::Artery),
        mean_vein_diameter: class_mean(VesselClass::Vein),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn measure(id: usize, class: VesselClass, d: f64, point: (usize, usize)) -> VesselSegmentMeasure {
        VesselSegmentMeasure {
            branch_id: id,
            class,
            diameter: d,
            point,
            pixels: 1,
        }
    }

    #[test]
    fn bar_diameters() {
        let thin = BinaryImage::from_fn(20, 5, |_, y| y == 2);
        let skel = Skeleton { pixels: thin.clone() };
        let d = diameter_map(&thin, &skel).unwrap();
        assert!(thin.iter_on().all(|(x, y)| d[y * 20 + x] == Some(1.0)));

        let bar = BinaryImage::from_fn(30, 11, |_, y| (3..8).contains(&y));
        let skel = Skeleton {
            pixels: BinaryImage::from_fn(30, 11, |x, y| y == 5 && (5..25).contains(&x)),
        };
        let d = diameter_map(&bar, &skel).unwrap();
        // EDT oracle: centre row is 3 px from the nearest background row
        let v = d[5 * 30 + 15].unwrap();
        assert!((v - 5.0).abs() <= 0.5);
    }

    #[test]
    fn disc_diameter() {
        let r = 6.0;
        let disc = BinaryImage::from_fn(21, 21, |x, y| {
            let (dx, dy) = (x as f64 - 10.0, y as f64 - 10.0);
            (dx * dx + dy * dy).sqrt() <= r
        });
        let skel = Skeleton {
            pixels: BinaryImage::from_fn(21, 21, |x, y| (x, y) == (10, 10)),
        };
        let d = diameter_map(&disc, &skel).unwrap()[10 * 21 + 10].unwrap();
        // nearest background pixel is (6, 1) away: sqrt(37)
        assert!((d - (2.0 * r - 1.0)).abs() <= 0.5, "{d}");
        assert!((d - (2.0 * 37f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn skeleton_must_be_inside() {
        let m = BinaryImage::from_fn(3, 3, |x, _| x == 0);
        let s = Skeleton {
            pixels: BinaryImage::from_fn(3, 3, |x, y| (x, y) == (2, 2)),
        };
        assert!(matches!(
            diameter_map(&m, &s),
            Err(Error::SkeletonOutsideMask { x: 2, y: 2 })
        ));
    }

    #[test]
    fn widening_never_shrinks() {
        for h in 1..8 {
            let narrow = BinaryImage::from_fn(30, 20, |_, y| (5..5 + h).contains(&y));
            let wide = BinaryImage::from_fn(30, 20, |_, y| (5..6 + h).contains(&y));
            let dn = vessel_pixel_diameters(&narrow);
            let dw = vessel_pixel_diameters(&wide);
            let max = |d: &[f64]| d.iter().cloned().fold(0.0, f64::max);
            assert!(max(&dw) >= max(&dn));
        }
    }

    #[test]
    fn annulus_membership() {
        let fov = FovMask::full(200, 200).unwrap();
        let od = OpticDiscSpec::new((100.0, 100.0), 20.0, &fov).unwrap();
        assert!(od.in_annulus((120, 100)));
        assert!(!od.in_annulus((105, 100)));
        assert!(OpticDiscSpec::new((500.0, 1.0), 20.0, &fov).is_err());
        assert!(OpticDiscSpec::new((5.0, 1.0), 0.0, &fov).is_err());
    }

    #[test]
    fn keeps_six_widest() {
        let fov = FovMask::full(200, 200).unwrap();
        let od = OpticDiscSpec::new((100.0, 100.0), 20.0, &fov).unwrap();
        let widths = [3.0, 7.5, 2.0, 6.0, 9.0, 4.0, 5.5, 1.0];
        let mut ms: Vec<_> = widths
            .iter()
            .enumerate()
            .map(|(k, &d)| measure(k, VesselClass::Artery, d, (120, 100)))
            .collect();
        ms.push(measure(99, VesselClass::Artery, 50.0, (100, 100)));
        let (a, v) = annulus_select(&ms, &od);
        assert!(v.is_empty());
        let mut expected = widths.to_vec();
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        expected.truncate(6);
        assert_eq!(a.iter().map(|m| m.diameter).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn knudtson_cases() {
        assert_eq!(knudtson_equivalent(&[4.2], 0.88).unwrap(), 4.2);
        assert_eq!(knudtson_equivalent(&[3.0, 4.0], 1.0).unwrap(), 5.0);
        assert!(matches!(knudtson_equivalent(&[], 0.9), Err(Error::EmptyList)));

        // six equal widths w: round 1 gives three of c*w*sqrt(2); round 2 pairs
        // two of them into c*sqrt(2*(c*w*sqrt2)^2) = 2*c^2*w and carries one;
        // round 3 combines 2c^2w with c*w*sqrt(2).
        let (w, c) = (3.0f64, 0.88f64);
        let r1 = c * (2.0 * w * w).sqrt();
        let r2 = c * (2.0 * r1 * r1).sqrt();
        let r3 = c * (r2 * r2 + r1 * r1).sqrt();
        let got = knudtson_equivalent(&[w; 6], c).unwrap();
        assert!((got - r3).abs() < 1e-12);
        assert!((got - c * c * w * (4.0 * c * c + 2.0).sqrt()).abs() < 1e-12);

        // odd count carries the median: {1, 2, 3}, c = 1 -> sqrt(10) with 2 -> sqrt(14)
        assert!((knudtson_equivalent(&[1.0, 2.0, 3.0], 1.0).unwrap() - 14f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn local_and_global() {
        let k = KnudtsonConstants {
            c_artery: 0.9,
            c_vein: 0.9,
        };
        let a: Vec<_> = [3.0, 4.0, 5.0]
            .iter()
            .enumerate()
            .map(|(i, &d)| measure(i, VesselClass::Artery, d, (0, 0)))
            .collect();
        let v: Vec<_> = [3.0, 4.0, 5.0]
            .iter()
            .enumerate()
            .map(|(i, &d)| measure(i, VesselClass::Vein, d, (0, 0)))
            .collect();
        assert_eq!(local_avr(&a, &v, &k).unwrap(), 1.0);
        assert!(matches!(local_avr(&[], &v, &k), Err(Error::MissingClassInAnnulus("artery"))));

        let kd = KnudtsonConstants::default();
        let wa = [6.0, 5.0, 4.5];
        let wv = [8.0, 7.0];
        let ma: Vec<_> = wa.iter().map(|&d| measure(0, VesselClass::Artery, d, (0, 0))).collect();
        let mv: Vec<_> = wv.iter().map(|&d| measure(0, VesselClass::Vein, d, (0, 0))).collect();
        let expected = knudtson_equivalent(&wa, 0.88).unwrap() / knudtson_equivalent(&wv, 0.95).unwrap();
        assert_eq!(local_avr(&ma, &mv, &kd).unwrap(), expected);

        let fov = FovMask::full(2, 2).unwrap();
        let mut all = a.clone();
        all.extend(v.clone());
        assert_eq!(global_avr(&all, &fov).unwrap(), 1.0);
        let fixed: Vec<_> = (0..4)
            .map(|i| measure(i, VesselClass::Artery, 4.0, (0, 0)))
            .chain((0..3).map(|i| measure(i, VesselClass::Vein, 5.0, (1, 1))))
            .collect();
        assert!((global_avr(&fixed, &fov).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(global_avr(&a, &fov), Err(Error::MissingClass("vein"))));
    }

    proptest! {
        #[test]
        fn knudtson_scale_and_permutation(
            ws in proptest::collection::vec(0.5f64..20.0, 1..=6),
            alpha in 0.1f64..10.0,
            c in 0.5f64..1.0,
            rot in 0usize..6,
        ) {
            let base = knudtson_equivalent(&ws, c).unwrap();
            let scaled: Vec<f64> = ws.iter().map(|w| alpha * w).collect();
            let s = knudtson_equivalent(&scaled, c).unwrap();
            prop_assert!((s - alpha * base).abs() <= 1e-9 * s.abs().max(1.0));
            let mut perm = ws.clone();
            perm.rotate_left(rot % ws.len());
            perm.reverse();
            prop_assert_eq!(knudtson_equivalent(&perm, c).unwrap(), base);
        }

        #[test]
        fn ratios_scale_free(alpha in 0.1f64..10.0) {
            let fov = FovMask::full(1, 1).unwrap();
            let ms = vec![
                measure(0, VesselClass::Artery, 3.0, (0, 0)),
                measure(1, VesselClass::Artery, 4.5, (0, 0)),
                measure(2, VesselClass::Vein, 5.0, (0, 0)),
                measure(3, VesselClass::Vein, 6.5, (0, 0)),
            ];
            let scaled: Vec<_> = ms.iter().cloned().map(|mut m| { m.diameter *= alpha; m }).collect();
            let g1 = global_avr(&ms, &fov).unwrap();
            let g2 = global_avr(&scaled, &fov).unwrap();
            prop_assert!((g1 - g2).abs() < 1e-12);
            let k = KnudtsonConstants::default();
            let split = |v: &[VesselSegmentMeasure]| -> (Vec<_>, Vec<_>) {
                v.iter().cloned().partition(|m| m.class == VesselClass::Artery)
            };
            let (a1, v1) = split(&ms);
            let (a2, v2) = split(&scaled);
            prop_assert!((local_avr(&a1, &v1, &k).unwrap() - local_avr(&a2, &v2, &k).unwrap()).abs() < 1e-12);
        }
    }
}
