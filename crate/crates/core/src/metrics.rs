//! Evaluation of vessel segmentation and artery/vein classification.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{FovMask, Label, LabelMap, ProbabilityTriplet};
use crate::skeleton::Branch;

/// Guard on the background probability in [`vessel_probability`].
pub const EPS_DIV: f64 = 1e-6;

/// `max(p_artery, p_vein) / max(p_back, EPS_DIV)`. Unbounded above.
pub fn vessel_probability(p: &ProbabilityTriplet) -> Vec<f64> {
    (0..p.p_back.len())
        .map(|i| {
            let v = p.p_artery[i].max(p.p_vein[i]) as f64;
            v / (p.p_back[i] as f64).max(EPS_DIV)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// Descending; the first point is the `+inf` threshold (nothing positive).
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub tnr: Vec<f64>,
}

impl RocCurve {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["threshold", "tpr", "tnr"])?;
        for k in 0..self.thresholds.len() {
            wtr.write_record([
                self.thresholds[k].to_string(),
                self.tpr[k].to_string(),
                self.tnr[k].to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// ROC over the unique observed scores of inside-mask pixels, with AUC by
/// the trapezoidal rule on `(1 - TNR, TPR)`. A pixel is called positive at
/// threshold `z` when its score is `>= z`.
pub fn roc_auc(scores: &[f64], positives: &[bool], mask: Option<&FovMask>) -> Result<(RocCurve, f64)> {
    if scores.len() != positives.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            positives.len()
        )));
    }
    let mut pts: Vec<(f64, bool)> = scores
        .iter()
        .zip(positives)
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m.inside_index(*i)))
        .map(|(_, (&s, &p))| (s, p))
        .collect();
    let n_pos = pts.iter().filter(|p| p.1).count();
    let n_neg = pts.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateClass(format!(
            "ROC needs both classes (positives {n_pos}, negatives {n_neg})"
        )));
    }
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut thresholds = vec![f64::INFINITY];
    let mut tpr = vec![0.0];
    let mut tnr = vec![1.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut k = 0;
    while k < pts.len() {
        let z = pts[k].0;
        while k < pts.len() && pts[k].0 == z {
            if pts[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let (x0, y0) = (1.0 - tnr[tnr.len() - 1], tpr[tpr.len() - 1]);
        let (x1, y1) = (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        thresholds.push(z);
        tpr.push(y1);
        tnr.push(1.0 - x1);
    }
    Ok((
        RocCurve {
            thresholds,
            tpr,
            tnr,
        },
        auc,
    ))
}

/// Fraction of inside-FOV pixels whose predicted class equals the truth.
pub fn three_class_accuracy(pred: &LabelMap, truth: &LabelMap, mask: &FovMask) -> Result<f64> {
    check_aligned(pred, truth, mask)?;
    let (mut hit, mut n) = (0usize, 0usize);
    for (i, (p, t)) in pred.labels().iter().zip(truth.labels()).enumerate() {
        if mask.inside_index(i) {
            n += 1;
            if p == t {
                hit += 1;
            }
        }
    }
    Ok(hit as f64 / n as f64)
}

fn check_aligned(pred: &LabelMap, truth: &LabelMap, mask: &FovMask) -> Result<()> {
    truth.check_size(pred.width, pred.height, "truth labels")?;
    pred.check_size(mask.width(), mask.height(), "predicted labels")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensSpec {
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Arteries are positives and veins negatives, counted over truth vessel
/// pixels (optionally only those on the truth centerline) inside the FOV.
/// `restrict` further limits the evaluated pixels.
pub fn av_sensitivity_specificity(
    pred: &LabelMap,
    truth: &LabelMap,
    mask: &FovMask,
    centerline_only: bool,
    restrict: Option<&[bool]>,
) -> Result<SensSpec> {
    check_aligned(pred, truth, mask)?;
    let centerline = centerline_only.then(|| crate::skeleton::thin(&truth.vessel_mask()));
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..pred.labels().len() {
        if !mask.inside_index(i) || restrict.is_some_and(|r| !r[i]) {
            continue;
        }
        if let Some(c) = &centerline {
            if !c.pixels.data[i] {
                continue;
            }
        }
        match truth.labels()[i] {
            Label::Artery => {
                pos += 1;
                if pred.labels()[i] == Label::Artery {
                    tp += 1;
                }
            }
            Label::Vein => {
                neg += 1;
                if pred.labels()[i] == Label::Vein {
                    tn += 1;
                }
            }
            _ => {}
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateClass(format!(
            "truth has {pos} artery and {neg} vein pixels in the evaluated set"
        )));
    }
    Ok(SensSpec {
        sensitivity: tp as f64 / pos as f64,
        specificity: tn as f64 / neg as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Stratum {
    /// diameter < 2 px
    Thin,
    /// 2 <= diameter < 4 px
    Medium,
    /// diameter >= 4 px
    Wide,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Thin, Stratum::Medium, Stratum::Wide];

    pub fn of(diameter: f64) -> Stratum {
        if diameter < 2.0 {
            Stratum::Thin
        } else if diameter < 4.0 {
            Stratum::Medium
        } else {
            Stratum::Wide
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stratum::Thin => "lt2",
            Stratum::Medium => "2to4",
            Stratum::Wide => "ge4",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumMetrics {
    pub stratum: Stratum,
    pub pixels: usize,
    /// Share of all truth vessel pixels.
    pub fraction: f64,
    /// `None` for an empty stratum.
    pub accuracy: Option<f64>,
    /// `None` when the stratum lacks arteries or veins.
    pub av: Option<SensSpec>,
}

/// Metrics restricted to truth vessel pixels of each diameter stratum.
/// `truth_diameters` is per pixel (row-major) and only read at truth vessel pixels.
pub fn stratify_by_diameter(
    truth_diameters: &[f64],
    pred: &LabelMap,
    truth: &LabelMap,
    mask: &FovMask,
) -> Result<Vec<StratumMetrics>> {
    check_aligned(pred, truth, mask)?;
    if truth_diameters.len() != pred.labels().len() {
        return Err(Error::DimensionMismatch("diameter map size".into()));
    }
    let vessel: Vec<bool> = (0..truth_diameters.len())
        .map(|i| mask.inside_index(i) && truth.labels()[i].is_vessel())
        .collect();
    let total = vessel.iter().filter(|&&v| v).count();
    Stratum::ALL
        .iter()
        .map(|&s| {
            let member: Vec<bool> = (0..vessel.len())
                .map(|i| vessel[i] && Stratum::of(truth_diameters[i]) == s)
                .collect();
            let pixels = member.iter().filter(|&&m| m).count();
            let hits = (0..member.len())
                .filter(|&i| member[i] && pred.labels()[i] == truth.labels()[i])
                .count();
            let av = match av_sensitivity_specificity(pred, truth, mask, false, Some(&member)) {
                Ok(v) => Some(v),
                Err(Error::DegenerateClass(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(StratumMetrics {
                stratum: s,
                pixels,
                fraction: if total > 0 { pixels as f64 / total as f64 } else { 0.0 },
                accuracy: (pixels > 0).then(|| hits as f64 / pixels as f64),
                av,
            })
        })
        .collect()
}

/// Fraction of branches whose predicted class matches the majority truth
/// class over the branch pixels. Branches whose pixels are all non-vessel in
/// the truth are skipped; `None` if none remain.
pub fn branch_accuracy(branches: &[Branch], predicted_artery: &[bool], truth: &LabelMap) -> Option<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for (b, &pa) in branches.iter().zip(predicted_artery) {
        if let Some(is_artery) = majority_artery(b, truth) {
            n += 1;
            if is_artery == pa {
                hit += 1;
            }
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

/// `Some(true)` if more truth-artery than truth-vein pixels lie on the
/// branch, `Some(false)` for the converse, `None` without a majority.
pub fn majority_artery(b: &Branch, truth: &LabelMap) -> Option<bool> {
    let (mut a, mut v) = (0usize, 0usize);
    for &(x, y) in &b.pixels {
        match truth.get(x, y) {
            Label::Artery => a += 1,
            Label::Vein => v += 1,
            _ => {}
        }
    }
    match a.cmp(&v) {
        std::cmp::Ordering::Greater => Some(true),
        std::cmp::Ordering::Less => Some(false),
        std::cmp::Ordering::Equal => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BinaryImage;
    use crate::raster::Label::{Artery as A, Background as B, Vein as V};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Pairwise comparison statistic with ties counted as one half.
    fn mann_whitney(scores: &[f64], pos: &[bool]) -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    n += 1.0;
                    if scores[i] > scores[j] {
                        s += 1.0;
                    } else if scores[i] == scores[j] {
                        s += 0.5;
                    }
                }
            }
        }
        s / n
    }

    fn triplet(b: f32, a: f32, v: f32) -> ProbabilityTriplet {
        ProbabilityTriplet {
            width: 1,
            height: 1,
            p_back: vec![b],
            p_artery: vec![a],
            p_vein: vec![v],
        }
    }

    #[test]
    fn vessel_probability_values() {
        let p = vessel_probability(&triplet(0.8, 0.1, 0.1));
        assert!((p[0] - 0.125).abs() < 1e-7);
        let p = vessel_probability(&triplet(0.0, 0.7, 0.3));
        assert!(p[0].is_finite());
        assert!((p[0] / (0.7 / 1e-6) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn vessel_probability_ranking_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ts: Vec<(f32, f32, f32)> = (0..50)
            .map(|_| (rng.random_range(0.05..1.0), rng.random_range(0.0..0.4), rng.random_range(0.0..0.4)))
            .collect();
        let score = |k: f32| -> Vec<f64> {
            ts.iter()
                .map(|&(b, a, v)| vessel_probability(&triplet(b, a * k, v * k))[0])
                .collect()
        };
        let (s1, s2) = (score(1.0), score(2.5));
        for i in 0..ts.len() {
            for j in 0..ts.len() {
                if s1[i] < s1[j] {
                    assert!(s2[i] <= s2[j]);
                }
            }
        }
    }

    #[test]
    fn auc_simple_cases() {
        let pos = [true, true, false, false];
        let (_, auc) = roc_auc(&[0.9, 0.8, 0.2, 0.1], &pos, None).unwrap();
        assert_eq!(auc, 1.0);
        let (roc, auc) = roc_auc(&[0.3; 4], &pos, None).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(roc.tpr, vec![0.0, 1.0]);
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true], None),
            Err(Error::DegenerateClass(_))
        ));
    }

    #[test]
    fn auc_matches_pairwise_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.random_range(2..300);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 4.0).collect();
            let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            pos[0] = true;
            pos[1] = false;
            let (roc, auc) = roc_auc(&scores, &pos, None).unwrap();
            assert!((auc - mann_whitney(&scores, &pos)).abs() < 1e-9);
            assert!(roc.tpr.windows(2).all(|w| w[0] <= w[1]));
            assert!(roc.tnr.windows(2).all(|w| w[0] >= w[1]));
            assert_eq!(*roc.tpr.last().unwrap(), 1.0);
            let neg: Vec<bool> = pos.iter().map(|p| !p).collect();
            let (_, auc_neg) = roc_auc(&scores, &neg, None).unwrap();
            assert!((auc + auc_neg - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn auc_respects_mask() {
        let mask = FovMask::new(BinaryImage::from_fn(4, 1, |x, _| x < 3)).unwrap();
        // the outside pixel would otherwise spoil the perfect ranking
        let (_, auc) = roc_auc(&[0.9, 0.1, 0.2, 0.95], &[true, false, false, false], Some(&mask)).unwrap();
        assert_eq!(auc, 1.0);
    }

    fn lm(codes: &[crate::raster::Label], w: usize) -> LabelMap {
        LabelMap::new(w, codes.len() / w, codes.to_vec()).unwrap()
    }

    #[test]
    fn accuracy_cases() {
        let t = lm(&[A, V, B, A, V, B], 3);
        let m = FovMask::full(3, 2).unwrap();
        assert_eq!(three_class_accuracy(&t, &t, &m).unwrap(), 1.0);
        let all_vessel = lm(&[A, V, V, A], 2);
        let swapped = lm(&[V, A, A, V], 2);
        let m4 = FovMask::full(2, 2).unwrap();
        assert_eq!(three_class_accuracy(&swapped, &all_vessel, &m4).unwrap(), 0.0);
        // confusion grid: 4 of 6 correct
        let p = lm(&[A, A, B, A, V, V], 3);
        assert!((three_class_accuracy(&p, &t, &m).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        // permutation consistency: swap A and V in both
        let sw = |l: &LabelMap| {
            lm(
                &l.labels()
                    .iter()
                    .map(|&c| match c {
                        A => V,
                        V => A,
                        o => o,
                    })
                    .collect::<Vec<_>>(),
                3,
            )
        };
        assert_eq!(
            three_class_accuracy(&sw(&p), &sw(&t), &m).unwrap(),
            three_class_accuracy(&p, &t, &m).unwrap()
        );
        let wrong = FovMask::full(2, 3).unwrap();
        assert!(three_class_accuracy(&p, &t, &wrong).is_err());
    }

    #[test]
    fn sens_spec_cases() {
        let t = lm(&[A, A, V, V, B, B], 6);
        let m = FovMask::full(6, 1).unwrap();
        let r = av_sensitivity_specificity(&t, &t, &m, false, None).unwrap();
        assert_eq!((r.sensitivity, r.specificity), (1.0, 1.0));
        let all_a = lm(&[A, A, A, A, A, A], 6);
        let r = av_sensitivity_specificity(&all_a, &t, &m, false, None).unwrap();
        assert_eq!((r.sensitivity, r.specificity), (1.0, 0.0));
        let flips = lm(&[A, V, V, A, B, A], 6);
        let r = av_sensitivity_specificity(&flips, &t, &m, false, None).unwrap();
        assert_eq!((r.sensitivity, r.specificity), (0.5, 0.5));
        let no_vein = lm(&[A, A, B, B, B, B], 6);
        assert!(av_sensitivity_specificity(&t, &no_vein, &m, false, None).is_err());
    }

    #[test]
    fn centerline_restriction() {
        // 3-px-tall artery bar above a separate 3-px-tall vein bar
        let t = LabelMap::new(
            9,
            9,
            (0..81)
                .map(|i| match i / 9 {
                    1..=3 => A,
                    5..=7 => V,
                    _ => B,
                })
                .collect(),
        )
        .unwrap();
        let mut p = t.clone();
        for x in 0..9 {
            p.set(x, 1, V);
        }
        let m = FovMask::full(9, 9).unwrap();
        let full = av_sensitivity_specificity(&p, &t, &m, false, None).unwrap();
        assert!(full.sensitivity < 1.0);
        let cl = av_sensitivity_specificity(&p, &t, &m, true, None).unwrap();
        let skel = crate::skeleton::thin(&t.vessel_mask());
        let touched = (0..9).any(|x| skel.is_on(x, 1));
        assert_eq!(cl.sensitivity == 1.0, !touched);
    }

    #[test]
    fn strata() {
        let t = lm(&[A, A, V, V, B, A], 6);
        let p = lm(&[A, V, V, V, B, A], 6);
        let m = FovMask::full(6, 1).unwrap();
        let all_wide = stratify_by_diameter(&[5.0; 6], &p, &t, &m).unwrap();
        assert_eq!(all_wide[0].pixels, 0);
        assert_eq!(all_wide[1].pixels, 0);
        assert_eq!(all_wide[2].pixels, 5);
        assert!(all_wide[0].accuracy.is_none());

        let d = [1.0, 5.0, 1.0, 5.0, 0.0, 1.0];
        let s = stratify_by_diameter(&d, &p, &t, &m).unwrap();
        // recompute on masked subsets
        let thin = [0usize, 2, 5];
        let wide = [1usize, 3];
        let acc = |idx: &[usize]| {
            idx.iter().filter(|&&i| p.labels()[i] == t.labels()[i]).count() as f64 / idx.len() as f64
        };
        assert_eq!(s[0].accuracy, Some(acc(&thin)));
        assert_eq!(s[2].accuracy, Some(acc(&wide)));
        assert!((s[0].fraction - 0.6).abs() < 1e-12);
        assert_eq!(s[2].av.unwrap().sensitivity, 0.0);
    }
}
