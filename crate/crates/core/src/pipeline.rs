//! End-to-end run: argmax labels, centerline branches, score propagation,
//! relabeling, then evaluation and AVR when truth or a disc are supplied.
//!
//! Every stage error is wrapped with the stage name. Output files:
//! `labels.png`; `metrics.csv` and `roc.csv` with truth; `avr.csv` with a
//! disc; `trace.json`, `graph.csv` and `skeleton.png` in debug mode.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::avr::{measure_avr, vessel_pixel_diameters, AvrReport, OpticDiscSpec, VesselClass};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::graph::{branch_score, build_graph_with, ScoredBranch};
use crate::io;
use crate::lsp::{assign_pixels_to_branches, propagate_with, relabel, PropagationResult};
use crate::metrics::{
    av_sensitivity_specificity, branch_accuracy, majority_artery, roc_auc, stratify_by_diameter,
    three_class_accuracy, vessel_probability, RocCurve,
};
use crate::par::Parallelism;
use crate::raster::{argmax_labels, FovMask, Label, LabelMap, ProbabilityTriplet, Raster2D};
use crate::skeleton::{extract_branches, thin, Branch, Skeleton};

pub const LABELS_FILE: &str = "labels.png";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const AVR_FILE: &str = "avr.csv";
pub const TRACE_FILE: &str = "trace.json";
pub const GRAPH_FILE: &str = "graph.csv";
pub const SKELETON_FILE: &str = "skeleton.png";

/// Everything the propagation stage produces.
#[derive(Debug, Clone)]
pub struct LspOutcome {
    pub initial: LabelMap,
    pub skeleton: Skeleton,
    pub branches: Vec<Branch>,
    pub initial_scores: Vec<f64>,
    pub propagation: PropagationResult,
    pub assignment: Vec<Option<usize>>,
    pub labels: LabelMap,
}

/// Argmax, thinning, branch extraction, scoring, propagation and relabeling.
pub fn label_and_propagate(
    probs: &ProbabilityTriplet,
    fov: &FovMask,
    cfg: &PipelineConfig,
    par: Parallelism,
) -> Result<LspOutcome> {
    cfg.validate().map_err(Error::at("config"))?;
    let initial = argmax_labels(probs, fov).map_err(Error::at("labels"))?;
    let vessels = initial.vessel_mask();
    let skeleton = thin(&vessels);
    let branches = extract_branches(&skeleton);
    if branches.is_empty() {
        // nothing to propagate: the argmax labeling stands
        return Ok(LspOutcome {
            labels: initial.clone(),
            initial,
            skeleton,
            branches,
            initial_scores: Vec::new(),
            propagation: PropagationResult {
                scores: Vec::new(),
                trace: Vec::new(),
            },
            assignment: vec![None; fov.width() * fov.height()],
        });
    }
    let likelihood = probs.artery_likelihood();
    let scored = branches
        .iter()
        .map(|b| {
            Ok(ScoredBranch {
                branch: b.clone(),
                score: branch_score(b, &likelihood, probs.width)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(Error::at("scores"))?;
    let propagation =
        propagate_with(&scored, &cfg.graph, cfg.iterations, par).map_err(Error::at("propagation"))?;
    let assignment = assign_pixels_to_branches(&vessels, &branches);
    let labels = relabel(&initial, &propagation.scores, &assignment).map_err(Error::at("relabel"))?;
    Ok(LspOutcome {
        initial,
        skeleton,
        initial_scores: scored.iter().map(|s| s.score).collect(),
        branches,
        propagation,
        assignment,
        labels,
    })
}

/// One `metrics.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub stratum: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<MetricRow>,
    /// Vessel-segmentation ROC, when probabilities were given.
    pub roc: Option<RocCurve>,
}

impl Evaluation {
    pub fn get(&self, stratum: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.stratum == stratum && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn write_csv<W: Write>(&self, image: &str, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["image", "stratum", "metric", "value"])?;
        for r in &self.rows {
            wtr.write_record([image, &r.stratum, &r.metric, &r.value.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Per-branch predicted class: majority predicted label over the branch
/// pixels, ties counted as vein (the relabel rule for a zero score).
pub fn branch_predictions(branches: &[Branch], pred: &LabelMap) -> Vec<bool> {
    branches
        .iter()
        .map(|b| majority_artery(b, pred).unwrap_or(false))
        .collect()
}

/// Branch-level accuracy of `pred` on the centerline branches of its own
/// vessel mask.
pub fn branch_level_accuracy(pred: &LabelMap, truth: &LabelMap) -> Option<f64> {
    let branches = extract_branches(&thin(&pred.vessel_mask()));
    branch_accuracy(&branches, &branch_predictions(&branches, pred), truth)
}

/// Metrics of a predicted labeling against truth. With `probs`, the argmax
/// baseline and the AUCs are reported as well. Metrics whose class is absent
/// from the evaluated set are omitted rather than failing the run.
pub fn evaluate(
    pred: &LabelMap,
    truth: &LabelMap,
    fov: &FovMask,
    probs: Option<&ProbabilityTriplet>,
    centerline_only: bool,
) -> Result<Evaluation> {
    let mut rows = Vec::new();
    let mut push = |stratum: &str, metric: &str, value: f64| {
        rows.push(MetricRow {
            stratum: stratum.into(),
            metric: metric.into(),
            value,
        })
    };
    let tolerate = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateClass(_)) => Ok(None),
        Err(e) => Err(e),
    };

    push("all", "accuracy", three_class_accuracy(pred, truth, fov)?);
    if let Some(ss) = tolerate(
        av_sensitivity_specificity(pred, truth, fov, centerline_only, None).map(|s| s.sensitivity),
    )? {
        let spec = av_sensitivity_specificity(pred, truth, fov, centerline_only, None)?.specificity;
        push("all", "av_sensitivity", ss);
        push("all", "av_specificity", spec);
    }
    if let Some(a) = branch_level_accuracy(pred, truth) {
        push("all", "branch_accuracy", a);
    }

    let mut roc = None;
    if let Some(p) = probs {
        let argmax = argmax_labels(p, fov)?;
        push("all", "accuracy_argmax", three_class_accuracy(&argmax, truth, fov)?);
        if let Some(a) = branch_level_accuracy(&argmax, truth) {
            push("all", "branch_accuracy_argmax", a);
        }
        let truth_vessel: Vec<bool> = truth.labels().iter().map(|l| l.is_vessel()).collect();
        match roc_auc(&vessel_probability(p), &truth_vessel, Some(fov)) {
            Ok((curve, auc)) => {
                push("all", "vessel_auc", auc);
                roc = Some(curve);
            }
            Err(Error::DegenerateClass(_)) => {}
            Err(e) => return Err(e),
        }
        // artery-vs-vein ranking on truth vessel pixels
        let (mut s, mut pos) = (Vec::new(), Vec::new());
        let lik = p.artery_likelihood();
        for (i, l) in truth.labels().iter().enumerate() {
            if fov.inside_index(i) && l.is_vessel() {
                s.push(lik[i]);
                pos.push(*l == Label::Artery);
            }
        }
        if let Some(auc) = tolerate(roc_auc(&s, &pos, None).map(|r| r.1))? {
            push("all", "av_auc", auc);
        }
    }

    let diam = vessel_pixel_diameters(&truth.vessel_mask());
    for m in stratify_by_diameter(&diam, pred, truth, fov)? {
        let name = m.stratum.name();
        push(name, "fraction", m.fraction);
        push(name, "pixels", m.pixels as f64);
        if let Some(a) = m.accuracy {
            push(name, "accuracy", a);
        }
        if let Some(av) = m.av {
            push(name, "av_sensitivity", av.sensitivity);
            push(name, "av_specificity", av.specificity);
        }
    }
    Ok(Evaluation { rows, roc })
}

/// AVR on a predicted labeling: classes from the label majority of each
/// centerline branch of the predicted vessel mask.
pub fn avr_from_labels(
    pred: &LabelMap,
    fov: &FovMask,
    od: Option<&OpticDiscSpec>,
    cfg: &PipelineConfig,
) -> Result<AvrReport> {
    let vessels = pred.vessel_mask();
    let skeleton = thin(&vessels);
    let branches = extract_branches(&skeleton);
    let classes: Vec<Option<VesselClass>> = branches
        .iter()
        .map(|b| majority_artery(b, pred).map(|a| if a { VesselClass::Artery } else { VesselClass::Vein }))
        .collect();
    measure_avr(&vessels, &skeleton, &branches, &classes, od, fov, &cfg.knudtson)
}

/// Loaded, aligned inputs of one image.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub name: String,
    pub image: Option<Raster2D>,
    pub probs: ProbabilityTriplet,
    pub fov: FovMask,
    pub truth: Option<LabelMap>,
    pub od: Option<OpticDiscSpec>,
}

fn required<'a>(p: &'a Option<PathBuf>, what: &'static str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Stage {
            stage: "inputs",
            source: Box::new(Error::Config(format!("no {what} path given"))),
        })
}

/// File stem used as the `image` column of the reports.
pub fn report_name(cfg: &PipelineConfig) -> String {
    cfg.probs
        .as_deref()
        .or(cfg.image.as_deref())
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

impl PipelineInputs {
    /// Reads every input named in `cfg`; `probs` and `fov` are required.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let at = Error::at;
        let fov_path = required(&cfg.fov, "FOV mask")?;
        let fov = io::read_fov_png(fov_path).map_err(at("fov"))?;
        let probs_path = required(&cfg.probs, "probability map")?;
        let raster = io::read_avpm(probs_path).map_err(at("probs"))?;
        let probs = ProbabilityTriplet::from_raster(&raster, &fov).map_err(at("probs"))?;
        let image = match &cfg.image {
            Some(p) => {
                let img = io::read_rgb_png(p).map_err(at("image"))?;
                img.check_size(fov.width(), fov.height(), "image").map_err(at("image"))?;
                Some(img)
            }
            None => None,
        };
        let truth = match &cfg.truth {
            Some(p) => {
                let t = io::read_label_png(p).map_err(at("truth"))?;
                t.check_size(fov.width(), fov.height(), "truth").map_err(at("truth"))?;
                Some(t)
            }
            None => None,
        };
        let od = match &cfg.od {
            Some(p) => {
                let s = io::read_od_json(p).map_err(at("od"))?;
                Some(OpticDiscSpec::new((s.cx, s.cy), s.dd, &fov).map_err(at("od"))?)
            }
            None => None,
        };
        Ok(Self {
            name: report_name(cfg),
            image,
            probs,
            fov,
            truth,
            od,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub lsp: LspOutcome,
    pub evaluation: Option<Evaluation>,
    pub avr: Option<AvrReport>,
}

/// In-memory run.
pub fn run(inputs: &PipelineInputs, cfg: &PipelineConfig, par: Parallelism) -> Result<PipelineOutput> {
    let lsp = label_and_propagate(&inputs.probs, &inputs.fov, cfg, par)?;
    let evaluation = match &inputs.truth {
        Some(t) => Some(
            evaluate(&lsp.labels, t, &inputs.fov, Some(&inputs.probs), cfg.centerline_only)
                .map_err(Error::at("metrics"))?,
        ),
        None => None,
    };
    let avr = match &inputs.od {
        Some(od) => Some(avr_from_labels(&lsp.labels, &inputs.fov, Some(od), cfg).map_err(Error::at("avr"))?),
        None => None,
    };
    Ok(PipelineOutput {
        lsp,
        evaluation,
        avr,
    })
}

pub(crate) fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes the reports of one run into `dir`.
pub fn write_outputs(out: &PipelineOutput, name: &str, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_label_png(&out.lsp.labels, dir.join(LABELS_FILE))?;
    if let Some(ev) = &out.evaluation {
        ev.write_csv(name, create_file(&dir.join(METRICS_FILE))?)?;
        if let (true, Some(roc)) = (cfg.write_roc, &ev.roc) {
            roc.write_csv(create_file(&dir.join(ROC_FILE))?)?;
        }
    }
    if let Some(avr) = &out.avr {
        avr.write_csv(name, create_file(&dir.join(AVR_FILE))?)?;
    }
    if cfg.write_debug {
        io::write_json(&out.lsp.propagation.trace, dir.join(TRACE_FILE))?;
        io::write_binary_png(&out.lsp.skeleton.pixels, dir.join(SKELETON_FILE))?;
        let scored: Vec<ScoredBranch> = out
            .lsp
            .branches
            .iter()
            .zip(&out.lsp.propagation.scores)
            .map(|(b, &s)| ScoredBranch {
                branch: b.clone(),
                score: s,
            })
            .collect();
        build_graph_with(&scored, &cfg.graph, Parallelism::Sequential)
            .write_csv(create_file(&dir.join(GRAPH_FILE))?)?;
    }
    Ok(())
}

/// Loads the inputs named in `cfg`, runs, and writes into `cfg.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, par: Parallelism) -> Result<PipelineOutput> {
    let inputs = PipelineInputs::load(cfg)?;
    let out = run(&inputs, cfg, par)?;
    if let Some(dir) = &cfg.out_dir {
        write_outputs(&out, &inputs.name, cfg, dir).map_err(Error::at("write"))?;
    }
    Ok(out)
}
