//! Dataset evaluation: runs a prediction source over a dataset and reports
//! regression metrics per output, the image-space error distribution, and
//! LED classification AUC.

use std::collections::HashMap;
use std::io::{self, Write};
use std::path::Path;

use crate::codec::{decode_pose, DecodedPose};
use crate::dataset::{read_annotations, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{pearson, pixel_error_stats, r2, roc_auc, PixelErrorStats};
use crate::model::{image_to_input, ModelGraph};
use crate::quant::QuantizedModel;

/// Where predictions come from.
pub enum PredictionSource<'a> {
    Float(&'a ModelGraph),
    Quantized(&'a QuantizedModel),
    /// Annotation-shaped JSONL keyed by frame name; LED probability is the
    /// stored flag as 0/1.
    File(&'a Path),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AxisMetrics {
    pub r2: f64,
    pub pearson: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Samples where the source produced a pose; all metrics are over these.
    pub detected: usize,
    pub u: AxisMetrics,
    pub v: AxisMetrics,
    pub d: AxisMetrics,
    pub pixel_error: PixelErrorStats,
    pub led_auc: f64,
    /// LED AUC over targets at or below the observer's height, when world
    /// poses are recorded and the split is defined.
    pub auc_below: Option<f64>,
    /// Same for targets above the observer.
    pub auc_above: Option<f64>,
}

struct Collected {
    gt_u: Vec<f64>,
    gt_v: Vec<f64>,
    gt_d: Vec<f64>,
    pred_u: Vec<f64>,
    pred_v: Vec<f64>,
    pred_d: Vec<f64>,
    led_scores: Vec<f64>,
    led_labels: Vec<bool>,
    /// pose z sign per detected sample, when a pose was recorded.
    height: Vec<Option<bool>>, // true = above
}

/// Evaluates a prediction source against a dataset. All regression and
/// classification metrics are computed over the detected samples; an
/// undetected ground-truth target only increments the sample counters.
pub fn evaluate(dataset: &Dataset, source: PredictionSource) -> Result<EvalReport> {
    let predictions = collect(dataset, source)?;
    let n_detected = predictions.gt_u.len();

    let axis = |pred: &[f64], gt: &[f64]| -> Result<AxisMetrics> {
        Ok(AxisMetrics { r2: r2(pred, gt)?, pearson: pearson(pred, gt)? })
    };
    let u = axis(&predictions.pred_u, &predictions.gt_u)?;
    let v = axis(&predictions.pred_v, &predictions.gt_v)?;
    let d = axis(&predictions.pred_d, &predictions.gt_d)?;

    let distances: Vec<f64> = predictions
        .pred_u
        .iter()
        .zip(&predictions.pred_v)
        .zip(predictions.gt_u.iter().zip(&predictions.gt_v))
        .map(|((pu, pv), (gu, gv))| ((pu - gu).powi(2) + (pv - gv).powi(2)).sqrt())
        .collect();
    let pixel_error = pixel_error_stats(&distances)?;

    let led_auc = roc_auc(&predictions.led_scores, &predictions.led_labels)?;
    let group_auc = |want_above: bool| -> Option<f64> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (i, h) in predictions.height.iter().enumerate() {
            if *h == Some(want_above) {
                scores.push(predictions.led_scores[i]);
                labels.push(predictions.led_labels[i]);
            }
        }
        roc_auc(&scores, &labels).ok()
    };

    Ok(EvalReport {
        samples: dataset.len(),
        detected: n_detected,
        u,
        v,
        d,
        pixel_error,
        led_auc,
        auc_below: group_auc(false),
        auc_above: group_auc(true),
    })
}

fn collect(dataset: &Dataset, source: PredictionSource) -> Result<Collected> {
    let mut out = Collected {
        gt_u: Vec::new(),
        gt_v: Vec::new(),
        gt_d: Vec::new(),
        pred_u: Vec::new(),
        pred_v: Vec::new(),
        pred_d: Vec::new(),
        led_scores: Vec::new(),
        led_labels: Vec::new(),
        height: Vec::new(),
    };

    let file_predictions: Option<HashMap<String, (f64, f64, f64, f64)>> = match &source {
        PredictionSource::File(path) => {
            let mut map = HashMap::new();
            for record in read_annotations(path)? {
                map.insert(record.frame.clone(), (record.u, record.v, record.d, record.led as u8 as f64));
            }
            Some(map)
        }
        _ => None,
    };

    for record in dataset.records() {
        let decoded: Option<DecodedPose> = match &source {
            PredictionSource::File(_) => {
                let map = file_predictions.as_ref().expect("built above");
                let &(u, v, d, p_led) = map.get(&record.frame).ok_or_else(|| {
                    Error::Dataset(format!("no prediction for frame {}", record.frame))
                })?;
                Some(DecodedPose { u, v, d, p_led, mass: 1.0 })
            }
            PredictionSource::Float(model) => {
                let image = dataset.load_image(record)?;
                decode_pose(&model.forward_maps(&image_to_input(&image.pixels)?)?)
            }
            PredictionSource::Quantized(model) => {
                let image = dataset.load_image(record)?;
                decode_pose(&model.forward_maps(&image_to_input(&image.pixels)?)?)
            }
        };
        let Some(pose) = decoded else { continue };
        out.gt_u.push(record.u);
        out.gt_v.push(record.v);
        out.gt_d.push(record.d);
        out.pred_u.push(pose.u);
        out.pred_v.push(pose.v);
        out.pred_d.push(pose.d);
        out.led_scores.push(pose.p_led);
        out.led_labels.push(record.led);
        out.height.push(record.pose.map(|p| p[2] > 0.0));
    }
    Ok(out)
}

impl EvalReport {
    /// Two-column CSV (metric, value). Fractions, not percentages.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "samples,{}", self.samples)?;
        writeln!(w, "detected,{}", self.detected)?;
        for (name, m) in [("u", self.u), ("v", self.v), ("d", self.d)] {
            writeln!(w, "r2_{name},{:.6}", m.r2)?;
            writeln!(w, "pearson_{name},{:.6}", m.pearson)?;
        }
        writeln!(w, "pixel_error_mean,{:.6}", self.pixel_error.mean)?;
        writeln!(w, "pixel_error_median,{:.6}", self.pixel_error.median)?;
        writeln!(w, "led_auc,{:.6}", self.led_auc)?;
        if let Some(a) = self.auc_below {
            writeln!(w, "led_auc_below,{a:.6}")?;
        }
        if let Some(a) = self.auc_above {
            writeln!(w, "led_auc_above,{a:.6}")?;
        }
        Ok(())
    }
}
