//! Frame-level and text-level evaluation of labeled sessions.

use std::collections::BTreeMap;
use std::io::Write;

use keystroke_core::labels::{argmax, one_hot};
use keystroke_core::metrics::{nld, per_class_metrics, ConfusionMatrix, MetricsReport};
use keystroke_core::nn::{ModelConfig, ModelParams};
use keystroke_core::stream::{events_to_text, extract_events_from_probs, predict_sequence};
use keystroke_core::{KeyClass, NUM_CLASSES};

use crate::corpus::LabeledSession;
use crate::error::{Error, Result};

/// Produces per-frame class probabilities for a session.
pub trait FramePredictor {
    fn predict(&self, session: &LabeledSession) -> Result<Vec<[f64; NUM_CLASSES]>>;
}

pub struct ModelPredictor<'a> {
    pub params: &'a ModelParams,
    pub config: ModelConfig,
}

impl FramePredictor for ModelPredictor<'_> {
    fn predict(&self, session: &LabeledSession) -> Result<Vec<[f64; NUM_CLASSES]>> {
        Ok(predict_sequence(self.params, &self.config, &session.frames)?)
    }
}

/// Answers with the ground truth itself.
pub struct OraclePredictor;

impl FramePredictor for OraclePredictor {
    fn predict(&self, session: &LabeledSession) -> Result<Vec<[f64; NUM_CLASSES]>> {
        Ok(session.labels.iter().map(|&k| one_hot(k).0).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionScore {
    pub id: String,
    pub wpm: f64,
    pub reference: String,
    pub identified: String,
    pub nld: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub sessions: Vec<SessionScore>,
}

impl Evaluation {
    pub fn mean_nld(&self) -> f64 {
        self.sessions.iter().map(|s| s.nld).sum::<f64>() / self.sessions.len() as f64
    }

    /// Mean NLD per typing speed, in ascending wpm order.
    pub fn nld_by_wpm(&self) -> Vec<(f64, f64)> {
        let mut groups: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
        for s in &self.sessions {
            let g = groups.entry(s.wpm.to_bits()).or_insert((s.wpm, 0.0, 0));
            g.1 += s.nld;
            g.2 += 1;
        }
        let mut out: Vec<(f64, f64)> = groups.into_values().map(|(w, sum, n)| (w, sum / n as f64)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }
}

/// Scores every session: argmax frames against the aligned labels, and the
/// debounced event text against the pressed keys.
pub fn evaluate_sessions(
    sessions: &[LabeledSession],
    predictor: &dyn FramePredictor,
    debounce: usize,
) -> Result<Evaluation> {
    let mut confusion = ConfusionMatrix::new();
    let mut scores = Vec::with_capacity(sessions.len());
    for s in sessions {
        let probs = predictor.predict(s)?;
        let predicted: Vec<KeyClass> = probs
            .iter()
            .map(|p| KeyClass::new(argmax(p)).expect("class index"))
            .collect();
        confusion.record_all(&s.labels, &predicted)?;
        let identified = events_to_text(&extract_events_from_probs(&probs, debounce));
        let score = nld(&s.reference, &identified)?;
        scores.push(SessionScore {
            id: s.id.clone(),
            wpm: s.wpm,
            reference: s.reference.clone(),
            identified,
            nld: score,
        });
    }
    Ok(Evaluation {
        metrics: per_class_metrics(&confusion)?,
        confusion,
        sessions: scores,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(out: W, report: &MetricsReport, confusion: &ConfusionMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "recall", "precision", "f1", "support"])?;
    for k in KeyClass::all() {
        let m = &report.per_class[k.code()];
        w.write_record([k.to_string(), opt(m.recall), opt(m.precision), opt(m.f1), m.support.to_string()])?;
    }
    w.write_record([
        "macro".to_string(),
        report.macro_recall.to_string(),
        report.macro_precision.to_string(),
        report.macro_f1.to_string(),
        confusion.total().to_string(),
    ])?;
    w.flush().map_err(|e| Error::io("<metrics csv>", e))?;
    Ok(())
}

/// Rows are true classes, columns predicted classes.
pub fn write_confusion_csv<W: Write>(out: W, confusion: &ConfusionMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["truth".to_string()];
    header.extend(KeyClass::all().map(|k| k.to_string()));
    w.write_record(&header)?;
    for k in KeyClass::all() {
        let mut row = vec![k.to_string()];
        row.extend(confusion.counts[k.code()].iter().map(u64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<confusion csv>", e))?;
    Ok(())
}

/// One row per session, then a `mean` row per typing speed.
pub fn write_nld_csv<W: Write>(out: W, eval: &Evaluation) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["session", "wpm", "nld"])?;
    for s in &eval.sessions {
        w.write_record([s.id.clone(), s.wpm.to_string(), s.nld.to_string()])?;
    }
    for (wpm, mean) in eval.nld_by_wpm() {
        w.write_record(["mean".to_string(), wpm.to_string(), mean.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<nld csv>", e))?;
    Ok(())
}

pub fn write_transcripts_csv<W: Write>(out: W, eval: &Evaluation) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["session", "reference", "identified"])?;
    for s in &eval.sessions {
        w.write_record([&s.id, &s.reference, &s.identified])?;
    }
    w.flush().map_err(|e| Error::io("<transcript csv>", e))?;
    Ok(())
}
