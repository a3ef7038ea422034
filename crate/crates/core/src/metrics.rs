//! Temporal-consistency and fidelity metrics.
//!
//! * warping error between a frame pair, masked and normalized by the number
//!   of valid pixels; the per-pixel L1 norm sums over channels
//! * clip warping error, short-term (`t-1`) plus long-term (first frame)
//! * PSNR with peak 1.0 and data fidelity averaged over frames `2..=T`
//!
//! Every reduction runs sequentially in index order so results are
//! bit-stable across runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{backward_warp, FlowField, OcclusionMask, WarpCorrespondences};
use crate::video::{Frame, VideoClip};

/// PSNR reported for identical frames.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Masked mean over valid pixels of `||o_t(x) - W(o_s)(x)||_1`.
pub fn e_pair(o_t: &Frame, o_s: &Frame, flow_ts: &FlowField, mask: &OcclusionMask) -> Result<f64> {
    o_t.ensure_same_shape(o_s)?;
    if (mask.height(), mask.width()) != (o_t.height(), o_t.width()) {
        return Err(Error::mismatch(
            format!("{}x{} mask", o_t.height(), o_t.width()),
            format!("{}x{} mask", mask.height(), mask.width()),
        ));
    }
    let valid = mask.count();
    if valid == 0 {
        return Err(Error::EmptyMask);
    }
    let warped = backward_warp(o_s, flow_ts)?;
    let c = o_t.channels();
    let mut sum = 0.0f64;
    for (p, &m) in mask.data().iter().enumerate() {
        if m == 0 {
            continue;
        }
        let a = &o_t.data()[p * c..(p + 1) * c];
        let b = &warped.data()[p * c..(p + 1) * c];
        for (&x, &y) in a.iter().zip(b) {
            sum += (x as f64 - y as f64).abs();
        }
    }
    Ok(sum / valid as f64)
}

/// Per-frame pair errors for `t = 2..=T` (index 0 of each list is frame 2).
#[derive(Debug, Clone, PartialEq)]
pub struct WarpBreakdown {
    pub short: Vec<f64>,
    pub long: Vec<f64>,
}

impl WarpBreakdown {
    pub fn e_warp(&self) -> f64 {
        let n = self.short.len() as f64;
        self.short
            .iter()
            .zip(&self.long)
            .fold(0.0, |acc, (s, l)| acc + (l + s))
            / n
    }
}

pub fn warp_breakdown(clip: &VideoClip, corr: &WarpCorrespondences) -> Result<WarpBreakdown> {
    let expected = clip.len() - 1;
    if corr.short.len() != expected || corr.long.len() != expected {
        return Err(Error::mismatch(
            format!("{expected} short and long correspondences"),
            format!("{} short, {} long", corr.short.len(), corr.long.len()),
        ));
    }
    let first = clip.frame(0);
    let mut short = Vec::with_capacity(expected);
    let mut long = Vec::with_capacity(expected);
    for t in 1..clip.len() {
        let s = &corr.short[t - 1];
        let l = &corr.long[t - 1];
        short.push(e_pair(clip.frame(t), clip.frame(t - 1), &s.flow, &s.mask)?);
        long.push(e_pair(clip.frame(t), first, &l.flow, &l.mask)?);
    }
    Ok(WarpBreakdown { short, long })
}

/// `(1/(T-1)) * sum_{t>=2} [E_pair(O_t, O_1) + E_pair(O_t, O_{t-1})]`.
pub fn e_warp(clip: &VideoClip, corr: &WarpCorrespondences) -> Result<f64> {
    Ok(warp_breakdown(clip, corr)?.e_warp())
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio with peak 1.0, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Mean PSNR between processed and output frames, first frame excluded.
pub fn f_data(processed: &VideoClip, output: &VideoClip) -> Result<f64> {
    processed.ensure_compatible(output)?;
    let mut sum = 0.0;
    for t in 1..processed.len() {
        sum += psnr(processed.frame(t), output.frame(t))?;
    }
    Ok(sum / (processed.len() - 1) as f64)
}

pub fn mean_intensity_trace(clip: &VideoClip) -> Vec<f64> {
    clip.iter().map(Frame::mean).collect()
}

/// Population variance, used to compare intensity traces.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// One per-epoch training observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub epoch: usize,
    pub f_data: f64,
    pub e_warp: Option<f64>,
    pub wall_seconds: f64,
}

/// Per-epoch fidelity and warping error, epochs strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTrace {
    records: Vec<TraceRecord>,
}

impl MetricsTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::InvalidConfig(format!(
                    "trace epochs must increase: {} after {}",
                    record.epoch, last.epoch
                )));
            }
        }
        if record.e_warp.is_some_and(|e| e < 0.0 || !e.is_finite()) {
            return Err(Error::InvalidConfig("E_warp must be finite and non-negative".into()));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, epoch: usize) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.epoch == epoch)
    }

    /// `epoch,F_data,E_warp,wall_seconds`. `E_warp` is empty without flow;
    /// `wall_seconds` is empty unless `with_timing`.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut s = String::from("epoch,F_data,E_warp,wall_seconds\n");
        for r in &self.records {
            let e = r.e_warp.map(|v| v.to_string()).unwrap_or_default();
            let w = if with_timing {
                format!("{:.3}", r.wall_seconds)
            } else {
                String::new()
            };
            writeln!(s, "{},{},{},{}", r.epoch, r.f_data, e, w).expect("string write");
        }
        s
    }
}

/// Full evaluation of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub e_warp: f64,
    pub f_data: Option<f64>,
    pub breakdown: WarpBreakdown,
    /// PSNR of each frame against the reference, when one is given.
    pub psnr: Option<Vec<f64>>,
    pub mean_intensity: Vec<f64>,
}

pub fn evaluate_clip(
    clip: &VideoClip,
    corr: &WarpCorrespondences,
    reference: Option<&VideoClip>,
) -> Result<MetricsReport> {
    let breakdown = warp_breakdown(clip, corr)?;
    let (f, per_frame) = match reference {
        Some(r) => {
            let per_frame = r
                .iter()
                .zip(clip.iter())
                .map(|(a, b)| psnr(a, b))
                .collect::<Result<Vec<_>>>()?;
            (Some(f_data(r, clip)?), Some(per_frame))
        }
        None => (None, None),
    };
    Ok(MetricsReport {
        e_warp: breakdown.e_warp(),
        f_data: f,
        breakdown,
        psnr: per_frame,
        mean_intensity: mean_intensity_trace(clip),
    })
}

impl MetricsReport {
    /// `t,e_pair_short,e_pair_long,psnr,mean_intensity` with 0-based `t`,
    /// empty cells where a value is undefined, and an aggregate footer row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,e_pair_short,e_pair_long,psnr,mean_intensity\n");
        for (t, mean) in self.mean_intensity.iter().enumerate() {
            let (short, long) = if t == 0 {
                (String::new(), String::new())
            } else {
                (
                    self.breakdown.short[t - 1].to_string(),
                    self.breakdown.long[t - 1].to_string(),
                )
            };
            let p = self
                .psnr
                .as_ref()
                .map(|v| v[t].to_string())
                .unwrap_or_default();
            writeln!(s, "{t},{short},{long},{p},{mean}").expect("string write");
        }
        let f = self.f_data.map(|v| v.to_string()).unwrap_or_default();
        writeln!(s, "E_warp,{},F_data,{},", self.e_warp, f).expect("string write");
        s
    }

    /// The frozen single-line summary: `E_warp=<v>` plus ` F_data=<v>` when known.
    pub fn summary_line(&self) -> String {
        match self.f_data {
            Some(f) => format!("E_warp={} F_data={}", self.e_warp, f),
            None => format!("E_warp={}", self.e_warp),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{synth_translation_flows, Correspondence};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Frame {
        Frame::from_fn(h, w, c, |_, _, _| rng.random()).unwrap()
    }

    fn identity_corr(t: usize, h: usize, w: usize) -> WarpCorrespondences {
        let c = || Correspondence {
            flow: FlowField::zeros(h, w),
            mask: OcclusionMask::full(h, w),
        };
        WarpCorrespondences {
            short: (1..t).map(|_| c()).collect(),
            long: (1..t).map(|_| c()).collect(),
        }
    }

    #[test]
    fn e_pair_constant_frames() {
        let a = Frame::filled(4, 4, 3, 0.6).unwrap();
        let b = Frame::filled(4, 4, 3, 0.5).unwrap();
        let flow = FlowField::zeros(4, 4);
        let mask = OcclusionMask::full(4, 4);
        assert_eq!(e_pair(&a, &a, &flow, &mask).unwrap(), 0.0);
        assert!((e_pair(&a, &b, &flow, &mask).unwrap() - 0.3).abs() < 1e-6);
    }

    #[test]
    fn e_pair_rejects_empty_mask() {
        let a = Frame::filled(2, 2, 1, 0.6).unwrap();
        let mask = OcclusionMask::new(2, 2, vec![0; 4]).unwrap();
        assert!(matches!(
            e_pair(&a, &a, &FlowField::zeros(2, 2), &mask),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn static_clip_has_zero_warp_error() {
        let f = Frame::filled(5, 5, 3, 0.3).unwrap();
        let clip = VideoClip::new(vec![f; 4]).unwrap();
        assert_eq!(e_warp(&clip, &identity_corr(4, 5, 5)).unwrap(), 0.0);
        assert!(e_warp(&clip, &identity_corr(3, 5, 5)).is_err());
    }

    #[test]
    fn e_warp_composes_pair_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames: Vec<Frame> = (0..3).map(|_| random_frame(&mut rng, 4, 4, 3)).collect();
        let clip = VideoClip::new(frames.clone()).unwrap();
        let flows = synth_translation_flows(3, 1.0, 0.0, 4, 4).unwrap();
        let corr = flows.correspondences().unwrap();
        let pair = |t: usize, s: usize, c: &Correspondence| e_pair(&frames[t], &frames[s], &c.flow, &c.mask).unwrap();
        let a1 = pair(1, 0, &corr.long[0]);
        let b1 = pair(1, 0, &corr.short[0]);
        let a2 = pair(2, 0, &corr.long[1]);
        let b2 = pair(2, 1, &corr.short[1]);
        let expected = (a1 + b1 + a2 + b2) / 2.0;
        assert!((e_warp(&clip, &corr).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn translated_clip_is_consistent_under_its_flows() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = random_frame(&mut rng, 6, 12, 3);
        // Frame t at x shows base at x + t, i.e. the camera pans right one pixel per frame.
        let frames: Vec<Frame> = (0..4)
            .map(|t| Frame::from_fn(6, 8, 3, |y, x, c| base.get(y, x + t, c)).unwrap())
            .collect();
        let clip = VideoClip::new(frames).unwrap();
        let corr = synth_translation_flows(4, 1.0, 0.0, 6, 8)
            .unwrap()
            .correspondences()
            .unwrap();
        assert_eq!(e_warp(&clip, &corr).unwrap(), 0.0);
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Frame::filled(2, 2, 1, 0.5).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = Frame::filled(2, 2, 1, 0.6).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&a, &Frame::filled(2, 3, 1, 0.5).unwrap()).is_err());
    }

    #[test]
    fn f_data_skips_first_frame() {
        let p = Frame::filled(2, 2, 1, 0.5).unwrap();
        let o2 = Frame::filled(2, 2, 1, 0.6).unwrap(); // 20 dB
        let o3 = Frame::filled(2, 2, 1, 0.5 + 0.1f32.powf(1.5)).unwrap(); // 30 dB
        let processed = VideoClip::new(vec![p.clone(), p.clone(), p.clone()]).unwrap();
        let output = VideoClip::new(vec![Frame::filled(2, 2, 1, 0.0).unwrap(), o2, o3]).unwrap();
        assert!((f_data(&processed, &output).unwrap() - 25.0).abs() < 1e-4);
        assert_eq!(f_data(&processed, &processed).unwrap(), PSNR_CAP_DB);
        let short = VideoClip::new(vec![p.clone(), p]).unwrap();
        assert!(f_data(&processed, &short).is_err());
    }

    #[test]
    fn intensity_trace() {
        let clip = VideoClip::new(
            (1..=4)
                .map(|t| Frame::filled(3, 3, 3, t as f32 / 4.0).unwrap())
                .collect(),
        )
        .unwrap();
        assert_eq!(mean_intensity_trace(&clip), vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn trace_rejects_non_increasing_epochs() {
        let mut trace = MetricsTrace::new();
        let rec = |epoch| TraceRecord {
            epoch,
            f_data: 20.0,
            e_warp: Some(0.1),
            wall_seconds: 0.0,
        };
        trace.push(rec(1)).unwrap();
        trace.push(rec(2)).unwrap();
        assert!(trace.push(rec(2)).is_err());
        assert!(trace
            .push(TraceRecord {
                e_warp: Some(-1.0),
                ..rec(3)
            })
            .is_err());
        assert_eq!(trace.to_csv(false), "epoch,F_data,E_warp,wall_seconds\n1,20,0.1,\n2,20,0.1,\n");
    }

    #[test]
    fn report_csv_layout() {
        let f = Frame::filled(3, 3, 3, 0.5).unwrap();
        let clip = VideoClip::new(vec![f.clone(), f.clone(), f]).unwrap();
        let report = evaluate_clip(&clip, &identity_corr(3, 3, 3), Some(&clip)).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "0,,,99,0.5");
        assert_eq!(lines[2], "1,0,0,99,0.5");
        assert_eq!(lines[4], "E_warp,0,F_data,99,");
        assert_eq!(report.summary_line(), "E_warp=0 F_data=99");
    }
}
