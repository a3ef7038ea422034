use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use dvp_core::flow::synth_translation_flows;
use dvp_core::irt::compute_confidence;
use dvp_core::metrics::evaluate_clip;
use dvp_core::nn::save_checkpoint;
use dvp_core::synth::{alternating_pattern, default_modes, make_moving_clip, mode_gap, ColorTransform};
use dvp_core::toy::{toy_experiment, ToyConfig, ToyMode};
use dvp_core::train::{train_dvp_observed, FrameOrder};
use dvp_core::video::{frame_file_name, save_frame};
use dvp_core::{load_clip, save_clip, ClipFlows, DataTerm, GeneratorConfig, SynthKind, SynthSpec, TrainConfig};

use crate::args::{DataTermArg, FrameOrderArg, KindArg, MetricsArgs, RunArgs, SynthArgs, ToyArgs};
use crate::manifest::{read_run_manifest, tool_version, write_json, RunManifest, RunPaths, SynthManifest, MANIFEST_FILE};

pub const TRACE_FILE: &str = "trace.csv";
pub const LABELS_FILE: &str = "labels.csv";

/// A flag combination that parsed but cannot be honored.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// 2 for usage and configuration errors, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let usage = e.chain().any(|c| {
        c.is::<UsageError>() || matches!(c.downcast_ref::<dvp_core::Error>(), Some(dvp_core::Error::InvalidConfig(_)))
    });
    if usage {
        2
    } else {
        1
    }
}

fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch_{epoch:04}.dvp")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn run(a: RunArgs) -> Result<()> {
    let (tool, version) = tool_version();
    let mut manifest = match &a.manifest {
        Some(path) => {
            let mut m = read_run_manifest(path)?;
            if let Some(out) = a.output {
                m.paths.output = out;
            }
            m
        }
        None => {
            if a.save_confidence && !a.irt {
                return Err(UsageError("--save-confidence needs --irt".into()).into());
            }
            let training = TrainConfig {
                learning_rate: a.lr,
                epochs: a.epochs,
                irt_enabled: a.irt,
                delta: a.delta,
                anchor_iterations: a.anchor,
                anchor_frame: a.anchor_frame,
                data_term: match a.data_term {
                    DataTermArg::L1 => DataTerm::L1,
                    DataTermArg::L2 => DataTerm::L2,
                },
                seed: a.seed,
                frame_order: match a.frame_order {
                    FrameOrderArg::Sequential => FrameOrder::Sequential,
                    FrameOrderArg::Shuffled => FrameOrder::Shuffled,
                },
                snapshot_every: a.snapshot_every,
                ..TrainConfig::default()
            };
            let generator = GeneratorConfig {
                in_channels: 0,
                out_heads: if a.irt { 2 } else { 1 },
                base_width: a.base_width,
                depth: a.depth,
                seed: a.seed,
            };
            RunManifest {
                tool,
                version,
                paths: RunPaths {
                    input: a.input.expect("required by the parser"),
                    processed: a.processed.expect("required by the parser"),
                    output: a.output.expect("required by the parser"),
                    flow_dir: a.flow_dir,
                },
                generator,
                training,
                save_confidence: a.save_confidence,
                trace_timing: a.timing,
                wall_seconds: 0.0,
                epoch_seconds: Vec::new(),
            }
        }
    };

    let started = Instant::now();
    let input = load_clip(&manifest.paths.input)?;
    let processed = load_clip(&manifest.paths.processed)?;
    if manifest.generator.in_channels == 0 {
        manifest.generator.in_channels = input.shape().channels;
    }
    let flows = match &manifest.paths.flow_dir {
        Some(dir) => Some(ClipFlows::load_dir(dir, input.len())?.correspondences()?),
        None => None,
    };
    let out = manifest.paths.output.clone();
    create_dir(&out)?;

    let mut epoch_seconds = Vec::new();
    let result = train_dvp_observed(
        &input,
        &processed,
        &manifest.generator,
        &manifest.training,
        flows.as_ref(),
        |state| {
            epoch_seconds.push(state.record.wall_seconds);
            if state.is_snapshot {
                save_checkpoint(state.params, out.join(checkpoint_name(state.epoch)))?;
            }
            Ok(())
        },
    )?;

    let outputs = &result.final_snapshot().outputs;
    save_clip(&outputs.main, &out)?;
    if let Some(minor) = &outputs.minor {
        save_clip(minor, out.join("minor"))?;
        if manifest.save_confidence {
            let dir = out.join("confidence");
            create_dir(&dir)?;
            for (t, ((m, n), p)) in outputs.main.iter().zip(minor).zip(&processed).enumerate() {
                let conf = compute_confidence(m, n, p, manifest.training.delta)?;
                save_frame(&conf.to_frame(), &dir.join(frame_file_name(t)))?;
            }
        }
    }
    let trace_path = out.join(TRACE_FILE);
    fs::write(&trace_path, result.trace.to_csv(manifest.trace_timing))
        .with_context(|| format!("writing {}", trace_path.display()))?;

    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.epoch_seconds = epoch_seconds;
    write_json(&manifest, &out.join(MANIFEST_FILE))?;

    let last = result.trace.records().last().expect("at least one epoch");
    match last.e_warp {
        Some(e) => println!("epoch={} F_data={} E_warp={}", last.epoch, last.f_data, e),
        None => println!("epoch={} F_data={}", last.epoch, last.f_data),
    }
    Ok(())
}

fn read_modes(path: &Path) -> Result<Vec<ColorTransform>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("invalid modes file {}: {e}", path.display())).into())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let started = Instant::now();
    let (height, width) = a.size;
    let (dx, dy) = a.motion;
    let (clean, flows) = make_moving_clip(a.frames, height, width, dx, dy, a.seed)?;
    let spec_seed = a.seed.wrapping_add(1);
    let mut spec = match a.kind {
        KindArg::Unimodal => SynthSpec::unimodal(a.sigma, spec_seed),
        KindArg::Multimodal => {
            let modes = match &a.modes {
                Some(path) => read_modes(path)?,
                None => default_modes(),
            };
            let pattern = a.pattern.clone().unwrap_or_else(|| alternating_pattern(a.frames));
            SynthSpec::multimodal(modes, pattern, spec_seed)
        }
    };
    spec.jitter = a.jitter;
    spec.validate(a.frames)?;
    let (processed, labels) = spec.apply(&clean)?;

    create_dir(&a.out)?;
    save_clip(&clean, a.out.join("clean"))?;
    save_clip(&processed, a.out.join("processed"))?;
    flows.save_dir(a.out.join("flows"))?;
    let mut csv = String::from("t,mode\n");
    for (t, m) in labels.iter().enumerate() {
        csv.push_str(&format!("{t},{m}\n"));
    }
    let labels_path = a.out.join(LABELS_FILE);
    fs::write(&labels_path, csv).with_context(|| format!("writing {}", labels_path.display()))?;

    let gap = (spec.kind == SynthKind::Multimodal && spec.modes.len() >= 2)
        .then(|| mode_gap(&spec.modes[0], &spec.modes[1], &clean));
    let (tool, version) = tool_version();
    let manifest = SynthManifest {
        tool,
        version,
        frames: a.frames,
        height,
        width,
        motion: a.motion,
        spec,
        mode_gap: gap,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&manifest, &a.out.join(MANIFEST_FILE))?;
    if let Some(g) = gap {
        println!("mode_gap={g}");
    }
    Ok(())
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let clip = load_clip(&a.clip)?;
    let flows = match (&a.flow_dir, a.synthetic_flow) {
        (Some(dir), _) => ClipFlows::load_dir(dir, clip.len())?,
        (None, Some((dx, dy))) => {
            let s = clip.shape();
            synth_translation_flows(clip.len(), dx, dy, s.height, s.width)?
        }
        (None, None) => return Err(UsageError("--flow-dir or --synthetic-flow is required".into()).into()),
    };
    let reference = a.reference.as_ref().map(load_clip).transpose()?;
    let report = evaluate_clip(&clip, &flows.correspondences()?, reference.as_ref())?;
    report.write_csv(&a.out)?;
    println!("{}", report.summary_line());
    Ok(())
}

pub fn toy(a: ToyArgs) -> Result<()> {
    let cfg = ToyConfig {
        mode: match a.mode {
            KindArg::Unimodal => ToyMode::Unimodal,
            KindArg::Multimodal => ToyMode::Multimodal,
        },
        iterations: a.iterations,
        record_every: a.record_every,
        irt: a.irt,
        size: a.size,
        sigma: a.sigma,
        input_noise: a.input_noise,
        learning_rate: a.lr,
        base_width: a.base_width,
        depth: a.depth,
        seed: a.seed,
        ..ToyConfig::default()
    };
    let trace = toy_experiment(&cfg)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    trace.write_csv(&a.out)?;
    let last = trace.records.last().expect("iteration 0 is always recorded");
    println!(
        "iterations={} mean_pairwise_output={} processed_pairwise={}",
        last.iteration,
        last.mean_pairwise_output(),
        trace.processed_mean_pairwise()
    );
    Ok(())
}
