//! Blind video temporal consistency with a deep video prior.
//!
//! A convolutional generator is trained from scratch on a single video to map
//! each input frame to its independently processed counterpart. Stopped early,
//! the generator reproduces the processed look while staying consistent over
//! time. Two-head reweighted training handles targets that jump between
//! several distinct solutions.
//!
//! * [`video`]: frames, clips and image I/O
//! * [`nn`]: the encoder-decoder generator with manual backpropagation
//! * [`train`]: the single-video training loop
//! * [`irt`]: confidence maps and reweighted loss
//! * [`flow`]: flow fields, warping, occlusion and `.flo` files
//! * [`metrics`]: warping error, PSNR and fidelity traces
//! * [`synth`] and [`toy`]: synthetic clips and the toy experiment

pub mod error;
pub mod flow;
pub mod irt;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod toy;
pub mod train;
pub mod video;

pub use error::{Error, Result};
pub use flow::{ClipFlows, Correspondence, FlowField, FlowPair, OcclusionMask, WarpCorrespondences};
pub use irt::{compute_confidence, irt_loss, ConfidenceMap};
pub use metrics::{e_pair, e_warp, f_data, psnr, MetricsReport, MetricsTrace, TraceRecord};
pub use nn::{GeneratorConfig, GeneratorParams};
pub use synth::{ColorTransform, SynthKind, SynthSpec};
pub use toy::{ToyConfig, ToyMode, ToyTrace};
pub use train::{infer_clip, select_stop_epoch, train_dvp, DataTerm, Inference, StopPolicy, TrainConfig, TrainResult};
pub use video::{load_clip, save_clip, Frame, FrameShape, VideoClip};
