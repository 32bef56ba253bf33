//! Motor unit spike train decoding at desk scale: synthetic EMG from a
//! ground-truth motor neuron pool, blind source separation into spike trains,
//! PCA + VARIMAX projection to joint-angle trajectories, and the robustness
//! studies (reduced channel sets, time-multiplexed acquisition, adaptive vs.
//! fixed spike thresholding).

pub mod bss;
pub mod config;
pub mod decode;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod sim;

pub use config::{
    BssConfig, Contrast, DecodeConfig, DetectorKind, EvalConfig, RunConfig, SimConfig,
};
pub use decode::{BinnedActivity, ProjectionModel};
pub use error::{Error, Result};
pub use sim::{
    EmgRecording, ExcitationTrajectory, KinematicsTrajectory, MotorNeuron, MotorNeuronPool,
    MuapBank, Scene, SpikeTrainSet,
};
