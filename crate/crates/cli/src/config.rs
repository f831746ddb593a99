use std::path::Path;
use std::time::Duration;

use meshrag_core::metrics::MetricsParams;
use meshrag_core::orchestration::wire::DEFAULT_TIMEOUT;
use meshrag_core::orchestration::PipelineParams;
use meshrag_core::retrieval::IcpParams;
use meshrag_core::segmentation::SegmentationParams;
use serde::{Deserialize, Serialize};

use crate::args::{BackendArgs, IcpArgs, SegmentationArgs};
use crate::error::{CliError, CliResult};

pub const BACKEND_URL_ENV: &str = "MESHRAG_BACKEND_URL";

/// Where the generator (and optionally the segmenter) runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    Url(String),
    Command(Vec<String>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterChoice {
    /// The in-process geometric segmenter.
    #[default]
    Builtin,
    /// The configured backend's `segment_prompt` method.
    Backend,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub url: Option<String>,
    pub command: Option<Vec<String>>,
    pub timeout_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backend: BackendConfig,
    pub segmenter: SegmenterChoice,
    pub batch_size: usize,
    pub seed: u64,
    pub segmentation: SegmentationParams,
    pub icp: IcpParams,
    pub metrics: MetricsParams,
    pub residual_threshold: Option<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            backend: BackendConfig::default(),
            segmenter: SegmenterChoice::default(),
            batch_size: PipelineParams::default().batch_size,
            seed: 0,
            segmentation: SegmentationParams::default(),
            icp: IcpParams::default(),
            metrics: MetricsParams::default(),
            residual_threshold: None,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(meshrag_core::Error::from)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn apply_segmentation(&mut self, args: &SegmentationArgs) {
        let s = &mut self.segmentation;
        set(&mut s.n_prompts, args.n_prompts);
        set(&mut s.tau_nms, args.tau_nms);
        set(&mut s.tau_merge, args.tau_merge);
        set(&mut s.tau_recover, args.tau_recover);
        if args.remote_segmenter {
            self.segmenter = SegmenterChoice::Backend;
        }
    }

    pub fn apply_icp(&mut self, args: &IcpArgs) {
        let icp = &mut self.icp;
        set(&mut icp.max_iterations, args.icp_iterations);
        set(&mut icp.max_correspondence_distance, args.icp_max_distance);
        set(&mut icp.sample_count, args.icp_samples);
        set(&mut icp.refinement_rounds, args.refinement_rounds);
    }

    pub fn apply_backend(&mut self, args: &BackendArgs) {
        if let Some(url) = &args.backend {
            self.backend.url = Some(url.clone());
            self.backend.command = None;
        }
        if let Some(cmd) = &args.backend_cmd {
            self.backend.command = Some(cmd.0.clone());
            self.backend.url = None;
        }
        set(&mut self.batch_size, args.batch_size);
        if args.timeout.is_some() {
            self.backend.timeout_secs = args.timeout;
        }
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        set(&mut self.seed, seed);
        self.segmentation.seed = self.seed;
        self.metrics.seed = self.seed;
    }

    /// The single configured transport, falling back to the environment.
    pub fn transport(&self) -> CliResult<Transport> {
        match (&self.backend.url, &self.backend.command) {
            (Some(_), Some(_)) => Err(CliError::usage("configure either a backend url or a backend command, not both")),
            (Some(url), None) => Ok(Transport::Url(url.clone())),
            (None, Some(cmd)) if cmd.is_empty() => Err(CliError::usage("backend command is empty")),
            (None, Some(cmd)) => Ok(Transport::Command(cmd.clone())),
            (None, None) => match std::env::var(BACKEND_URL_ENV) {
                Ok(url) if !url.is_empty() => Ok(Transport::Url(url)),
                _ => Err(CliError::usage(format!(
                    "no backend configured; pass --backend, --backend-cmd, a config file or set {BACKEND_URL_ENV}"
                ))),
            },
        }
    }

    pub fn timeout(&self) -> CliResult<Duration> {
        match self.backend.timeout_secs {
            None => Ok(DEFAULT_TIMEOUT),
            Some(t) if t > 0.0 && t.is_finite() => Ok(Duration::from_secs_f64(t)),
            Some(t) => Err(CliError::usage(format!("timeout must be positive, got {t}"))),
        }
    }

    pub fn pipeline(&self) -> PipelineParams {
        PipelineParams {
            batch_size: self.batch_size,
            icp: self.icp,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let invalid = |e: meshrag_core::Error| CliError::usage(e.to_string());
        self.segmentation.validate().map_err(invalid)?;
        self.icp.validate().map_err(invalid)?;
        if self.batch_size == 0 {
            return Err(CliError::usage("batch_size must be at least 1"));
        }
        let m = &self.metrics;
        if m.sample_count == 0 || (m.tau_f1.is_nan() || m.tau_f1 <= 0.0) || m.edge_k < 2 {
            return Err(CliError::usage("metrics need sample_count >= 1, tau_f1 > 0 and edge_k >= 2"));
        }
        if let Some(eps) = self.residual_threshold {
            if eps.is_nan() || eps <= 0.0 {
                return Err(CliError::usage(format!("residual_threshold must be positive, got {eps}")));
            }
        }
        self.timeout().map(|_| ())
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
