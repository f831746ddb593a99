use meshrag_core::orchestration::wire::{HttpBackend, SubprocessBackend};
use meshrag_core::orchestration::GeneratorBackend;
use meshrag_core::segmentation::{GeometricSegmenter, SegmenterBackend};

use crate::config::{Config, SegmenterChoice, Transport};
use crate::error::{CliError, CliResult};

/// A connected generator backend, also usable as a segmenter.
pub enum Remote {
    Http(HttpBackend),
    Subprocess(SubprocessBackend),
}

impl Remote {
    pub fn connect(config: &Config) -> CliResult<Self> {
        let timeout = config.timeout()?;
        Ok(match config.transport()? {
            Transport::Url(url) => Remote::Http(HttpBackend::new(&url, timeout)),
            Transport::Command(cmd) => Remote::Subprocess(SubprocessBackend::spawn(&cmd[0], &cmd[1..], timeout)?),
        })
    }

    pub fn generator(&self) -> &dyn GeneratorBackend {
        match self {
            Remote::Http(b) => b,
            Remote::Subprocess(b) => b,
        }
    }

    pub fn segmenter(&self) -> &dyn SegmenterBackend {
        match self {
            Remote::Http(b) => b,
            Remote::Subprocess(b) => b,
        }
    }
}

/// The segmenter selected by the configuration.
pub enum Segmenter<'a> {
    Builtin(GeometricSegmenter),
    Remote(&'a dyn SegmenterBackend),
}

impl<'a> Segmenter<'a> {
    pub fn select(config: &Config, remote: Option<&'a Remote>) -> CliResult<Self> {
        Ok(match (config.segmenter, remote) {
            (SegmenterChoice::Backend, Some(r)) => Segmenter::Remote(r.segmenter()),
            (SegmenterChoice::Backend, None) => return Err(CliError::usage("remote segmenter requested without a backend")),
            (SegmenterChoice::Builtin, _) => Segmenter::Builtin(GeometricSegmenter::default()),
        })
    }

    pub fn get(&self) -> &dyn SegmenterBackend {
        match self {
            Segmenter::Builtin(s) => s,
            Segmenter::Remote(s) => *s,
        }
    }
}
