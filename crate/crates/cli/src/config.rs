//! Run configuration: TOML with strict keys; every field defaults to the
//! Example-1 values.

use std::fs;
use std::path::Path;

use cawave::datasets::OdeDatasetSpec;
use cawave::flux::{BufferParams, ErParams, PlasmaParams};
use cawave::hybrid::{Diffusion, Geometry, InitialValues, SimConfig, StimulusSpec};
use cawave::markov::MarkovRates;
use cawave::surrogate::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Channels {
    pub plasma: PlasmaParams,
    pub er: ErParams,
    /// When false the plasma-membrane flux is switched off.
    pub plasma_flux: bool,
}

impl Default for Channels {
    fn default() -> Self {
        Self {
            plasma: PlasmaParams::default(),
            er: ErParams::default(),
            plasma_flux: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub dt: f64,
    pub t_end: f64,
}

impl Default for TimeSection {
    fn default() -> Self {
        let base = SimConfig::example1();
        Self {
            dt: base.dt,
            t_end: base.t_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Signals drawn from the amplitude × duration grid.
    pub num_signals: usize,
    pub grid: OdeDatasetSpec,
    /// Also write a CSV copy next to the binary file.
    pub csv: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let grid = OdeDatasetSpec::default();
        Self {
            num_signals: grid.num_signals(),
            grid,
            csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub observe_stride: usize,
    pub snapshot_stride: Option<usize>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            observe_stride: 1,
            snapshot_stride: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub diffusion: Diffusion,
    pub channels: Channels,
    pub buffer: BufferParams,
    pub markov: MarkovRates,
    pub initial: InitialValues,
    pub stimulus: StimulusSpec,
    pub time: TimeSection,
    pub network: TrainConfig,
    pub dataset: DatasetSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(CliError::io(p))?;
                Self::parse(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let base = SimConfig::example1();
        SimConfig {
            geometry: self.geometry,
            diffusion: self.diffusion,
            plasma: self.channels.plasma,
            er: self.channels.er,
            buffer: self.buffer,
            markov: self.markov,
            initial: self.initial,
            stimulus: self.stimulus,
            plasma_flux: self.channels.plasma_flux,
            dt: self.time.dt,
            t_end: self.time.t_end,
            observe_stride: self.output.observe_stride,
            snapshot_stride: self.output.snapshot_stride,
            ..base
        }
    }

    /// Canonical JSON form; hashed into the sidecar records.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
