//! Run configuration: one JSON document describing the link, the phase
//! noise, the operating points and the outputs.
//!
//! Every field has a default, so `{}` is a valid configuration. Relative
//! paths are resolved against the directory holding the configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceSet, DEFAULT_TRAINING_FRAMES, MIN_TRAINING_FRAMES};
use crate::engine::{EstimatorChoice, LinkSetup, PilotMode, StopRule, DEFAULT_MAX_FRAMES, DEFAULT_MIN_ERRORS};
use crate::pn_model::{PhaseNoiseModel, PsdSpec};
use crate::ptrs::PatternSpec;
use crate::waveform::FrameConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseNoiseConfig {
    /// PSD file for the transmitter oscillator; none disables PSD noise.
    pub psd: Option<PathBuf>,
    /// PSD file for the receiver; defaults to the transmitter's.
    pub psd_rx: Option<PathBuf>,
    /// Rescale both masks to this carrier.
    pub carrier_hz: Option<f64>,
    /// Extra offset in dB on both masks.
    pub offset_db: f64,
    /// Wiener step variance, used instead of a PSD when set.
    pub wiener_step_variance: Option<f64>,
}

impl Default for PhaseNoiseConfig {
    fn default() -> Self {
        Self {
            psd: None,
            psd_rx: None,
            carrier_hz: None,
            offset_db: 0.0,
            wiener_step_variance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    /// Cache file to load; trained in-process when absent.
    pub cache: Option<PathBuf>,
    pub training_frames: usize,
    /// Training seed; derived from the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            cache: None,
            training_frames: DEFAULT_TRAINING_FRAMES,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub frame: FrameConfig,
    pub phase_noise: PhaseNoiseConfig,
    pub patterns: Vec<PatternSpec>,
    pub estimators: Vec<EstimatorChoice>,
    pub snr_db: Vec<f64>,
    pub seed: u64,
    pub pilot_mode: PilotMode,
    pub min_errors: u64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub covariance: CovarianceConfig,
    /// Random phase realizations checked by `oracle-check`.
    pub oracle_trials: usize,
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            frame: FrameConfig::default(),
            phase_noise: PhaseNoiseConfig::default(),
            patterns: vec![PatternSpec::Distributed { l: 8 }],
            estimators: vec![
                EstimatorChoice::Cpee,
                EstimatorChoice::Li,
                EstimatorChoice::Dct { n_d: 5, phi_av: Default::default() },
                EstimatorChoice::If,
            ],
            snr_db: vec![10.0, 15.0, 20.0, 25.0, 30.0],
            seed: 1,
            pilot_mode: PilotMode::Fixed,
            min_errors: DEFAULT_MIN_ERRORS,
            min_frames: 1,
            max_frames: DEFAULT_MAX_FRAMES,
            covariance: CovarianceConfig::default(),
            oracle_trials: 10,
            out_dir: PathBuf::from("out"),
            workers: None,
        }
    }
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Read a configuration file and resolve its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        cfg.rebase(path.parent());
        Ok(cfg)
    }

    fn rebase(&mut self, base: Option<&Path>) {
        let pn = &mut self.phase_noise;
        pn.psd = pn.psd.as_deref().map(|p| resolve(base, p));
        pn.psd_rx = pn.psd_rx.as_deref().map(|p| resolve(base, p));
        self.covariance.cache = self.covariance.cache.as_deref().map(|p| resolve(base, p));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Check every cross-field constraint. Runs before any simulation.
    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        if self.patterns.is_empty() {
            return Err(Error::Config("at least one pilot pattern is required".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("at least one estimator is required".into()));
        }
        if self.snr_db.is_empty() {
            return Err(Error::Config("the SNR grid is empty".into()));
        }
        if let Some(s) = self.snr_db.iter().find(|s| s.is_nan() || **s == f64::NEG_INFINITY) {
            return Err(Error::Config(format!("SNR grid value {s} is not usable")));
        }
        for p in &self.patterns {
            let built = p.build(self.frame.n_active)?;
            for e in &self.estimators {
                e.check(&built)?;
            }
        }
        if self.max_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::Config(format!(
                "frame limits need 1 <= min_frames <= max_frames, got {} and {}",
                self.min_frames, self.max_frames
            )));
        }
        if self.covariance.training_frames < MIN_TRAINING_FRAMES {
            return Err(Error::Config(format!(
                "covariance training needs at least {MIN_TRAINING_FRAMES} frames"
            )));
        }
        if let Some(v) = self.phase_noise.wiener_step_variance {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("Wiener step variance must be >= 0, got {v}")));
            }
            if self.phase_noise.psd.is_some() {
                return Err(Error::Config("choose either a PSD file or a Wiener step variance".into()));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }

    /// Load PSD files and build the phase-noise source.
    pub fn phase_noise_model(&self) -> Result<PhaseNoiseModel> {
        let pn = &self.phase_noise;
        if let Some(v) = pn.wiener_step_variance {
            return Ok(PhaseNoiseModel::Wiener { step_variance: v });
        }
        let Some(tx_path) = &pn.psd else {
            return Ok(PhaseNoiseModel::Off);
        };
        let prepare = |path: &Path| -> Result<PsdSpec> {
            let mut spec = PsdSpec::load(path)?;
            if spec.model_id.is_none() {
                spec.model_id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
            }
            if let Some(fc) = pn.carrier_hz {
                spec = spec.carrier_scale(fc)?;
            }
            if pn.offset_db != 0.0 {
                spec = spec.offset_db(pn.offset_db);
            }
            Ok(spec)
        };
        let tx = prepare(tx_path)?;
        let rx = match &pn.psd_rx {
            Some(p) => prepare(p)?,
            None => tx.clone(),
        };
        Ok(PhaseNoiseModel::Psd { tx, rx })
    }

    pub fn stop_rule(&self) -> StopRule {
        StopRule {
            min_errors: self.min_errors,
            min_frames: self.min_frames,
            max_frames: self.max_frames,
        }
    }

    pub fn needs_covariance(&self) -> bool {
        self.estimators.iter().any(|e| e.needs_covariance())
    }

    pub fn training_seed(&self) -> u64 {
        self.covariance
            .seed
            .unwrap_or_else(|| crate::rng::derive_seed(self.seed, &[0x7261_696e]))
    }

    /// Link setup without covariances.
    pub fn link_setup(&self) -> Result<LinkSetup> {
        let mut s = LinkSetup::new(self.frame.clone(), self.phase_noise_model()?);
        s.pilot_mode = self.pilot_mode;
        s.stop = self.stop_rule();
        Ok(s)
    }

    /// Covariance cache file name for this configuration.
    pub fn cache_file_name(&self, model_id: &str) -> String {
        let safe: String = model_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        format!(
            "covariance_{safe}_{}_{}.csv",
            crate::covariance::cfg_hash(&self.frame),
            self.training_seed()
        )
    }

    /// Load the configured cache and check it matches the frame.
    pub fn load_cached_covariance(&self) -> Result<Option<CovarianceSet>> {
        let Some(path) = &self.covariance.cache else {
            return Ok(None);
        };
        let set = CovarianceSet::load(path)?;
        if set.n_active() != self.frame.n_active {
            return Err(Error::Config(format!(
                "covariance cache {} is for N_a = {}, frame has N_a = {}",
                path.display(),
                set.n_active(),
                self.frame.n_active
            )));
        }
        Ok(Some(set))
    }
}
