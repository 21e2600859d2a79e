use crate::dsp::SAMPLE_RATE_HZ;
use crate::error::{Error, Result};

/// Mono audio at a fixed sample rate, normalized to roughly [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean power over the whole buffer.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    /// Rejects buffers the analysis pipeline cannot consume.
    pub fn check_pipeline_input(&self) -> Result<()> {
        if self.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::Config(format!(
                "sample rate {} Hz is not supported, expected {SAMPLE_RATE_HZ} Hz",
                self.sample_rate_hz
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::EmptyInput("audio buffer has no samples".into()));
        }
        Ok(())
    }
}
