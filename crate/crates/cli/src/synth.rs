//! Synthetic dyadic corpus.
//!
//! Each speaker attribute is a sum of two slow sinusoids rescaled to
//! `[0.1, 0.9]`. Listener modes are global templates: a per-attribute gain
//! whose sign alternates with the mode index, plus an offset. Each behaviour
//! jitters the templates slightly, and listener `m` follows mode
//! `m % modes`, so the clips of one behaviour split into `modes` groups of
//! plausible but different reactions to the same speaker.

use std::f64::consts::PI;

use regnn_core::{Behavior, Matrix, ReactionClip, Rng};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub attributes: usize,
    pub frames: usize,
    pub behaviors: usize,
    /// Listener clips per behaviour.
    pub reactions: usize,
    pub modes: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Template jitter applied per behaviour.
const JITTER: f64 = 0.05;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, m: &str| {
            Err(CliError::Field {
                field: f.into(),
                message: m.into(),
            })
        };
        if self.attributes < 2 || self.frames < 2 {
            return field("attributes/frames", "clips need at least 2 attributes and 2 frames");
        }
        if self.behaviors == 0 {
            return field("behaviors", "must be positive");
        }
        if self.reactions < 2 {
            return field("reactions", "at least 2 listener clips per behaviour are required");
        }
        if self.modes == 0 {
            return field("modes", "must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return field("noise", "must be finite and >= 0");
        }
        Ok(())
    }

    /// Mode followed by listener clip `m`.
    pub fn mode_of(&self, m: usize) -> usize {
        m % self.modes
    }
}

struct Mode {
    gain: Vec<f64>,
    offset: Vec<f64>,
}

fn speaker_series(frames: usize, rng: &mut Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| (rng.uniform(0.5, 3.0), rng.uniform(0.0, 2.0 * PI), rng.uniform(0.5, 1.0)))
        .collect();
    let raw: Vec<f64> = (0..frames)
        .map(|t| {
            let x = t as f64 / frames as f64;
            waves.iter().map(|(f, p, a)| a * (2.0 * PI * f * x + p).sin()).sum()
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    raw.iter().map(|v| 0.1 + 0.8 * (v - lo) / span).collect()
}

/// Behaviours with ids `b000`, `b001`, ... Same spec gives the same corpus
/// bit for bit.
pub fn generate(spec: &SynthSpec) -> Result<Vec<Behavior>> {
    spec.validate()?;
    let (i, t) = (spec.attributes, spec.frames);
    let mut rng = Rng::seed_from(spec.seed);
    let templates: Vec<Mode> = (0..spec.modes)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            Mode {
                gain: (0..i).map(|_| sign * rng.uniform(0.3, 0.9)).collect(),
                offset: (0..i).map(|_| rng.uniform(-0.15, 0.15)).collect(),
            }
        })
        .collect();
    let width = spec.behaviors.saturating_sub(1).to_string().len().max(3);
    let mut out = Vec::with_capacity(spec.behaviors);
    for b in 0..spec.behaviors {
        let id = format!("b{b:0width$}");
        let speaker: Vec<Vec<f64>> = (0..i).map(|_| speaker_series(t, &mut rng)).collect();
        let modes: Vec<Mode> = templates
            .iter()
            .map(|m| Mode {
                gain: m.gain.iter().map(|g| g + rng.uniform(-JITTER, JITTER)).collect(),
                offset: m.offset.iter().map(|o| o + rng.uniform(-JITTER, JITTER)).collect(),
            })
            .collect();
        let listeners = (0..spec.reactions)
            .map(|m| {
                let mode = &modes[spec.mode_of(m)];
                let values = Matrix::from_fn(i, t, |a, f| {
                    let v = 0.5 + mode.gain[a] * (speaker[a][f] - 0.5) + mode.offset[a];
                    // Draw even when noise is 0 so the stream does not depend on it.
                    let n = rng.normal();
                    (v + spec.noise * n).clamp(0.0, 1.0)
                });
                ReactionClip::new(format!("{id}_listener_{m}"), values)
            })
            .collect::<regnn_core::Result<Vec<_>>>()?;
        let speaker = ReactionClip::new(format!("{id}_speaker"), Matrix::from_rows(&speaker)?)?;
        out.push(Behavior {
            id,
            speaker,
            listeners,
        });
    }
    Ok(out)
}
