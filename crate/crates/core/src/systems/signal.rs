use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Distance in cycles (or pulse widths) within which a time is treated as lying on an edge.
const EDGE_SNAP: f64 = 1e-9;

/// Which value to take at a discontinuity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `u(t⁻)`
    Left,
    /// `u(t)`
    Point,
    /// `u(t⁺)`
    Right,
}

/// Scalar input signal for one input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Signal {
    Zero,
    /// Rectangular pulse of height `1/width` on `[0, width)`.
    Impulse { width: f64 },
    /// `amplitude * sq(2π freq t + phase)` with `sq(θ) = sign(sin θ)` and `sign(0) = +1`.
    Square {
        freq: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amplitude * sin(2π freq t + phase)`
    Sine {
        freq: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    Sum { terms: Vec<Signal> },
    Scaled { signal: Box<Signal>, factor: f64 },
    /// Piecewise-constant uniform noise on `[lo, hi)`, redrawn every `hold` seconds.
    UniformRandom { lo: f64, hi: f64, hold: f64, seed: u64 },
}

fn one() -> f64 {
    1.0
}

/// Fractional part of `cycles` with values within [`EDGE_SNAP`] of an integer or a half snapped onto it.
fn snapped_fraction(cycles: f64) -> f64 {
    let frac = cycles - cycles.floor();
    if !(EDGE_SNAP..=1.0 - EDGE_SNAP).contains(&frac) {
        0.0
    } else if (frac - 0.5).abs() < EDGE_SNAP {
        0.5
    } else {
        frac
    }
}

/// `sign(sin(2π cycles))` with one-sided limits at the edges.
fn square_unit(cycles: f64, side: Side) -> f64 {
    let frac = snapped_fraction(cycles);
    if frac == 0.0 {
        match side {
            Side::Left => -1.0,
            Side::Point | Side::Right => 1.0,
        }
    } else if frac == 0.5 {
        match side {
            Side::Left | Side::Point => 1.0,
            Side::Right => -1.0,
        }
    } else if frac < 0.5 {
        1.0
    } else {
        -1.0
    }
}

impl Signal {
    /// Standard sum of the given signals.
    pub fn sum(terms: Vec<Signal>) -> Self {
        Signal::Sum { terms }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Signal::Scaled {
            signal: Box::new(self),
            factor,
        }
    }

    pub fn square(freq: f64) -> Self {
        Signal::Square {
            freq,
            amplitude: 1.0,
            phase: 0.0,
        }
    }

    pub fn sine(freq: f64) -> Self {
        Signal::Sine {
            freq,
            amplitude: 1.0,
            phase: 0.0,
        }
    }

    /// Value at `t`.
    pub fn value(&self, t: f64) -> f64 {
        self.eval(t, Side::Point)
    }

    pub fn eval(&self, t: f64, side: Side) -> f64 {
        match self {
            Signal::Zero => 0.0,
            Signal::Impulse { width } => {
                let w = *width;
                let on = match side {
                    Side::Point | Side::Right => t >= -EDGE_SNAP * w && t < w * (1.0 - EDGE_SNAP),
                    Side::Left => t > EDGE_SNAP * w && t <= w * (1.0 + EDGE_SNAP),
                };
                if on {
                    1.0 / w
                } else {
                    0.0
                }
            }
            Signal::Square {
                freq,
                amplitude,
                phase,
            } => amplitude * square_unit(freq * t + phase / TAU, side),
            Signal::Sine {
                freq,
                amplitude,
                phase,
            } => amplitude * (TAU * freq * t + phase).sin(),
            Signal::Sum { terms } => terms.iter().map(|s| s.eval(t, side)).sum(),
            Signal::Scaled { signal, factor } => factor * signal.eval(t, side),
            Signal::UniformRandom { lo, hi, hold, seed } => {
                let pos = t / hold;
                let nearest = pos.round();
                let on_edge = (pos - nearest).abs() < EDGE_SNAP;
                let index = if on_edge {
                    match side {
                        Side::Left => nearest - 1.0,
                        Side::Point | Side::Right => nearest,
                    }
                } else {
                    pos.floor()
                };
                let index = index.max(0.0) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                // each draw consumes two 32-bit words, so a hold interval maps to a fixed stream offset
                rng.set_word_pos(2 * index as u128);
                lo + (hi - lo) * rng.random::<f64>()
            }
        }
    }

    /// Checks parameters for finiteness and positivity where required.
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        let positive = |what: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(Error::OutOfRange {
                    what,
                    value,
                    range: "finite and > 0".into(),
                })
            }
        };
        let finite = |what: &'static str, value: f64| {
            if value.is_finite() {
                Ok(())
            } else {
                Err(Error::OutOfRange {
                    what,
                    value,
                    range: "finite".into(),
                })
            }
        };
        match self {
            Signal::Zero => Ok(()),
            Signal::Impulse { width } => positive("impulse width", *width),
            Signal::Square {
                freq,
                amplitude,
                phase,
            }
            | Signal::Sine {
                freq,
                amplitude,
                phase,
            } => {
                positive("frequency", *freq)?;
                finite("amplitude", *amplitude)?;
                finite("phase", *phase)
            }
            Signal::Sum { terms } => terms.iter().try_for_each(Signal::validate),
            Signal::Scaled { signal, factor } => {
                finite("factor", *factor)?;
                signal.validate()
            }
            Signal::UniformRandom { lo, hi, hold, .. } => {
                finite("lo", *lo)?;
                finite("hi", *hi)?;
                if hi < lo {
                    return Err(Error::InvalidArgument(format!(
                        "uniform random signal has hi = {hi} below lo = {lo}"
                    )));
                }
                positive("hold", *hold)
            }
        }
    }
}

/// Evaluates one signal per input channel.
pub fn eval_input(signals: &[Signal], t: f64, side: Side) -> DVector<f64> {
    DVector::from_iterator(signals.len(), signals.iter().map(|s| s.eval(t, side)))
}
