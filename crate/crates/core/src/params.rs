//! Catalogue of scalar parameter families `p(y)` used as field coefficients.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Shape of a parameter family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// `offset`
    Constant,
    /// `offset + amplitude * (s - shift)`
    Affine,
    /// `offset + amplitude * tanh(s - shift)`
    Tanh,
    /// `offset + amplitude * sin(s - shift)`
    Sin,
}

/// A scalar function of one slow coordinate `s = y[coord]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamFamily {
    pub family: ParamKind,
    pub offset: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub coord: usize,
}

impl ParamFamily {
    pub fn constant(value: f64) -> Self {
        Self {
            family: ParamKind::Constant,
            offset: value,
            amplitude: 0.0,
            shift: 0.0,
            coord: 0,
        }
    }

    pub fn affine(offset: f64, amplitude: f64, shift: f64) -> Self {
        Self::new(ParamKind::Affine, offset, amplitude, shift)
    }

    pub fn tanh(offset: f64, amplitude: f64, shift: f64) -> Self {
        Self::new(ParamKind::Tanh, offset, amplitude, shift)
    }

    pub fn sin(offset: f64, amplitude: f64, shift: f64) -> Self {
        Self::new(ParamKind::Sin, offset, amplitude, shift)
    }

    fn new(family: ParamKind, offset: f64, amplitude: f64, shift: f64) -> Self {
        Self {
            family,
            offset,
            amplitude,
            shift,
            coord: 0,
        }
    }

    /// Same family, different slow coordinate.
    pub fn on_coord(mut self, coord: usize) -> Self {
        self.coord = coord;
        self
    }

    /// Adds a constant to the family.
    pub fn shifted_by(mut self, delta: f64) -> Self {
        self.offset += delta;
        self
    }

    pub fn value_at(&self, s: f64) -> f64 {
        let z = s - self.shift;
        match self.family {
            ParamKind::Constant => self.offset,
            ParamKind::Affine => self.offset + self.amplitude * z,
            ParamKind::Tanh => self.offset + self.amplitude * z.tanh(),
            ParamKind::Sin => self.offset + self.amplitude * z.sin(),
        }
    }

    pub fn derivative_at(&self, s: f64) -> f64 {
        let z = s - self.shift;
        match self.family {
            ParamKind::Constant => 0.0,
            ParamKind::Affine => self.amplitude,
            ParamKind::Tanh => {
                let t = z.tanh();
                self.amplitude * (1.0 - t * t)
            }
            ParamKind::Sin => self.amplitude * z.cos(),
        }
    }

    pub fn value(&self, y: &DVector<f64>) -> f64 {
        self.value_at(self.arg(y))
    }

    /// Gradient with respect to the full slow vector `y`.
    pub fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(y.len());
        if self.coord < y.len() {
            g[self.coord] = self.derivative_at(self.arg(y));
        }
        g
    }

    /// Range of values over `[lo, hi]`, by dense sampling plus endpoints.
    pub fn range_on(&self, lo: f64, hi: f64) -> (f64, f64) {
        let samples = 2001;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for i in 0..samples {
            let s = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
            let v = self.value_at(s);
            min = min.min(v);
            max = max.max(v);
        }
        (min, max)
    }

    fn arg(&self, y: &DVector<f64>) -> f64 {
        y.get(self.coord).copied().unwrap_or(0.0)
    }
}
