//! Dormand-Prince 5(4) with the fifth-order dense output of Hairer's `contd5`.
//!
//! The stepper only advances one step at a time; event handling lives in
//! [`crate::trajectory`].

use nalgebra::DVector;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Step-size control settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_max: 1.0,
            max_steps: 200_000,
        }
    }
}

/// One step with its continuous extension. `h` is signed.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    rcont: [DVector<f64>; 5],
    /// Derivative at the end of the step (first stage of the next one).
    k_end: DVector<f64>,
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.rcont[0]
    }

    pub fn end(&self) -> DVector<f64> {
        &self.rcont[0] + &self.rcont[1]
    }

    /// State at fraction `theta` of the step.
    pub fn at_theta(&self, theta: f64) -> DVector<f64> {
        let s1 = 1.0 - theta;
        let r = &self.rcont;
        &r[0] + (&r[1] + (&r[2] + (&r[3] + &r[4] * s1) * theta) * s1) * theta
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        if self.h == 0.0 {
            return self.rcont[0].clone();
        }
        self.at_theta((t - self.t0) / self.h)
    }

    fn lo(&self) -> f64 {
        self.t0.min(self.t1())
    }

    fn hi(&self) -> f64 {
        self.t0.max(self.t1())
    }

    fn shift(&mut self, dt: f64) {
        self.t0 += dt;
    }
}

/// Dense output over a run of steps taken in one direction.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    steps: Vec<DenseStep>,
    t_start: f64,
    x_start: DVector<f64>,
}

impl DenseSolution {
    pub fn new(t_start: f64, x_start: DVector<f64>) -> Self {
        Self {
            steps: Vec::new(),
            t_start,
            x_start,
        }
    }

    pub fn push(&mut self, step: DenseStep) {
        self.steps.push(step);
    }

    pub fn steps(&self) -> &[DenseStep] {
        &self.steps
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.steps.last().map_or(self.t_start, DenseStep::t1)
    }

    pub fn t_min(&self) -> f64 {
        self.t_start.min(self.t_end())
    }

    pub fn t_max(&self) -> f64 {
        self.t_start.max(self.t_end())
    }

    pub fn start_state(&self) -> &DVector<f64> {
        &self.x_start
    }

    pub fn end_state(&self) -> DVector<f64> {
        self.steps
            .last()
            .map_or_else(|| self.x_start.clone(), DenseStep::end)
    }

    pub fn is_forward(&self) -> bool {
        self.steps.first().is_none_or(|s| s.h >= 0.0)
    }

    /// State at `t`, clamped to the covered interval.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        if self.steps.is_empty() {
            return self.x_start.clone();
        }
        let t = t.clamp(self.t_min(), self.t_max());
        let idx = if self.is_forward() {
            self.steps.partition_point(|s| s.hi() < t)
        } else {
            self.steps.partition_point(|s| s.lo() > t)
        };
        let step = &self.steps[idx.min(self.steps.len() - 1)];
        if t == step.t1() {
            return step.end();
        }
        step.at(t)
    }

    /// Step boundaries in integration order, starting with `t_start`.
    pub fn nodes(&self) -> Vec<f64> {
        std::iter::once(self.t_start)
            .chain(self.steps.iter().map(DenseStep::t1))
            .collect()
    }

    pub fn shift_time(&mut self, dt: f64) {
        self.t_start += dt;
        for s in &mut self.steps {
            s.shift(dt);
        }
    }
}

fn scaled_norm(v: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, c: &StepControl) -> f64 {
    let n = v.len().max(1) as f64;
    let sum: f64 = v
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sc = c.atol + c.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Adaptive stepper. The right-hand side is passed into each call so that
/// borrowing stays simple for callers that switch fields.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub t: f64,
    pub x: DVector<f64>,
    k1: DVector<f64>,
    h: f64,
    dir: f64,
    pub control: StepControl,
    pub steps_taken: usize,
}

impl Stepper {
    pub fn new<F>(
        f: &mut F,
        t: f64,
        x: DVector<f64>,
        dir: f64,
        control: StepControl,
    ) -> Result<Self>
    where
        F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    {
        let k1 = f(t, &x);
        check_finite(&k1, t)?;
        let mut s = Self {
            t,
            x,
            k1,
            h: 0.0,
            dir: dir.signum(),
            control,
            steps_taken: 0,
        };
        s.h = s.initial_step(f);
        Ok(s)
    }

    /// Restart from a new state (e.g. after a switch to another field).
    pub fn reset<F>(&mut self, f: &mut F, t: f64, x: DVector<f64>) -> Result<()>
    where
        F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    {
        self.t = t;
        self.x = x;
        self.k1 = f(t, &self.x);
        check_finite(&self.k1, t)?;
        self.h = self.initial_step(f);
        Ok(())
    }

    /// Hairer's starting step heuristic.
    fn initial_step<F>(&self, f: &mut F) -> f64
    where
        F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    {
        let c = &self.control;
        let sc = self.x.map(|v| c.atol + c.rtol * v.abs());
        let n = self.x.len().max(1) as f64;
        let rms = |v: &DVector<f64>| (v.component_div(&sc).norm_squared() / n).sqrt();
        let d0 = rms(&self.x);
        let d1 = rms(&self.k1);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h0 = h0.min(c.h_max);
        let x1 = &self.x + &self.k1 * (self.dir * h0);
        let k2 = f(self.t + self.dir * h0, &x1);
        let d2 = rms(&(k2 - &self.k1)) / h0;
        let dmax = d1.max(d2);
        let h1 = if dmax <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dmax).powf(0.2)
        };
        (100.0 * h0).min(h1).min(c.h_max)
    }

    pub fn suggested_step(&self) -> f64 {
        self.h
    }

    pub fn set_suggested_step(&mut self, h: f64) {
        self.h = h.abs().min(self.control.h_max);
    }

    /// One fixed step of signed size `h` from the current state, no error
    /// control. Does not commit.
    pub fn fixed<F>(&self, f: &mut F, h: f64) -> Result<(DenseStep, f64)>
    where
        F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    {
        let t = self.t;
        let y = &self.x;
        let k1 = &self.k1;
        let k2 = f(t + C2 * h, &(y + k1 * (A21 * h)));
        let k3 = f(t + C3 * h, &(y + (k1 * A31 + &k2 * A32) * h));
        let k4 = f(t + C4 * h, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h));
        let k5 = f(
            t + C5 * h,
            &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
        );
        let k6 = f(
            t + h,
            &(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
        );
        let y1 = y + (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let k7 = f(t + h, &y1);
        check_finite(&y1, t + h)?;
        check_finite(&k7, t + h)?;
        let err = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
        let err_norm = scaled_norm(&err, y, &y1, &self.control);

        let r1 = y.clone();
        let r2 = &y1 - y;
        let r3 = k1 * h - &r2;
        let r4 = &r2 - &k7 * h - &r3;
        let r5 = (k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
        Ok((
            DenseStep {
                t0: t,
                h,
                rcont: [r1, r2, r3, r4, r5],
                k_end: k7,
            },
            err_norm,
        ))
    }

    /// Next accepted step, limited to `|h| <= max_h`. Does not commit.
    pub fn propose<F>(&mut self, f: &mut F, max_h: f64) -> Result<DenseStep>
    where
        F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    {
        let mut h = self.h.min(max_h).min(self.control.h_max);
        loop {
            let h_min = 1e-14 * self.t.abs().max(1.0);
            if h < h_min {
                return Err(Error::StepFailure {
                    t: self.t,
                    reason: format!("step size {h:e} underflow"),
                });
            }
            let (step, err) = self.fixed(f, self.dir * h)?;
            if err <= 1.0 {
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                self.h = (h * fac).min(self.control.h_max);
                return Ok(step);
            }
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
    }

    /// Advance to the end of `step` (which must start at the current state).
    pub fn commit(&mut self, step: &DenseStep) -> Result<()> {
        self.steps_taken += 1;
        if self.steps_taken > self.control.max_steps {
            return Err(Error::StepFailure {
                t: self.t,
                reason: "maximum number of steps exceeded".into(),
            });
        }
        self.t = step.t1();
        self.x = step.end();
        self.k1 = step.k_end.clone();
        Ok(())
    }
}

fn check_finite(v: &DVector<f64>, t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::StepFailure {
            t,
            reason: "non-finite state or derivative".into(),
        })
    }
}

/// Integrates a smooth system from `t0` to `t1` (either direction).
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    x0: DVector<f64>,
    t1: f64,
    control: StepControl,
) -> Result<DenseSolution>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut sol = DenseSolution::new(t0, x0.clone());
    if t1 == t0 {
        return Ok(sol);
    }
    let mut stepper = Stepper::new(&mut f, t0, x0, dir, control)?;
    while (t1 - stepper.t) * dir > 0.0 {
        let remaining = (t1 - stepper.t).abs();
        let mut step = stepper.propose(&mut f, remaining)?;
        // land exactly on t1
        if (remaining - step.h.abs()).abs() <= 1e-13 * t1.abs().max(1.0) {
            step = stepper.fixed(&mut f, t1 - stepper.t)?.0;
        }
        stepper.commit(&step)?;
        sol.push(step);
    }
    Ok(sol)
}
