//! Dormand-Prince 5(4) with PI step control, dense output and event location.

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

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntegrationError<E> {
    Rhs(E),
    StepTooSmall { t: f64, h: f64 },
    TooManySteps { t: f64 },
}

/// One accepted step with its continuous extension.
///
/// A step cut short by an event keeps the interpolant of the full step and
/// ends at `t1 < t0 + h`.
#[derive(Debug, Clone)]
pub struct DenseStep<const D: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: [f64; D],
    pub y1: [f64; D],
    h: f64,
    r: [[f64; D]; 4],
}

impl<const D: usize> DenseStep<D> {
    /// Fourth-order interpolant, valid on `[t0, t1]`.
    pub fn eval(&self, t: f64) -> [f64; D] {
        let th = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let th1 = 1.0 - th;
        let mut y = [0.0; D];
        for i in 0..D {
            y[i] = self.y0[i]
                + th * (self.r[0][i] + th1 * (self.r[1][i] + th * (self.r[2][i] + th1 * self.r[3][i])));
        }
        y
    }
}

/// Outcome of integrating over one interval.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentEnd<const D: usize> {
    Reached { y: [f64; D] },
    /// The event function crossed zero from above at `t`.
    Event { t: f64, y: [f64; D] },
    /// The observer asked to stop after the step ending at `t`.
    Stopped { t: f64, y: [f64; D] },
}

/// What the observer wants after seeing a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub tol: Tolerance,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Event times are located to this width.
    pub event_tol: f64,
    h: f64,
    facold: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl Dopri5 {
    pub fn new(tol: Tolerance) -> Self {
        Self {
            tol,
            h_min: 1e-14,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
            event_tol: 1e-10,
            h: 0.0,
            facold: 1e-4,
            accepted: 0,
            rejected: 0,
        }
    }

    /// Forgets the step size so the next segment starts fresh.
    pub fn reset(&mut self) {
        self.h = 0.0;
        self.facold = 1e-4;
    }

    fn initial_step<const D: usize, E>(
        &self,
        f: &mut impl FnMut(f64, &[f64; D]) -> Result<[f64; D], E>,
        t: f64,
        y: &[f64; D],
        k1: &[f64; D],
        span: f64,
    ) -> Result<f64, E> {
        let sk = |i: usize, y: &[f64; D]| self.tol.atol + self.tol.rtol * y[i].abs();
        let mut dnf = 0.0;
        let mut dny = 0.0;
        for i in 0..D {
            let s = sk(i, y);
            dnf += (k1[i] / s).powi(2);
            dny += (y[i] / s).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { 0.01 * (dny / dnf).sqrt() };
        h = h.min(span).min(self.h_max);
        let mut y1 = [0.0; D];
        for i in 0..D {
            y1[i] = y[i] + h * k1[i];
        }
        let k2 = f(t + h, &y1)?;
        let mut der2 = 0.0;
        for i in 0..D {
            der2 += ((k2[i] - k1[i]) / sk(i, y)).powi(2);
        }
        let der2 = (der2 / D as f64).sqrt() / h;
        let der12 = der2.max((dnf / D as f64).sqrt());
        let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
        Ok((100.0 * h).min(h1).min(span).min(self.h_max))
    }

    /// Integrates `y' = f(t, y)` from `t0` to `t1`.
    ///
    /// `event` is checked after every accepted step; a sign change from
    /// positive to non-positive is located on the dense output. `observe` sees
    /// every accepted step (truncated at an event) and may stop the run.
    pub fn integrate<const D: usize, E>(
        &mut self,
        mut f: impl FnMut(f64, &[f64; D]) -> Result<[f64; D], E>,
        t0: f64,
        y0: [f64; D],
        t1: f64,
        mut event: Option<&mut dyn FnMut(f64, &[f64; D]) -> f64>,
        mut observe: impl FnMut(&DenseStep<D>) -> Control,
    ) -> Result<SegmentEnd<D>, IntegrationError<E>> {
        let mut t = t0;
        let mut y = y0;
        if t1 <= t0 {
            return Ok(SegmentEnd::Reached { y });
        }
        let mut k1 = f(t, &y).map_err(IntegrationError::Rhs)?;
        if self.h <= 0.0 {
            self.h = self.initial_step(&mut f, t, &y, &k1, t1 - t0).map_err(IntegrationError::Rhs)?;
        }
        let mut g_prev = match event.as_mut() {
            Some(g) => g(t, &y),
            None => 1.0,
        };
        let mut steps = 0usize;
        let mut last_rejected = false;
        loop {
            steps += 1;
            if steps > self.max_steps {
                return Err(IntegrationError::TooManySteps { t });
            }
            let remaining = t1 - t;
            if remaining <= 1e-13 * t1.abs().max(1.0) {
                return Ok(SegmentEnd::Reached { y });
            }
            let mut h = self.h.min(self.h_max);
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if h < self.h_min {
                return Err(IntegrationError::StepTooSmall { t, h });
            }
            let mut yt = [0.0; D];
            for i in 0..D {
                yt[i] = y[i] + h * A21 * k1[i];
            }
            let k2 = f(t + C2 * h, &yt).map_err(IntegrationError::Rhs)?;
            for i in 0..D {
                yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            let k3 = f(t + C3 * h, &yt).map_err(IntegrationError::Rhs)?;
            for i in 0..D {
                yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            let k4 = f(t + C4 * h, &yt).map_err(IntegrationError::Rhs)?;
            for i in 0..D {
                yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            let k5 = f(t + C5 * h, &yt).map_err(IntegrationError::Rhs)?;
            for i in 0..D {
                yt[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let k6 = f(t + h, &yt).map_err(IntegrationError::Rhs)?;
            let mut y_new = [0.0; D];
            for i in 0..D {
                y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            let k7 = f(t + h, &y_new).map_err(IntegrationError::Rhs)?;

            let mut err = 0.0;
            for i in 0..D {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(y_new[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / D as f64).sqrt();
            let fac11 = err.powf(0.2 - BETA * 0.75);

            if !err.is_finite() || err > 1.0 {
                self.rejected += 1;
                let shrink = if err.is_finite() { (fac11 / SAFETY).min(1.0 / FAC_MIN) } else { 10.0 };
                self.h = h / shrink;
                last_rejected = true;
                continue;
            }

            let fac = (fac11 / self.facold.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            self.facold = err.max(1e-4);
            self.accepted += 1;
            last_rejected = false;

            let mut r = [[0.0; D]; 4];
            for i in 0..D {
                let dy = y_new[i] - y[i];
                let bspl = h * k1[i] - dy;
                r[0][i] = dy;
                r[1][i] = bspl;
                r[2][i] = dy - h * k7[i] - bspl;
                r[3][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            let t_new = if last { t1 } else { t + h };
            let step = DenseStep { t0: t, t1: t_new, y0: y, y1: y_new, h, r };

            if let Some(g) = event.as_mut() {
                let g_new = g(t_new, &y_new);
                if g_prev > 0.0 && g_new <= 0.0 {
                    let te = self.locate(&step, g_prev, g_new, &mut **g);
                    let ye = step.eval(te);
                    observe(&DenseStep { t1: te, y1: ye, ..step });
                    // keep the step size the controller proposed for the next segment
                    self.h = h_new;
                    return Ok(SegmentEnd::Event { t: te, y: ye });
                }
                g_prev = g_new;
            }

            let ctrl = observe(&step);
            t = t_new;
            y = y_new;
            k1 = k7;
            self.h = if last { h_new.max(self.h) } else { h_new };
            if ctrl == Control::Stop {
                return Ok(SegmentEnd::Stopped { t, y });
            }
            if last {
                return Ok(SegmentEnd::Reached { y });
            }
        }
    }

    /// Illinois regula falsi on the dense output.
    fn locate<const D: usize>(
        &self,
        step: &DenseStep<D>,
        g0: f64,
        g1: f64,
        g: &mut dyn FnMut(f64, &[f64; D]) -> f64,
    ) -> f64 {
        let (mut a, mut b) = (step.t0, step.t1);
        let (mut ga, mut gb) = (g0, g1);
        let mut side = 0i32;
        for _ in 0..200 {
            if b - a <= self.event_tol {
                break;
            }
            let mut m = (a * gb - b * ga) / (gb - ga);
            if !(m > a && m < b) || !m.is_finite() {
                m = 0.5 * (a + b);
            }
            // fall back to bisection when regula falsi stalls on one side
            if (m - a).min(b - m) < 0.01 * self.event_tol {
                m = 0.5 * (a + b);
            }
            let gm = g(m, &step.eval(m));
            if gm > 0.0 {
                a = m;
                ga = gm;
                if side == 1 {
                    gb *= 0.5;
                }
                side = 1;
            } else {
                b = m;
                gb = gm;
                if side == -1 {
                    ga *= 0.5;
                }
                side = -1;
            }
        }
        b
    }
}
