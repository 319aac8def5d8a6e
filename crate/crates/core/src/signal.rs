//! Time signals used for offsets `h(t)`, external forcing and references.
//!
//! Every signal is right-continuous. Discontinuous variants (staircases and
//! `floor`) expose their breakpoints so the integrator can align jumps with
//! grid points; [`ScalarSignal::eval_left`] returns the left limit there.

use serde::{Deserialize, Serialize};

/// Relative slack used when locating breakpoints in floating point.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarSignal {
    Constant {
        value: f64,
    },
    /// Linear interpolation through `(t, value)` points, held constant
    /// outside the covered interval.
    PiecewiseLinear {
        points: Vec<[f64; 2]>,
    },
    /// `value_i` on `[t_i, t_{i+1})`; `initial` before the first point.
    Staircase {
        #[serde(default)]
        initial: f64,
        points: Vec<[f64; 2]>,
    },
    /// `amplitude · sin(frequency · t + phase)`.
    Sin {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `gain · floor(scale · t + offset)`.
    Floor {
        #[serde(default = "one")]
        gain: f64,
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `slope · max(t − start, 0)`.
    Ramp {
        slope: f64,
        #[serde(default)]
        start: f64,
    },
    Sum {
        terms: Vec<ScalarSignal>,
    },
    Scaled {
        gain: f64,
        signal: Box<ScalarSignal>,
    },
}

fn one() -> f64 {
    1.0
}

fn slack(x: f64) -> f64 {
    SNAP * x.abs().max(1.0)
}

impl ScalarSignal {
    pub fn constant(value: f64) -> Self {
        ScalarSignal::Constant { value }
    }

    pub fn floor(gain: f64, scale: f64, offset: f64) -> Self {
        ScalarSignal::Floor { gain, scale, offset }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_side(t, false)
    }

    /// Left limit `lim_{s↑t} f(s)`.
    pub fn eval_left(&self, t: f64) -> f64 {
        self.eval_side(t, true)
    }

    fn eval_side(&self, t: f64, left: bool) -> f64 {
        match self {
            ScalarSignal::Constant { value } => *value,
            ScalarSignal::PiecewiseLinear { points } => interp(points, t),
            ScalarSignal::Staircase { initial, points } => {
                let mut v = *initial;
                for p in points {
                    let reached = if left {
                        p[0] < t - slack(t)
                    } else {
                        p[0] <= t + slack(t)
                    };
                    if reached {
                        v = p[1];
                    } else {
                        break;
                    }
                }
                v
            }
            ScalarSignal::Sin {
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * t + phase).sin(),
            ScalarSignal::Floor { gain, scale, offset } => {
                let arg = scale * t + offset;
                let k = if left {
                    (arg - slack(arg)).ceil() - 1.0
                } else {
                    (arg + slack(arg)).floor()
                };
                gain * k
            }
            ScalarSignal::Ramp { slope, start } => slope * (t - start).max(0.0),
            ScalarSignal::Sum { terms } => terms.iter().map(|s| s.eval_side(t, left)).sum(),
            ScalarSignal::Scaled { gain, signal } => gain * signal.eval_side(t, left),
        }
    }

    /// Right derivative; zero across jumps.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            ScalarSignal::Constant { .. }
            | ScalarSignal::Staircase { .. }
            | ScalarSignal::Floor { .. } => 0.0,
            ScalarSignal::PiecewiseLinear { points } => {
                if points.len() < 2 {
                    return 0.0;
                }
                for w in points.windows(2) {
                    if t >= w[0][0] && t < w[1][0] {
                        return (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]);
                    }
                }
                0.0
            }
            ScalarSignal::Sin {
                amplitude,
                frequency,
                phase,
            } => amplitude * frequency * (frequency * t + phase).cos(),
            ScalarSignal::Ramp { slope, start } => {
                if t >= *start {
                    *slope
                } else {
                    0.0
                }
            }
            ScalarSignal::Sum { terms } => terms.iter().map(|s| s.derivative(t)).sum(),
            ScalarSignal::Scaled { gain, signal } => gain * signal.derivative(t),
        }
    }

    pub fn is_continuous(&self) -> bool {
        match self {
            ScalarSignal::Staircase { .. } | ScalarSignal::Floor { .. } => false,
            ScalarSignal::Sum { terms } => terms.iter().all(|s| s.is_continuous()),
            ScalarSignal::Scaled { gain, signal } => *gain == 0.0 || signal.is_continuous(),
            _ => true,
        }
    }

    /// Jump times in the half-open window `(t0, t1]`, sorted.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_breakpoints(t0, t1, &mut out);
        sort_dedup(&mut out);
        out
    }

    fn collect_breakpoints(&self, t0: f64, t1: f64, out: &mut Vec<f64>) {
        match self {
            ScalarSignal::Staircase { points, .. } => {
                out.extend(points.iter().map(|p| p[0]).filter(|&t| t > t0 && t <= t1));
            }
            ScalarSignal::Floor { gain, scale, offset } => {
                if *gain == 0.0 || *scale == 0.0 {
                    return;
                }
                let a0 = scale * t0 + offset;
                let a1 = scale * t1 + offset;
                let (lo, hi) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
                let mut k = lo.floor();
                while k <= hi.ceil() {
                    let t = (k - offset) / scale;
                    if t > t0 + slack(t0) && t <= t1 + slack(t1) {
                        out.push(t);
                    }
                    k += 1.0;
                }
            }
            ScalarSignal::Sum { terms } => {
                for s in terms {
                    s.collect_breakpoints(t0, t1, out);
                }
            }
            ScalarSignal::Scaled { gain, signal } if *gain != 0.0 => {
                signal.collect_breakpoints(t0, t1, out);
            }
            _ => {}
        }
    }

    /// Upper bound on `|f'|` for continuous signals, when one is cheap to state.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match self {
            ScalarSignal::Constant { .. } => Some(0.0),
            ScalarSignal::PiecewiseLinear { points } => Some(
                points
                    .windows(2)
                    .map(|w| ((w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).abs())
                    .fold(0.0, f64::max),
            ),
            ScalarSignal::Sin {
                amplitude,
                frequency,
                ..
            } => Some((amplitude * frequency).abs()),
            ScalarSignal::Ramp { slope, .. } => Some(slope.abs()),
            ScalarSignal::Sum { terms } => terms.iter().map(|s| s.lipschitz_bound()).sum(),
            ScalarSignal::Scaled { gain, signal } => signal.lipschitz_bound().map(|l| l * gain.abs()),
            ScalarSignal::Staircase { .. } | ScalarSignal::Floor { .. } => None,
        }
    }
}

fn interp(points: &[[f64; 2]], t: f64) -> f64 {
    match points {
        [] => 0.0,
        [p] => p[1],
        _ => {
            if t <= points[0][0] {
                return points[0][1];
            }
            for w in points.windows(2) {
                if t <= w[1][0] {
                    let s = (t - w[0][0]) / (w[1][0] - w[0][0]);
                    return w[0][1] + s * (w[1][1] - w[0][1]);
                }
            }
            points[points.len() - 1][1]
        }
    }
}

fn sort_dedup(v: &mut Vec<f64>) {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    v.dedup_by(|a, b| (*a - *b).abs() <= slack(*b));
}

/// A vector-valued signal, one scalar expression per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorSignal(pub Vec<ScalarSignal>);

impl VectorSignal {
    pub fn zeros(dim: usize) -> Self {
        VectorSignal(vec![ScalarSignal::constant(0.0); dim])
    }

    pub fn constant(values: &[f64]) -> Self {
        VectorSignal(values.iter().map(|&v| ScalarSignal::constant(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn eval(&self, t: f64) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(self.dim(), self.0.iter().map(|s| s.eval(t)))
    }

    pub fn eval_left(&self, t: f64) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(self.dim(), self.0.iter().map(|s| s.eval_left(t)))
    }

    pub fn derivative(&self, t: f64) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(self.dim(), self.0.iter().map(|s| s.derivative(t)))
    }

    pub fn is_continuous(&self) -> bool {
        self.0.iter().all(|s| s.is_continuous())
    }

    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self.0.iter().flat_map(|s| s.breakpoints(t0, t1)).collect();
        sort_dedup(&mut out);
        out
    }

    /// Euclidean Lipschitz bound from the per-component bounds.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        let mut acc = 0.0;
        for s in &self.0 {
            let l = s.lipschitz_bound()?;
            acc += l * l;
        }
        Some(acc.sqrt())
    }

    /// Concatenation `(self, other)`.
    pub fn concat(&self, other: &VectorSignal) -> VectorSignal {
        VectorSignal(self.0.iter().chain(other.0.iter()).cloned().collect())
    }

    /// Linear image `m · s(t)` as a new signal.
    pub fn mapped(&self, m: &nalgebra::DMatrix<f64>) -> VectorSignal {
        assert_eq!(m.ncols(), self.dim(), "signal map dimension");
        VectorSignal(
            (0..m.nrows())
                .map(|i| {
                    let terms: Vec<ScalarSignal> = (0..m.ncols())
                        .filter(|&j| m[(i, j)] != 0.0)
                        .map(|j| {
                            if m[(i, j)] == 1.0 {
                                self.0[j].clone()
                            } else {
                                ScalarSignal::Scaled {
                                    gain: m[(i, j)],
                                    signal: Box::new(self.0[j].clone()),
                                }
                            }
                        })
                        .collect();
                    match terms.len() {
                        0 => ScalarSignal::constant(0.0),
                        1 => terms.into_iter().next().unwrap(),
                        _ => ScalarSignal::Sum { terms },
                    }
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_is_right_continuous() {
        let f = ScalarSignal::floor(1.0, 10.0, 0.0);
        for k in 1..30 {
            let t = k as f64 / 10.0;
            assert_eq!(f.eval(t), k as f64, "t = {t}");
            assert_eq!(f.eval_left(t), (k - 1) as f64, "t = {t}");
        }
        assert_eq!(f.eval(0.05), 0.0);
        assert_eq!(f.eval_left(0.05), 0.0);
    }

    #[test]
    fn floor_breakpoints() {
        let f = ScalarSignal::floor(1.0, 10.0, 0.0);
        let b = f.breakpoints(0.0, 2.0);
        assert_eq!(b.len(), 20);
        assert!((b[0] - 0.1).abs() < 1e-15);
        assert!((b[19] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn staircase_and_interp() {
        let s = ScalarSignal::Staircase {
            initial: -1.0,
            points: vec![[1.0, 2.0], [2.0, 5.0]],
        };
        assert_eq!(s.eval(0.5), -1.0);
        assert_eq!(s.eval(1.0), 2.0);
        assert_eq!(s.eval_left(1.0), -1.0);
        assert_eq!(s.eval(3.0), 5.0);
        let p = ScalarSignal::PiecewiseLinear {
            points: vec![[0.0, 0.0], [2.0, 4.0]],
        };
        assert_eq!(p.eval(1.0), 2.0);
        assert_eq!(p.derivative(1.0), 2.0);
        assert_eq!(p.eval(5.0), 4.0);
    }

    #[test]
    fn json_round_trip() {
        let v = VectorSignal(vec![
            ScalarSignal::floor(0.1, 10.0, 0.0),
            ScalarSignal::Sin {
                amplitude: 1.0,
                frequency: 2.0,
                phase: 0.0,
            },
        ]);
        let s = serde_json::to_string(&v).unwrap();
        let back: VectorSignal = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
        assert!(!back.is_continuous());
    }
}
