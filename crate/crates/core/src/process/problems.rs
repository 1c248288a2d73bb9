//! Built-in problem instances: the two-factor power plant (CL), the fuel
//! management problem (ACLP), the banded shift process (BSP), the
//! d-dimensional power plant (HCL), and two 1-d lab processes.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{JumpApplication, JumpSpec, ProblemSpec, TimeGrid};
use crate::error::{Error, Result};

/// Floor for coordinates entering `log`; Euler steps can overshoot below zero.
const LOG_FLOOR: f64 = 1e-6;

#[inline]
fn safe_ln(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Gas-fired power plant with mean-reverting electricity and gas prices.
pub fn make_cl() -> ProblemSpec {
    let grid = TimeGrid::new(0.0, 0.25, 180).expect("static grid");
    ProblemSpec::builder("cl", 2, 3, grid)
        .drift(|_, x, out| {
            out[0] = 5.0 * x[0] * (50f64.ln() - safe_ln(x[0]));
            out[1] = 2.0 * x[1] * (6f64.ln() - safe_ln(x[1]));
        })
        .diffusion(|_, x, out| {
            out[0] = 0.5 * x[0];
            out[1] = 0.0;
            out[2] = 0.32 * x[1];
            out[3] = 0.24 * x[1];
        })
        .jump(JumpSpec {
            intensity: 32.0,
            size_rate: 10.0,
            affected_dims: vec![0],
            application: JumpApplication::AdditiveTransformed,
        })
        .payoff(|mode, _, x| match mode {
            0 => -1.0,
            1 => 0.438 * (x[0] - 7.5 * x[1]) - 1.1,
            _ => 0.876 * (x[0] - 10.0 * x[1]) - 1.2,
        })
        .switch_cost(|i, j, _, x| if i == j { 0.0 } else { 0.01 * x[1] + 0.001 })
        .initial(|rng, out| {
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            out[0] = 50.0 + 0.01 * e0;
            out[1] = 6.0 + 0.01 * e1;
        })
        .build()
        .expect("static spec")
}

/// `offset + amplitude * sin(2 pi (t + phase))`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Seasonal {
    pub offset: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl Seasonal {
    pub fn eval(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (2.0 * PI * (t + self.phase)).sin()
    }
}

/// Coefficients of the fuel management problem that have no canonical values.
///
/// [`AclpParams::default`] gives placeholder values: identity-like capacity
/// rows plus an even split, no seasonality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AclpParams {
    /// 4 x 3 capacity allocation per mode and fuel.
    pub capacity: Vec<Vec<f64>>,
    pub h_co2: Vec<f64>,
    pub h_tech: Vec<f64>,
    /// Mean reversion of the 4 demand/availability factors.
    pub alpha: Vec<f64>,
    /// 4 x 4 volatility of the factors.
    pub beta: Vec<Vec<f64>>,
    /// 5 x 5 linear price drift.
    pub xi: Vec<Vec<f64>>,
    /// Per-price lognormal volatility.
    pub s_sigma: Vec<f64>,
    pub demand_season: Seasonal,
    pub availability_season: Vec<Seasonal>,
}

impl Default for AclpParams {
    fn default() -> Self {
        let third = 1.0 / 3.0;
        Self {
            capacity: vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![third, third, third],
            ],
            h_co2: vec![0.8, 0.4, 0.1],
            h_tech: vec![1.0, 1.0, 1.0],
            alpha: vec![0.5, 0.5, 0.5, 0.5],
            beta: vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.3, 0.0, 0.0],
                vec![0.0, 0.0, 0.3, 0.0],
                vec![0.0, 0.0, 0.0, 0.3],
            ],
            xi: vec![vec![0.0; 5]; 5],
            s_sigma: vec![0.3, 0.3, 0.3, 0.3, 0.5],
            demand_season: Seasonal::default(),
            availability_season: vec![Seasonal::default(); 3],
        }
    }
}

fn check_matrix(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid(format!("ACLP parameter {name} must be {rows}x{cols}")));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("ACLP parameter {name} has non-finite entries")));
    }
    Ok(())
}

fn check_vector(name: &str, v: &[f64], len: usize) -> Result<()> {
    check_matrix(name, std::slice::from_ref(&v.to_vec()), 1, len)
}

impl AclpParams {
    pub fn validate(&self) -> Result<()> {
        check_matrix("capacity", &self.capacity, 4, 3)?;
        check_vector("h_co2", &self.h_co2, 3)?;
        check_vector("h_tech", &self.h_tech, 3)?;
        check_vector("alpha", &self.alpha, 4)?;
        check_matrix("beta", &self.beta, 4, 4)?;
        check_matrix("xi", &self.xi, 5, 5)?;
        check_vector("s_sigma", &self.s_sigma, 5)?;
        if self.availability_season.len() != 3 {
            return Err(Error::invalid("ACLP availability_season needs 3 entries"));
        }
        Ok(())
    }
}

/// Fuel management with state `(Z^0..Z^3, S^0..S^4)`.
pub fn make_aclp(params: AclpParams) -> Result<ProblemSpec> {
    params.validate()?;
    let grid = TimeGrid::new(0.0, 1.0, 90)?;
    let p = std::sync::Arc::new(params);
    let (pd, pv, pp, pc) = (p.clone(), p.clone(), p.clone(), p.clone());
    ProblemSpec::builder("aclp", 9, 4, grid)
        .drift(move |_, x, out| {
            for i in 0..4 {
                out[i] = -pd.alpha[i] * x[i];
            }
            for i in 0..5 {
                out[4 + i] = (0..5).map(|k| pd.xi[i][k] * x[4 + k]).sum();
            }
        })
        .diffusion(move |_, x, out| {
            out.fill(0.0);
            for i in 0..4 {
                for k in 0..4 {
                    out[i * 9 + k] = pv.beta[i][k];
                }
            }
            for i in 0..5 {
                out[(4 + i) * 9 + 4 + i] = pv.s_sigma[i] * x[4 + i];
            }
        })
        .jump(JumpSpec {
            intensity: 12.0,
            size_rate: 15.0,
            affected_dims: (4..9).collect(),
            application: JumpApplication::Multiplicative,
        })
        .payoff(move |mode, t, x| {
            let demand = x[0] + pp.demand_season.eval(t);
            let row = &pp.capacity[mode];
            let mut effective = 0.0;
            let mut cost = 0.0;
            for k in 0..3 {
                let availability = std_normal_cdf(x[1 + k] + pp.availability_season[k].eval(t));
                effective += row[k] * availability;
                cost += row[k] * (pp.h_co2[k] * x[4] + pp.h_tech[k] * x[5 + k]);
            }
            effective.min(demand) * x[8] - cost
        })
        .switch_cost(move |i, j, _, x| {
            if i == j {
                return 0.0;
            }
            let changed: f64 = (0..3)
                .filter(|&k| pc.capacity[i][k] != pc.capacity[j][k])
                .map(|k| x[5 + k])
                .sum();
            changed / 3.0 + 0.001
        })
        .initial(|rng, out| {
            const MEAN: [f64; 9] = [70.0, 1.0, 1.0, 0.0, 20.0, 60.0, 40.0, 20.0, 120.0];
            for (o, m) in out.iter_mut().zip(MEAN) {
                let e: f64 = rng.sample(StandardNormal);
                *o = m + 0.005 * e;
            }
        })
        .build()
}

/// Band index `floor((x + 2) / 0.4)`; mode `b` (0-based) owns band `b`.
fn band(x: f64) -> i64 {
    ((x + 2.0) / 0.4).floor() as i64
}

/// One-dimensional process whose profitable bands shift with a sinusoidal mean.
pub fn make_bsp() -> ProblemSpec {
    let grid = TimeGrid::new(0.0, 1.0, 36).expect("static grid");
    ProblemSpec::builder("bsp", 1, 10, grid)
        .drift(|t, x, out| out[0] = -0.5 * (x[0] - (2.0 * PI * t).sin()))
        .diffusion(|_, x, out| out[0] = 0.5 + 0.2 * x[0].abs())
        .payoff(|mode, _, x| {
            let b = band(x[0]);
            let j = mode as i64;
            if j == b && (-2.0..=2.0).contains(&x[0]) {
                1.0
            } else if j == b - 1 || j == b + 1 {
                0.2
            } else {
                0.0
            }
        })
        .switch_cost(|i, j, _, _| {
            if i == j {
                0.0
            } else {
                0.05 * (i.abs_diff(j).min(3) as f64)
            }
        })
        .initial(|rng, out| {
            let e: f64 = rng.sample(StandardNormal);
            out[0] = 0.5 * e;
        })
        .build()
        .expect("static spec")
}

const HCL_COEF: [[f64; 3]; 3] = [[0.0, 0.0, -1.0], [0.438, -3.285, -1.1], [0.876, -8.76, -1.2]];

/// The power plant in `d >= 2` dimensions: electricity plus `d - 1` correlated gas prices.
pub fn make_hcl(d: usize) -> Result<ProblemSpec> {
    if d < 2 {
        return Err(Error::invalid(format!("HCL needs d >= 2, got {d}")));
    }
    let grid = TimeGrid::new(0.0, 0.25, 180)?;
    let mut x0 = vec![6.0; d];
    x0[0] = 50.0;
    let log_x0: Vec<f64> = x0.iter().map(|v: &f64| v.ln()).collect();
    let mut sigma = vec![0.0; d * d];
    sigma[0] = 0.5;
    for i in 1..d {
        sigma[i * d] = 0.32;
        sigma[i * d + i] = 0.24;
    }
    ProblemSpec::builder(format!("hcl{d}"), d, 3, grid)
        .drift(move |_, x, out| {
            for i in 0..x.len() {
                let alpha = if i == 0 { 5.0 } else { 2.0 };
                out[i] = alpha * x[i] * (log_x0[i] - safe_ln(x[i]));
            }
        })
        .diffusion(move |_, _, out| out.copy_from_slice(&sigma))
        .jump(JumpSpec {
            intensity: 32.0,
            size_rate: 10.0,
            affected_dims: vec![0],
            application: JumpApplication::AdditiveTransformed,
        })
        .payoff(|mode, _, x| {
            let [a, b, c] = HCL_COEF[mode];
            let rest = &x[1..];
            let mean = rest.iter().sum::<f64>() / rest.len() as f64;
            a * x[0] + b * mean + c
        })
        .switch_cost(|i, j, _, _| if i == j { 0.0 } else { 0.011 })
        .initial_point(x0)
        .build()
}

/// Ornstein-Uhlenbeck `dX = -X dt + dW`, `X_0 ~ N(0, 1)`, on `[0, 1]` with 10
/// steps and a single zero-payoff mode. Diffusion-only probe for the
/// concentration lab.
pub fn make_ou_lab() -> ProblemSpec {
    let grid = TimeGrid::new(0.0, 1.0, 10).expect("static grid");
    ProblemSpec::builder("ou", 1, 1, grid)
        .drift(|_, x, out| out[0] = -x[0])
        .diffusion(|_, _, out| out[0] = 1.0)
        .payoff(|_, _, _| 0.0)
        .switch_cost(|_, _, _, _| 0.0)
        .initial(|rng, out| out[0] = rng.sample(StandardNormal))
        .build()
        .expect("static spec")
}

/// [`make_ou_lab`] plus upward-only jumps (intensity 5, `Y ~ Exp(10)`).
pub fn make_jump_lab() -> ProblemSpec {
    let grid = TimeGrid::new(0.0, 1.0, 10).expect("static grid");
    ProblemSpec::builder("ou_jump", 1, 1, grid)
        .drift(|_, x, out| out[0] = -x[0])
        .diffusion(|_, _, out| out[0] = 1.0)
        .jump(JumpSpec {
            intensity: 5.0,
            size_rate: 10.0,
            affected_dims: vec![0],
            application: JumpApplication::AdditiveTransformed,
        })
        .payoff(|_, _, _| 0.0)
        .switch_cost(|_, _, _, _| 0.0)
        .initial(|rng, out| out[0] = rng.sample(StandardNormal))
        .build()
        .expect("static spec")
}
