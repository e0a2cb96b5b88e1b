//! Reference implementations written directly from the model equations,
//! sharing nothing with the crate beyond its parameter structs.

#![allow(dead_code)]

use preview_traction::model::{TireParams, VehicleParams};

pub type State = [f64; 7];

pub fn magic_formula(sigma: f64, mu: f64, tire: &TireParams) -> f64 {
    let b = tire.b0 / mu;
    tire.d0 * mu * (tire.c0 * (b * sigma).atan()).sin()
}

/// Rates of `[T, wL, wR, sL, sR, eL, eR]`; assumes `omega R` above the floor.
pub fn rates(x: &State, request: f64, v: &VehicleParams, tire: &TireParams, mu: [f64; 2], sigma_ref: [f64; 2]) -> State {
    let r = v.tire_radius;
    let mut dx = [0.0; 7];
    dx[0] = (request - x[0]) / v.time_constant;
    let t_wheel = x[0] * v.gear_ratio / 2.0;
    for j in 0..2 {
        let omega = x[1 + j];
        let s = x[3 + j];
        let denom = (omega * r).max(v.slip_speed_floor);
        let sigma = s / denom;
        let fx = magic_formula(sigma, mu[j], tire) * v.vertical_load[j];
        dx[1 + j] = (t_wheel - fx * r) / v.wheel_inertia;
        dx[3 + j] = (-r * r / v.wheel_inertia - 2.0 / v.mass) * fx + t_wheel * r / v.wheel_inertia;
        dx[5 + j] = sigma_ref[j] - sigma;
    }
    dx
}

fn axpy(x: &State, a: f64, k: &State) -> State {
    let mut out = *x;
    for i in 0..7 {
        out[i] += a * k[i];
    }
    out
}

/// Classical RK4 with step `h` over `duration`, the request given as a
/// function of elapsed time and friction as a function of elapsed time.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    x0: &State,
    duration: f64,
    h: f64,
    v: &VehicleParams,
    tire: &TireParams,
    request: impl Fn(f64) -> f64,
    mu: impl Fn(f64) -> [f64; 2],
    sigma_ref: impl Fn([f64; 2]) -> [f64; 2],
) -> State {
    let n = (duration / h).round() as usize;
    let mut x = *x0;
    for k in 0..n {
        let t = k as f64 * h;
        let u = request(t);
        let m = mu(t);
        let sr = sigma_ref(m);
        let f = |s: &State| rates(s, u, v, tire, m, sr);
        let k1 = f(&x);
        let k2 = f(&axpy(&x, h / 2.0, &k1));
        let k3 = f(&axpy(&x, h / 2.0, &k2));
        let k4 = f(&axpy(&x, h, &k3));
        for i in 0..7 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

pub fn peak_reference(mu: f64, tire: &TireParams) -> f64 {
    mu * (std::f64::consts::PI / (2.0 * tire.c0)).tan() / tire.b0
}

/// Maximizer of a unimodal `f` on `[a, b]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Componentwise distance scaled by `max(|b_i|, floor)`.
pub fn max_relative(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}
