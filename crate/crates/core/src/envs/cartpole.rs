use std::f64::consts::PI;

use rand::Rng;

use super::scalar::{rotate, Scalar};

pub const MAX_FORCE: f64 = 10.0;
pub const G: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Half the pole length.
pub const POLE_HALF: f64 = 0.5;
pub const DT: f64 = 0.01;

/// Cart-pole swing-up, observed as `[x, x_dot, cos(theta), sin(theta),
/// theta_dot]` with `theta = 0` upright. Episodes start hanging down.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CartpoleSwingup;

impl CartpoleSwingup {
    pub fn reset(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut n = || rng.random_range(-0.05..0.05);
        let x = n();
        let x_dot = n();
        let theta: f64 = PI + n();
        let theta_dot = n();
        vec![x, x_dot, theta.cos(), theta.sin(), theta_dot]
    }

    /// `cos(theta) - 0.01 x^2`.
    pub fn reward<S: Scalar>(&self, x: &[S], _a: &[S]) -> S {
        x[2].sub(&x[0].square().scale(0.01))
    }

    pub fn dynamics<S: Scalar>(&self, x: &[S], a: &[S]) -> Vec<S> {
        let total = CART_MASS + POLE_MASS;
        let f = a[0].clamp(-MAX_FORCE, MAX_FORCE);
        let (cos, sin) = (&x[2], &x[3]);
        let temp = f
            .add(&x[4].square().mul(sin).scale(POLE_MASS * POLE_HALF))
            .scale(1.0 / total);
        let denom = cos.square().scale(-POLE_MASS / total).shift(4.0 / 3.0).scale(POLE_HALF);
        let theta_acc = sin.scale(G).sub(&cos.mul(&temp)).div(&denom);
        let x_acc = temp.sub(&theta_acc.mul(cos).scale(POLE_MASS * POLE_HALF / total));
        let v = x[1].add(&x_acc.scale(DT));
        let pos = x[0].add(&v.scale(DT));
        let w = x[4].add(&theta_acc.scale(DT));
        let (c, s) = rotate(cos, sin, &w.scale(DT));
        vec![pos, v, c, s, w]
    }
}

/// Mechanical energy with the pole as a uniform rod; used to check the
/// integrator against the work done by the applied force.
pub fn energy(x: &[f64]) -> f64 {
    let total = CART_MASS + POLE_MASS;
    let (v, c, w) = (x[1], x[2], x[4]);
    0.5 * total * v * v
        + POLE_MASS * POLE_HALF * v * w * c
        + 0.5 * (4.0 / 3.0) * POLE_MASS * POLE_HALF * POLE_HALF * w * w
        + POLE_MASS * G * POLE_HALF * c
}
