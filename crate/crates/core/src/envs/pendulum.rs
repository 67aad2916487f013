use std::f64::consts::PI;

use rand::Rng;

use super::scalar::{rotate, Scalar};

pub const MAX_TORQUE: f64 = 2.0;
const G: f64 = 10.0;
const M: f64 = 1.0;
const L: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const MAX_SPEED: f64 = 8.0;

/// Torque-limited pendulum, observed as `[cos(theta), sin(theta), theta_dot]`
/// with `theta = 0` upright.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pendulum;

impl Pendulum {
    pub fn reset(&self, rng: &mut impl Rng) -> Vec<f64> {
        let theta: f64 = rng.random_range(-PI..PI);
        let theta_dot: f64 = rng.random_range(-1.0..1.0);
        vec![theta.cos(), theta.sin(), theta_dot]
    }

    /// `-(theta^2 + 0.1 theta_dot^2 + 0.001 u^2)` with theta wrapped to `[-pi, pi]`.
    pub fn reward<S: Scalar>(&self, x: &[S], a: &[S]) -> S {
        let u = a[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        let theta = x[1].atan2(&x[0]);
        theta
            .square()
            .add(&x[2].square().scale(0.1))
            .add(&u.square().scale(0.001))
            .neg()
    }

    /// One semi-implicit Euler step of `dt`; angular speed is clipped to
    /// `MAX_SPEED` before the angle update.
    pub fn dynamics<S: Scalar>(&self, x: &[S], a: &[S]) -> Vec<S> {
        let u = a[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        let acc = x[1].scale(3.0 * G / (2.0 * L)).add(&u.scale(3.0 / (M * L * L)));
        let w = x[2].add(&acc.scale(DT)).clamp(-MAX_SPEED, MAX_SPEED);
        let (c, s) = rotate(&x[0], &x[1], &w.scale(DT));
        vec![c, s, w]
    }
}
