use crate::diffcore::{Tape, Var};

/// The arithmetic the analytic dynamics need, implemented both for plain
/// `f64` and for batched tape columns so that one generic function serves
/// `step` and `step_differentiable` with identical floating point.
pub trait Scalar: Clone {
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn shift(&self, c: f64) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn square(&self) -> Self;
    fn clamp(&self, lo: f64, hi: f64) -> Self;
    /// `atan2(self, x)` with `self` as the y coordinate.
    fn atan2(&self, x: &Self) -> Self;
}

impl Scalar for f64 {
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn shift(&self, c: f64) -> Self {
        self + c
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn square(&self) -> Self {
        self * self
    }
    fn clamp(&self, lo: f64, hi: f64) -> Self {
        f64::clamp(*self, lo, hi)
    }
    fn atan2(&self, x: &Self) -> Self {
        f64::atan2(*self, *x)
    }
}

/// A `[batch, 1]` column on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Lane<'t> {
    pub tape: &'t Tape,
    pub var: Var,
}

impl<'t> Lane<'t> {
    pub fn new(tape: &'t Tape, var: Var) -> Self {
        Self { tape, var }
    }

    fn wrap(&self, var: Var) -> Self {
        Self { tape: self.tape, var }
    }
}

impl Scalar for Lane<'_> {
    fn add(&self, o: &Self) -> Self {
        self.wrap(self.tape.add(self.var, o.var))
    }
    fn sub(&self, o: &Self) -> Self {
        self.wrap(self.tape.sub(self.var, o.var))
    }
    fn mul(&self, o: &Self) -> Self {
        self.wrap(self.tape.mul(self.var, o.var))
    }
    fn div(&self, o: &Self) -> Self {
        self.wrap(self.tape.div(self.var, o.var))
    }
    fn neg(&self) -> Self {
        self.wrap(self.tape.neg(self.var))
    }
    fn scale(&self, c: f64) -> Self {
        self.wrap(self.tape.scale(self.var, c))
    }
    fn shift(&self, c: f64) -> Self {
        self.wrap(self.tape.add_scalar(self.var, c))
    }
    fn sin(&self) -> Self {
        self.wrap(self.tape.sin(self.var))
    }
    fn cos(&self) -> Self {
        self.wrap(self.tape.cos(self.var))
    }
    fn sqrt(&self) -> Self {
        self.wrap(self.tape.sqrt(self.var))
    }
    fn square(&self) -> Self {
        self.wrap(self.tape.square(self.var))
    }
    fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.wrap(self.tape.clamp(self.var, lo, hi))
    }
    fn atan2(&self, x: &Self) -> Self {
        self.wrap(self.tape.atan2(self.var, x.var))
    }
}

/// Rotates the unit vector `(c, s)` by angle `w` and renormalizes.
pub fn rotate<S: Scalar>(c: &S, s: &S, w: &S) -> (S, S) {
    let (cw, sw) = (w.cos(), w.sin());
    let c2 = c.mul(&cw).sub(&s.mul(&sw));
    let s2 = s.mul(&cw).add(&c.mul(&sw));
    normalize(&c2, &s2)
}

pub fn normalize<S: Scalar>(c: &S, s: &S) -> (S, S) {
    let n = c.square().add(&s.square()).sqrt();
    (c.div(&n), s.div(&n))
}
