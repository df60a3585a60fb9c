//! Compensated dot-product accumulation (TwoSum + FMA-based TwoProduct).
//!
//! Sums of products whose terms cancel heavily, such as inner products of
//! high-degree polynomials in monomial form, keep roughly twice the working
//! precision.

#[derive(Debug, Clone, Copy, Default)]
pub struct Dot2 {
    sum: f64,
    err: f64,
}

impl Dot2 {
    pub fn new() -> Self {
        Dot2::default()
    }

    /// Adds `a * b`.
    #[inline]
    pub fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let pe = a.mul_add(b, -p);
        self.add_with_err(p, pe);
    }

    /// Adds `a * b / d`, keeping the rounding errors of the product and of
    /// the quotient.
    #[inline]
    pub fn add_ratio(&mut self, a: f64, b: f64, d: f64) {
        let p = a * b;
        let pe = a.mul_add(b, -p);
        let q = p / d;
        let r = (-q).mul_add(d, p);
        self.add_with_err(q, (r + pe) / d);
    }

    /// Adds `a`.
    #[inline]
    pub fn add(&mut self, a: f64) {
        self.add_with_err(a, 0.0);
    }

    #[inline]
    fn add_with_err(&mut self, p: f64, pe: f64) {
        let s = self.sum + p;
        let bp = s - self.sum;
        let se = (self.sum - (s - bp)) + (p - bp);
        self.sum = s;
        self.err += se + pe;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.err
    }
}
