//! Independent reference implementations used as test oracles. They share no
//! code with the library and favour obviousness over speed.

#![allow(dead_code)]

use contrast_iqa::regressor::HeadParams;

/// Pearson correlation from raw sums.
pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Rank of each element by counting: 1 + #smaller + (#equal - 1) / 2.
pub fn naive_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    naive_pearson(&naive_ranks(x), &naive_ranks(y))
}

/// Output of the 3-layer head plus the on/off pattern of every ReLU.
pub struct OracleForward {
    pub output: f64,
    pub pattern: Vec<bool>,
}

/// Straightforward forward pass of the regression head in f64. `keep` is the
/// first-layer dropout mask (`None` = no dropout) and `drop_p` its probability.
pub fn oracle_forward(p: &HeadParams<f64>, x: &[f64], keep: Option<&[bool]>, drop_p: f64) -> OracleForward {
    let [h1, h2] = p.hidden();
    let n = p.in_dim();
    let mut pattern = Vec::with_capacity(h1 + h2);
    let mut a1 = vec![0.0; h1];
    for i in 0..h1 {
        let mut z = p.b1[i];
        for k in 0..n {
            z += p.w1[i * n + k] * x[k];
        }
        pattern.push(z > 0.0);
        let r = if z > 0.0 { z } else { 0.0 };
        a1[i] = match keep {
            Some(m) if m[i] => r / (1.0 - drop_p),
            Some(_) => 0.0,
            None => r,
        };
    }
    let mut out = p.b3[0];
    for j in 0..h2 {
        let mut z = p.b2[j];
        for i in 0..h1 {
            z += p.w2[j * h1 + i] * a1[i];
        }
        pattern.push(z > 0.0);
        if z > 0.0 {
            out += p.w3[j] * z;
        }
    }
    OracleForward { output: out, pattern }
}

/// Unevaluated sum `hi + lo` with |lo| <= ulp(hi)/2.
#[derive(Clone, Copy, Debug)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd {
        hi: s,
        lo: (a - (s - bb)) + (b - bb),
    }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd {
        hi: p,
        lo: a.mul_add(b, -p),
    }
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let v = two_sum(s.hi, s.lo + t.hi);
        two_sum(v.hi, v.lo + t.lo)
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    pub fn div_f64(self, d: f64) -> Dd {
        let q1 = self.hi / d;
        let r = self.sub(two_prod(q1, d));
        two_sum(q1, r.hi / d)
    }

    pub fn is_positive(self) -> bool {
        self.hi > 0.0 || (self.hi == 0.0 && self.lo > 0.0)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Compensated dot-product accumulator (Ogita, Rump and Oishi's Dot2):
/// result accurate as if computed in twice the working precision.
struct Acc {
    s: f64,
    c: f64,
}

impl Acc {
    fn new(v: Dd) -> Self {
        Acc { s: v.hi, c: v.lo }
    }

    /// Adds `a * w` for a double-double `a`.
    fn add_prod(&mut self, a: Dd, w: f64) {
        let p = two_prod(a.hi, w);
        let t = two_sum(self.s, p.hi);
        self.s = t.hi;
        self.c += t.lo + p.lo + a.lo * w;
    }

    fn finish(self) -> Dd {
        two_sum(self.s, self.c)
    }
}

/// [`oracle_forward`] in compensated arithmetic (about 30 significant digits);
/// the output is returned unrounded.
pub fn oracle_forward_dd(p: &HeadParams<f64>, x: &[f64], keep: Option<&[bool]>, drop_p: f64) -> (Dd, Vec<bool>) {
    let [h1, h2] = p.hidden();
    let n = p.in_dim();
    let mut pattern = Vec::with_capacity(h1 + h2);
    let mut a1 = vec![Dd::ZERO; h1];
    for i in 0..h1 {
        let mut z = Acc::new(Dd::from(p.b1[i]));
        for k in 0..n {
            z.add_prod(Dd::from(x[k]), p.w1[i * n + k]);
        }
        let z = z.finish();
        pattern.push(z.is_positive());
        let r = if z.is_positive() { z } else { Dd::ZERO };
        a1[i] = match keep {
            Some(m) if m[i] => r.div_f64(1.0 - drop_p),
            Some(_) => Dd::ZERO,
            None => r,
        };
    }
    let mut out = Acc::new(Dd::from(p.b3[0]));
    for j in 0..h2 {
        let mut z = Acc::new(Dd::from(p.b2[j]));
        for i in 0..h1 {
            z.add_prod(a1[i], p.w2[j * h1 + i]);
        }
        let z = z.finish();
        pattern.push(z.is_positive());
        if z.is_positive() {
            out.add_prod(z, p.w3[j]);
        }
    }
    (out.finish(), pattern)
}
