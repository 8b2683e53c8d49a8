// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exact proximal operator of the block fused lasso penalty written on
//! cumulative coordinates. For one scalar coordinate followed across blocks,
//!
//! ```text
//! prox(u) = argmin_b  1/2 ||b - u||^2 + w_tv (|b_1| + sum_{i>=2} |b_i - b_{i-1}|) + w_l1 sum |b_i|
//! ```
//!
//! The total-variation part is anchored at zero before the first block. It is
//! solved exactly by dynamic programming over the derivative of the forward
//! messages; the l1 part is a soft threshold applied afterwards.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug)]
struct Knot {
    x: f64,
    da: f64,
    dc: f64,
}

/// Reusable workspace for [`prox_fused_path`].
#[derive(Debug, Default)]
pub struct FusedPathProx {
    knots: VecDeque<Knot>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[inline]
pub fn soft_threshold(v: f64, w: f64) -> f64 {
    if v > w {
        v - w
    } else if v < -w {
        v + w
    } else {
        0.0
    }
}

impl FusedPathProx {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overwrite `u` with its proximal point.
    pub fn apply(&mut self, u: &mut [f64], w_tv: f64, w_l1: f64) {
        if w_tv > 0.0 {
            self.anchored_tv(u, w_tv);
        }
        if w_l1 > 0.0 {
            for v in u.iter_mut() {
                *v = soft_threshold(*v, w_l1);
            }
        }
    }

    // Message derivative D_i(b) is piecewise linear and nondecreasing, stored
    // as a left piece `a*b + c` plus knots carrying slope/intercept increments.
    // D_1(b) = b - u_1 + w sign(b); D_i(b) = b - u_i + clamp(D_{i-1}(b), -w, w).
    fn anchored_tv(&mut self, u: &mut [f64], w: f64) {
        let k = u.len();
        if k == 0 {
            return;
        }
        self.knots.clear();
        self.lo.clear();
        self.hi.clear();
        self.knots.push_back(Knot {
            x: 0.0,
            da: 0.0,
            dc: 2.0 * w,
        });
        let (mut la, mut lc) = (1.0, -w - u[0]);
        let (mut ra, mut rc) = (1.0, w - u[0]);

        for i in 1..k {
            let (lo, alo, clo) = self.scan_front(la, lc, -w);
            let (hi, ahi, chi) = self.scan_back(ra, rc, w);
            self.lo.push(lo);
            self.hi.push(hi);
            self.knots.push_front(Knot {
                x: lo,
                da: alo,
                dc: clo + w,
            });
            self.knots.push_back(Knot {
                x: hi,
                da: -ahi,
                dc: w - chi,
            });
            la = 1.0;
            lc = -w - u[i];
            ra = 1.0;
            rc = w - u[i];
        }

        let (root, _, _) = self.scan_front(la, lc, 0.0);
        u[k - 1] = root;
        for i in (0..k - 1).rev() {
            u[i] = u[i + 1].clamp(self.lo[i], self.hi[i]);
        }
    }

    /// Leftmost point where the current derivative reaches `level`, consuming
    /// knots left of it. Returns the point and the piece just right of it.
    fn scan_front(&mut self, mut a: f64, mut c: f64, level: f64) -> (f64, f64, f64) {
        while let Some(&kn) = self.knots.front() {
            if a * kn.x + c >= level {
                return ((level - c) / a, a, c);
            }
            let (a2, c2) = (a + kn.da, c + kn.dc);
            self.knots.pop_front();
            if a2 * kn.x + c2 >= level {
                return (kn.x, a2, c2);
            }
            a = a2;
            c = c2;
        }
        ((level - c) / a, a, c)
    }

    /// Rightmost point where the current derivative reaches `level`, consuming
    /// knots right of it. Returns the point and the piece just left of it.
    fn scan_back(&mut self, mut a: f64, mut c: f64, level: f64) -> (f64, f64, f64) {
        while let Some(&kn) = self.knots.back() {
            if a * kn.x + c <= level {
                return ((level - c) / a, a, c);
            }
            let (a2, c2) = (a - kn.da, c - kn.dc);
            self.knots.pop_back();
            if a2 * kn.x + c2 <= level {
                return (kn.x, a2, c2);
            }
            a = a2;
            c = c2;
        }
        ((level - c) / a, a, c)
    }
}

/// Proximal point of `w_tv * anchored-TV + w_l1 * l1` at `u`.
pub fn prox_fused_path(u: &[f64], w_tv: f64, w_l1: f64) -> Vec<f64> {
    let mut out = u.to_vec();
    FusedPathProx::new().apply(&mut out, w_tv, w_l1);
    out
}

/// Value of the penalty `w_tv * anchored-TV(b) + w_l1 * ||b||_1`.
pub fn fused_path_penalty(b: &[f64], w_tv: f64, w_l1: f64) -> f64 {
    let mut prev = 0.0;
    let mut tv = 0.0;
    for &v in b {
        tv += (v - prev).abs();
        prev = v;
    }
    w_tv * tv + w_l1 * b.iter().map(|v| v.abs()).sum::<f64>()
}
