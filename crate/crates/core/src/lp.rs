// Dense two-phase simplex for the small linear programs built by the dispatch
// refinement: minimize c'x subject to A_ub x <= b_ub, A_eq x = b_eq, x >= 0.
// Bland's rule throughout, so degenerate problems terminate.

use alloc::vec;
use alloc::vec::Vec;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Lp {
    n: usize,
    c: Vec<f64>,
    rows: Vec<(Vec<f64>, f64, bool)>,
}

impl Lp {
    pub(crate) fn new(n: usize) -> Self {
        Self { n, c: vec![0.0; n], rows: Vec::new() }
    }

    pub(crate) fn cost(&mut self, j: usize, value: f64) {
        self.c[j] = value;
    }

    /// `a'x <= b`
    pub(crate) fn le(&mut self, a: Vec<f64>, b: f64) {
        debug_assert_eq!(a.len(), self.n);
        self.rows.push((a, b, false));
    }

    /// `a'x = b`
    pub(crate) fn eq(&mut self, a: Vec<f64>, b: f64) {
        debug_assert_eq!(a.len(), self.n);
        self.rows.push((a, b, true));
    }

    /// `x_j <= b`
    pub(crate) fn upper(&mut self, j: usize, b: f64) {
        let mut a = vec![0.0; self.n];
        a[j] = 1.0;
        self.le(a, b);
    }

    pub(crate) fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    m: usize,
    // Columns: n structural, then one slack/surplus per inequality row, then
    // one artificial per row that needs it, then the right-hand side.
    width: usize,
    n_real: usize,
    first_art: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.width + c]
    }

    fn build(lp: &Lp) -> Self {
        let m = lp.rows.len();
        let n_slack = lp.rows.iter().filter(|r| !r.2).count();
        let needs_art: Vec<bool> = lp.rows.iter().map(|(_, b, eq)| *eq || *b < 0.0).collect();
        let n_art = needs_art.iter().filter(|&&x| x).count();
        let n_real = lp.n + n_slack;
        let first_art = n_real;
        let width = n_real + n_art + 1;
        let mut t = vec![0.0; (m + 1) * width];
        let mut basis = vec![0; m];
        let (mut slack, mut art) = (lp.n, first_art);
        for (r, (a, b, eq)) in lp.rows.iter().enumerate() {
            let sign = if *b < 0.0 { -1.0 } else { 1.0 };
            let row = &mut t[r * width..(r + 1) * width];
            for (j, &v) in a.iter().enumerate() {
                row[j] = sign * v;
            }
            row[width - 1] = sign * b;
            if !eq {
                row[slack] = sign;
                if !needs_art[r] {
                    basis[r] = slack;
                }
                slack += 1;
            }
            if needs_art[r] {
                row[art] = 1.0;
                basis[r] = art;
                art += 1;
            }
        }
        Self { m, width, n_real, first_art, t, basis }
    }

    fn set_objective(&mut self, costs: &[f64]) {
        let (m, w) = (self.m, self.width);
        let obj = m * w;
        for c in 0..w {
            self.t[obj + c] = costs.get(c).copied().unwrap_or(0.0);
        }
        // Reduce against the current basis.
        for r in 0..m {
            let cb = self.t[obj + self.basis[r]];
            if cb != 0.0 {
                for c in 0..w {
                    self.t[obj + c] -= cb * self.t[r * w + c];
                }
            }
        }
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let p = self.t[pr * w + pc];
        for c in 0..w {
            self.t[pr * w + c] /= p;
        }
        for r in 0..=self.m {
            if r == pr {
                continue;
            }
            let f = self.t[r * w + pc];
            if f != 0.0 {
                for c in 0..w {
                    self.t[r * w + c] -= f * self.t[pr * w + c];
                }
            }
        }
        self.basis[pr] = pc;
    }

    // Returns false when unbounded, None on iteration limit.
    fn optimize(&mut self, allowed: usize) -> Option<bool> {
        let w = self.width;
        let obj = self.m * w;
        let limit = 50 * (self.m + w) + 1000;
        for _ in 0..limit {
            let Some(pc) = (0..allowed).find(|&c| self.t[obj + c] < -EPS) else {
                return Some(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, pc);
                if a > EPS {
                    let ratio = self.at(r, w - 1) / a;
                    match best {
                        Some((br, bv)) if ratio > bv + EPS || (ratio > bv - EPS && self.basis[r] > self.basis[br]) => {}
                        _ => best = Some((r, ratio)),
                    }
                }
            }
            let Some((pr, _)) = best else {
                return Some(false);
            };
            self.pivot(pr, pc);
        }
        None
    }

    fn run(mut self, lp: &Lp) -> LpOutcome {
        let w = self.width;
        if self.first_art < w - 1 {
            let mut phase1 = vec![0.0; w];
            for c in self.first_art..w - 1 {
                phase1[c] = 1.0;
            }
            self.set_objective(&phase1);
            match self.optimize(w - 1) {
                None => return LpOutcome::IterationLimit,
                Some(_) => {}
            }
            let scale = 1.0 + lp.rows.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
            if -self.t[self.m * w + w - 1] > 1e-7 * scale {
                return LpOutcome::Infeasible;
            }
            // Drive remaining (zero-valued) artificials out of the basis.
            for r in 0..self.m {
                if self.basis[r] >= self.first_art {
                    if let Some(pc) = (0..self.n_real).find(|&c| self.at(r, c).abs() > EPS) {
                        self.pivot(r, pc);
                    }
                }
            }
        }
        let mut costs = vec![0.0; w];
        costs[..lp.n].copy_from_slice(&lp.c);
        self.set_objective(&costs);
        // Artificials stay at zero in phase 2: they may not enter.
        match self.optimize(self.n_real) {
            None => LpOutcome::IterationLimit,
            Some(false) => LpOutcome::Unbounded,
            Some(true) => {
                let mut x = vec![0.0; lp.n];
                for r in 0..self.m {
                    if self.basis[r] < lp.n {
                        x[self.basis[r]] = self.at(r, w - 1).max(0.0);
                    }
                }
                let objective = x.iter().zip(&lp.c).map(|(a, b)| a * b).sum();
                LpOutcome::Optimal { x, objective }
            }
        }
    }
}
