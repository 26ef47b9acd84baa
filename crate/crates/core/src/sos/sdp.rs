//! Linear-plus-PSD conic problems in standard primal form.
//!
//! ```text
//! minimize    c_f.x_f + c_l.x_l + sum_k <C_k, X_k> + offset
//! subject to  a_i(x_f, x_l, X_1, ..) = b_i      for every row i
//!             x_l >= 0,  X_k PSD,  x_f free
//! ```
//!
//! PSD entries are addressed by their upper-triangle position `(r, c)`, `r <= c`;
//! a row coefficient `v` on `(r, c)` contributes `v * X[r, c]`.
//!
//! # Text dump format
//!
//! [`SdpProblem::to_text`] writes a line-oriented sparse format:
//!
//! ```text
//! sdp 1
//! free <nf>
//! nonneg <nl>
//! blocks <n_1> <n_2> ...
//! objective <offset>
//! f <j> <v>            # objective / row terms on free variable j
//! l <j> <v>            # ... on nonnegative variable j
//! s <k> <r> <c> <v>    # ... on entry (r, c) of PSD block k (0-based, r <= c)
//! row <i> <b_i>        # starts row i; its terms follow
//! end
//! ```

use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::ipm;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsdEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub coef: f64,
}

/// One linear functional: `free . x_f + nonneg . x_l + psd . X` (and `rhs`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdpRow {
    pub free: Vec<(usize, f64)>,
    pub nonneg: Vec<(usize, f64)>,
    pub psd: Vec<PsdEntry>,
    pub rhs: f64,
}

impl SdpRow {
    pub fn is_empty(&self) -> bool {
        self.free.is_empty() && self.nonneg.is_empty() && self.psd.is_empty()
    }

    pub fn max_abs_coef(&self) -> f64 {
        self.free
            .iter()
            .chain(&self.nonneg)
            .map(|&(_, v)| v.abs())
            .chain(self.psd.iter().map(|e| e.coef.abs()))
            .fold(0.0, f64::max)
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for t in self.free.iter_mut().chain(self.nonneg.iter_mut()) {
            t.1 *= s;
        }
        for e in &mut self.psd {
            e.coef *= s;
        }
        self.rhs *= s;
    }

    pub fn eval(&self, free: &[f64], nonneg: &[f64], blocks: &[DMatrix<f64>]) -> f64 {
        self.free.iter().map(|&(j, v)| v * free[j]).sum::<f64>()
            + self.nonneg.iter().map(|&(j, v)| v * nonneg[j]).sum::<f64>()
            + self
                .psd
                .iter()
                .map(|e| e.coef * blocks[e.block][(e.row, e.col)])
                .sum::<f64>()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdpProblem {
    pub n_free: usize,
    pub n_nonneg: usize,
    pub block_sizes: Vec<usize>,
    pub rows: Vec<SdpRow>,
    /// Objective to minimize; `rhs` holds the constant offset.
    pub objective: SdpRow,
    /// Set by the compiler when a row reads `0 = b` with `b != 0`.
    pub trivially_infeasible: bool,
}

impl SdpProblem {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sizes: Vec<String> = self.block_sizes.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "sdp 1");
        let _ = writeln!(s, "free {}", self.n_free);
        let _ = writeln!(s, "nonneg {}", self.n_nonneg);
        let _ = writeln!(s, "blocks {}", sizes.join(" "));
        let _ = writeln!(s, "objective {:e}", self.objective.rhs);
        write_terms(&mut s, &self.objective);
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(s, "row {} {:e}", i, r.rhs);
            write_terms(&mut s, r);
        }
        let _ = writeln!(s, "end");
        s
    }

    pub fn n_psd_entries(&self) -> usize {
        self.block_sizes.iter().map(|n| n * (n + 1) / 2).sum()
    }
}

fn write_terms(s: &mut String, r: &SdpRow) {
    for &(j, v) in &r.free {
        let _ = writeln!(s, "f {j} {v:e}");
    }
    for &(j, v) in &r.nonneg {
        let _ = writeln!(s, "l {j} {v:e}");
    }
    for e in &r.psd {
        let _ = writeln!(s, "s {} {} {} {:e}", e.block, e.row, e.col, e.coef);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdpTolerances {
    /// Max scaled equality residual `|a_i.x - b_i| / (1 + |b_i|)` accepted as feasible.
    pub residual: f64,
    /// Most negative eigenvalue (or nonnegative entry) accepted.
    pub psd_slack: f64,
    /// Relative stopping tolerance of the interior-point iteration.
    pub ipm_tol: f64,
    pub max_iter: usize,
}

impl Default for SdpTolerances {
    fn default() -> Self {
        SdpTolerances {
            residual: 1e-7,
            psd_slack: 1e-7,
            ipm_tol: 1e-9,
            max_iter: 120,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub free: Vec<f64>,
    pub nonneg: Vec<f64>,
    pub blocks: Vec<DMatrix<f64>>,
    /// Equality multipliers.
    pub dual: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// Worst scaled equality residual of the returned primal point.
    pub max_residual: f64,
    /// Smallest eigenvalue over PSD blocks and nonnegative variables.
    pub min_eigenvalue: f64,
    /// The returned primal point passed the independent feasibility check.
    pub primal_feasible: bool,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

/// Independent feasibility check of a primal point: `(max residual, min eigenvalue)`.
pub fn primal_check(p: &SdpProblem, free: &[f64], nonneg: &[f64], blocks: &[DMatrix<f64>]) -> (f64, f64) {
    let max_res = p
        .rows
        .iter()
        .map(|r| (r.eval(free, nonneg, blocks) - r.rhs).abs() / (1.0 + r.rhs.abs()))
        .fold(0.0, f64::max);
    let mut min_eig = nonneg.iter().copied().fold(f64::INFINITY, f64::min);
    for b in blocks {
        if b.nrows() > 0 {
            let e = b.clone().symmetric_eigenvalues().min();
            min_eig = min_eig.min(e);
        }
    }
    if !min_eig.is_finite() {
        min_eig = 0.0;
    }
    (max_res, min_eig)
}

/// Solves the problem and post-checks the primal point independently of the solver.
pub fn solve(p: &SdpProblem, tol: &SdpTolerances) -> SdpSolution {
    let empty_blocks: Vec<DMatrix<f64>> = p.block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    if p.trivially_infeasible {
        return SdpSolution {
            status: SdpStatus::Infeasible,
            free: vec![0.0; p.n_free],
            nonneg: vec![0.0; p.n_nonneg],
            blocks: empty_blocks,
            dual: vec![0.0; p.rows.len()],
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            iterations: 0,
            max_residual: f64::INFINITY,
            min_eigenvalue: 0.0,
            primal_feasible: false,
        };
    }
    if p.rows.is_empty() && p.n_free == 0 && p.n_nonneg == 0 && p.block_sizes.iter().all(|&n| n == 0) {
        return SdpSolution {
            status: SdpStatus::Optimal,
            free: Vec::new(),
            nonneg: Vec::new(),
            blocks: empty_blocks,
            dual: Vec::new(),
            primal_objective: p.objective.rhs,
            dual_objective: p.objective.rhs,
            iterations: 0,
            max_residual: 0.0,
            min_eigenvalue: 0.0,
            primal_feasible: true,
        };
    }

    let r = ipm::solve(p, tol);
    let (max_residual, min_eigenvalue) = primal_check(p, &r.free, &r.nonneg, &r.blocks);
    let primal_feasible = max_residual <= tol.residual && min_eigenvalue >= -tol.psd_slack;
    let status = match r.status {
        SdpStatus::Optimal if !primal_feasible => SdpStatus::NumericalFailure,
        s => s,
    };
    let primal_objective = p.objective.eval(&r.free, &r.nonneg, &r.blocks) + p.objective.rhs;
    SdpSolution {
        status,
        free: r.free,
        nonneg: r.nonneg,
        blocks: r.blocks,
        dual_objective: p.rows.iter().zip(&r.dual).map(|(row, y)| row.rhs * y).sum::<f64>() + p.objective.rhs,
        dual: r.dual,
        primal_objective,
        iterations: r.iterations,
        max_residual,
        min_eigenvalue,
        primal_feasible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(block: usize, row: usize, col: usize, coef: f64) -> PsdEntry {
        PsdEntry { block, row, col, coef }
    }

    #[test]
    fn tiny_lp() {
        // min x0 + 2 x1  s.t. x0 + x1 = 1, x >= 0  -> x0 = 1
        let p = SdpProblem {
            n_nonneg: 2,
            rows: vec![SdpRow {
                nonneg: vec![(0, 1.0), (1, 1.0)],
                rhs: 1.0,
                ..Default::default()
            }],
            objective: SdpRow {
                nonneg: vec![(0, 1.0), (1, 2.0)],
                ..Default::default()
            },
            ..Default::default()
        };
        let s = solve(&p, &SdpTolerances::default());
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.nonneg[0] - 1.0).abs() < 1e-7);
        assert!((s.primal_objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn tiny_sdp_with_free_variable() {
        // max t s.t. [[1, t], [t, 1]] PSD, via X01 - t = 0, X00 = 1, X11 = 1
        let p = SdpProblem {
            n_free: 1,
            block_sizes: vec![2],
            rows: vec![
                SdpRow { psd: vec![entry(0, 0, 0, 1.0)], rhs: 1.0, ..Default::default() },
                SdpRow { psd: vec![entry(0, 1, 1, 1.0)], rhs: 1.0, ..Default::default() },
                SdpRow { psd: vec![entry(0, 0, 1, 1.0)], free: vec![(0, -1.0)], rhs: 0.0, ..Default::default() },
            ],
            objective: SdpRow { free: vec![(0, -1.0)], ..Default::default() },
            ..Default::default()
        };
        let s = solve(&p, &SdpTolerances::default());
        assert_eq!(s.status, SdpStatus::Optimal, "{s:?}");
        assert!((s.free[0] - 1.0).abs() < 1e-6, "{}", s.free[0]);
        assert!(s.min_eigenvalue > -1e-7);
    }

    #[test]
    fn infeasible_detected() {
        // X PSD 1x1 with X = -1
        let p = SdpProblem {
            block_sizes: vec![1],
            rows: vec![SdpRow { psd: vec![entry(0, 0, 0, 1.0)], rhs: -1.0, ..Default::default() }],
            ..Default::default()
        };
        let s = solve(&p, &SdpTolerances::default());
        assert_eq!(s.status, SdpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        // min -x, x >= 0, no rows binding x
        let p = SdpProblem {
            n_nonneg: 2,
            rows: vec![SdpRow { nonneg: vec![(1, 1.0)], rhs: 1.0, ..Default::default() }],
            objective: SdpRow { nonneg: vec![(0, -1.0)], ..Default::default() },
            ..Default::default()
        };
        let s = solve(&p, &SdpTolerances::default());
        assert_eq!(s.status, SdpStatus::Unbounded);
    }

    #[test]
    fn dump_format_lists_every_term() {
        let p = SdpProblem {
            n_free: 1,
            block_sizes: vec![2],
            rows: vec![SdpRow { psd: vec![entry(0, 0, 1, 2.0)], free: vec![(0, -1.0)], rhs: 0.5, ..Default::default() }],
            ..Default::default()
        };
        let t = p.to_text();
        assert!(t.starts_with("sdp 1\nfree 1\nnonneg 0\nblocks 2\n"));
        assert!(t.contains("row 0 5e-1\nf 0 -1e0\ns 0 0 1 2e0\nend"));
    }
}
