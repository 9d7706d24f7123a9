//! Point-mass tether chain and its distance-constraint projection.
//!
//! Each projection pass linearises all segment constraints at once and solves
//! the resulting tridiagonal system `J W Jᵀ Δλ = -C` exactly, so one pass is a
//! Newton step on the whole chain instead of a Gauss-Seidel sweep. That keeps
//! the heavy tip (perching weight) against very light links well conditioned.
//!
//! Near the branch the projection becomes an SQP solve with unilateral
//! contact rows, a merit line search and a keep-best fallback.

use serde::{Deserialize, Serialize};

use super::contact::{push_out_point, BranchGeometry};
use crate::error::SimError;
use crate::math::{Vec3, GRAVITY};

/// Relative segment-length tolerance the projection aims for.
pub const LENGTH_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetherChain {
    /// `n + 1` points; index 0 is the attachment at the quadrotor.
    pub link_positions: Vec<Vec3>,
    pub link_velocities: Vec<Vec3>,
    pub segment_length: f64,
    pub total_length: f64,
    /// Mass of each free link (indices `1..=n`).
    pub link_mass: f64,
    /// Extra mass carried by the last link (the perching weight).
    pub tip_mass: f64,
}

impl TetherChain {
    /// Straight chain hanging at rest below `anchor`.
    pub fn hanging(
        anchor: Vec3,
        segments: usize,
        total_length: f64,
        chain_mass: f64,
        tip_mass: f64,
    ) -> Result<Self, SimError> {
        if segments < 2 {
            return Err(SimError::InvalidConfig(format!("tether needs at least 2 segments, got {segments}")));
        }
        if !(total_length > 0.0) {
            return Err(SimError::InvalidConfig(format!("tether length must be > 0, got {total_length}")));
        }
        if !(chain_mass > 0.0) || tip_mass < 0.0 {
            return Err(SimError::InvalidConfig("tether masses must be positive".into()));
        }
        let segment_length = total_length / segments as f64;
        let link_positions = (0..=segments)
            .map(|i| anchor - Vec3::Z * (segment_length * i as f64))
            .collect();
        Ok(Self {
            link_positions,
            link_velocities: vec![Vec3::ZERO; segments + 1],
            segment_length,
            total_length,
            link_mass: chain_mass / segments as f64,
            tip_mass,
        })
    }

    #[inline]
    pub fn segments(&self) -> usize {
        self.link_positions.len() - 1
    }

    pub fn tip(&self) -> Vec3 {
        *self.link_positions.last().expect("chain is never empty")
    }

    pub fn tip_velocity(&self) -> Vec3 {
        *self.link_velocities.last().expect("chain is never empty")
    }

    /// Mass of link `i`; the attachment point is massless.
    pub fn mass_of(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else if i == self.segments() {
            self.link_mass + self.tip_mass
        } else {
            self.link_mass
        }
    }

    /// Total suspended mass (free links plus weight).
    pub fn suspended_mass(&self) -> f64 {
        self.link_mass * self.segments() as f64 + self.tip_mass
    }

    pub(crate) fn inverse_masses(&self) -> Vec<f64> {
        (0..=self.segments())
            .map(|i| if i == 0 { 0.0 } else { 1.0 / self.mass_of(i) })
            .collect()
    }

    /// Largest `| |p_{i+1} - p_i| - L |` over all segments.
    pub fn max_violation(&self) -> f64 {
        self.link_positions
            .windows(2)
            .map(|w| ((w[1] - w[0]).norm() - self.segment_length).abs())
            .fold(0.0, f64::max)
    }

    /// Kinetic plus gravitational potential energy of the free links [J].
    pub fn mechanical_energy(&self) -> f64 {
        (1..=self.segments())
            .map(|i| {
                let m = self.mass_of(i);
                0.5 * m * self.link_velocities[i].norm_squared() + m * GRAVITY * self.link_positions[i].z
            })
            .sum()
    }
}

/// Outcome of a projection call.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstraintReport {
    pub max_violation: f64,
    /// Accumulated position-level multiplier of the first segment; positive
    /// means the segment is pulling the first link toward the anchor.
    pub anchor_impulse: f64,
    pub passes: usize,
}

#[derive(Default)]
pub(crate) struct Scratch {
    normals: Vec<Vec3>,
    rhs: Vec<f64>,
    diag: Vec<f64>,
    off: Vec<f64>,
    c_prime: Vec<f64>,
}

/// One Newton pass over all distance constraints. Returns the increment of
/// the first segment's multiplier (negative of the solved Δλ₀).
fn newton_pass(pos: &mut [Vec3], inv: &[f64], rest: f64, s: &mut Scratch) -> f64 {
    let m = pos.len() - 1;
    s.normals.clear();
    s.rhs.clear();
    for k in 0..m {
        let d = pos[k + 1] - pos[k];
        let len = d.norm();
        let n = if len > 1e-12 { d / len } else { Vec3::Z * -1.0 };
        s.normals.push(n);
        s.rhs.push(-(len - rest));
    }
    s.diag.clear();
    s.off.clear();
    for k in 0..m {
        s.diag.push(inv[k] + inv[k + 1]);
        if k + 1 < m {
            s.off.push(-inv[k + 1] * s.normals[k].dot(s.normals[k + 1]));
        }
    }
    // Thomas algorithm, solution left in `rhs`.
    s.c_prime.clear();
    s.c_prime.resize(m, 0.0);
    let mut denom = s.diag[0];
    if denom.abs() < 1e-300 {
        return 0.0;
    }
    if m > 1 {
        s.c_prime[0] = s.off[0] / denom;
    }
    s.rhs[0] /= denom;
    for k in 1..m {
        denom = s.diag[k] - s.off[k - 1] * s.c_prime[k - 1];
        if denom.abs() < 1e-300 {
            return 0.0;
        }
        if k + 1 < m {
            s.c_prime[k] = s.off[k] / denom;
        }
        s.rhs[k] = (s.rhs[k] - s.off[k - 1] * s.rhs[k - 1]) / denom;
    }
    for k in (0..m - 1).rev() {
        let next = s.rhs[k + 1];
        s.rhs[k] -= s.c_prime[k] * next;
    }
    for j in 0..=m {
        if inv[j] == 0.0 {
            continue;
        }
        let mut dp = Vec3::ZERO;
        if j > 0 {
            dp += s.normals[j - 1] * s.rhs[j - 1];
        }
        if j < m {
            dp -= s.normals[j] * s.rhs[j];
        }
        pos[j] += dp * inv[j];
    }
    -s.rhs[0]
}

fn max_violation(pos: &[Vec3], rest: f64) -> f64 {
    pos.windows(2)
        .map(|w| ((w[1] - w[0]).norm() - rest).abs())
        .fold(0.0, f64::max)
}

/// Pins link 0 to `anchor` and projects every segment back to its rest length.
///
/// Runs at most `iterations` Newton passes and stops early once the worst
/// violation is below 1e-9 of the segment length. Always returns the best
/// effort reached; the remaining violation is reported.
pub fn solve_tether_constraints(tether: &mut TetherChain, anchor: Vec3, iterations: usize) -> ConstraintReport {
    let inv = tether.inverse_masses();
    let mut scratch = Scratch::default();
    project(&mut tether.link_positions, &inv, tether.segment_length, anchor, None, iterations.max(1), &mut scratch)
}

/// Shared projection loop. Without a branch this is a Gauss-Newton sweep on
/// the distance constraints; with a branch every pass is a full SQP step of
/// the mass-weighted projection with the branch as unilateral rows.
pub(crate) fn project(
    pos: &mut [Vec3],
    inv: &[f64],
    rest: f64,
    anchor: Vec3,
    branch: Option<&BranchGeometry>,
    iterations: usize,
    scratch: &mut Scratch,
) -> ConstraintReport {
    pos[0] = anchor;
    let tight = 1e-9 * rest;
    let mut report = ConstraintReport::default();
    let Some(branch) = branch else {
        for pass in 0..iterations {
            report.anchor_impulse += newton_pass(pos, inv, rest, scratch);
            report.passes = pass + 1;
            if max_violation(pos, rest) < tight {
                break;
            }
        }
        report.max_violation = max_violation(pos, rest);
        return report;
    };

    let mut solver = KktSolver::new(pos, inv);
    let feasibility = |pos: &[Vec3]| max_violation(pos, rest) + max_penetration(pos, branch);
    let mut best = pos.to_vec();
    let mut best_feas = feasibility(pos);
    let mut best_lambda0 = 0.0;
    for pass in 0..iterations {
        solver.pass(pos, inv, rest, branch, pass == 0);
        report.passes = pass + 1;
        solver.line_search(pos, inv, rest, branch);
        let feas = feasibility(pos);
        if feas <= best_feas {
            best_feas = feas;
            best.copy_from_slice(pos);
            best_lambda0 = solver.lambda.first().copied().unwrap_or(0.0);
        }
        let converged = max_violation(pos, rest) < tight && max_penetration(pos, branch) < 1e-12;
        let stalled = solver.dx.iter().all(|d| d.max_abs() < 1e-13);
        if converged || stalled {
            break;
        }
    }
    if feasibility(pos) > best_feas {
        pos.copy_from_slice(&best);
    }
    report.anchor_impulse = -best_lambda0;
    for p in pos.iter_mut().skip(1) {
        push_out_point(p, branch);
    }
    report.max_violation = max_violation(pos, rest);
    report
}

fn max_penetration(pos: &[Vec3], branch: &BranchGeometry) -> f64 {
    pos.iter()
        .skip(1)
        .map(|p| branch.radius - branch.radial_distance(*p))
        .fold(0.0, f64::max)
}

/// A scalar constraint row touching one point or two adjacent points.
#[derive(Clone, Copy)]
struct Row {
    pts: [usize; 2],
    grads: [Vec3; 2],
    npts: usize,
    c: f64,
    /// Contact rows may only push (multiplier ≥ 0).
    unilateral: bool,
    /// Segment whose node the row belongs to.
    group: usize,
}

/// Contacts closer than this to the surface are considered by the active set.
const CONTACT_LOOKAHEAD: f64 = 0.02;
/// Largest node: three coordinates plus up to three rows.
const NODE: usize = 6;

type Mat = [[f64; NODE]; NODE];
const ZERO_MAT: Mat = [[0.0; NODE]; NODE];

/// Newton solver for the KKT system of
/// `min ½ |x - x̂|²_M  s.t.  |x_{k+1} - x_k| = L,  contact rows ≥ 0`.
///
/// Unknowns are grouped into nodes `[x_{k+1}, rows of segment k]`, which
/// makes the KKT matrix block tridiagonal.
struct KktSolver {
    /// Pre-projection positions.
    start: Vec<Vec3>,
    /// Distance rows (one per segment) followed by contact rows.
    rows: Vec<Row>,
    active: Vec<bool>,
    lambda: Vec<f64>,
    dx: Vec<Vec3>,
    trial: Vec<Vec3>,
    /// Relative Marquardt damping added to the mass blocks.
    damping: f64,
    compliance: f64,
    has_chord: Vec<bool>,
    has_point: Vec<bool>,
    node_rows: Vec<Vec<usize>>,
    inv_blocks: Vec<Mat>,
    upper: Vec<Mat>,
    y: Vec<[f64; NODE]>,
}

impl KktSolver {
    fn new(pos: &[Vec3], inv: &[f64]) -> Self {
        let m = pos.len() - 1;
        Self {
            start: pos.to_vec(),
            rows: Vec::new(),
            active: Vec::new(),
            lambda: Vec::new(),
            dx: vec![Vec3::ZERO; pos.len()],
            trial: Vec::with_capacity(pos.len()),
            damping: 0.0,
            compliance: 1e-12 * inv.iter().fold(0.0, |a: f64, &b| a.max(b)),
            has_chord: Vec::new(),
            has_point: Vec::new(),
            node_rows: vec![Vec::new(); m],
            inv_blocks: Vec::with_capacity(m),
            upper: Vec::with_capacity(m),
            y: Vec::with_capacity(m),
        }
    }

    /// Relinearises every row. Contact candidates (points and chord
    /// midpoints near the surface) are added as they appear and keep their
    /// active flags between passes.
    fn build(&mut self, pos: &[Vec3], rest: f64, inv: &[f64], branch: &BranchGeometry, first: bool) {
        let m = pos.len() - 1;
        let r = branch.radius;
        if first {
            self.rows.clear();
            self.active.clear();
            self.lambda = vec![0.0; m];
            self.has_chord = vec![false; m];
            self.has_point = vec![false; m + 1];
        }
        for k in 0..m {
            let d = pos[k + 1] - pos[k];
            let len = d.norm();
            let n = if len > 1e-12 { d / len } else { -Vec3::Z };
            let row = Row { pts: [k, k + 1], grads: [-n, n], npts: 2, c: len - rest, unilateral: false, group: k };
            if first {
                self.rows.push(row);
                self.active.push(true);
            } else {
                self.rows[k] = row;
            }
        }
        if !first {
            for row in self.rows[m..].iter_mut() {
                let q = if row.npts == 1 { pos[row.pts[0]] } else { (pos[row.pts[0]] + pos[row.pts[1]]) * 0.5 };
                let radial = branch.radial_offset(q);
                let nu = radial.try_normalize().unwrap_or(if row.npts == 1 { row.grads[0] } else { row.grads[0] * 2.0 });
                row.c = radial.norm() - r;
                if row.npts == 1 {
                    row.grads[0] = nu;
                } else {
                    row.grads = [nu * 0.5, nu * 0.5];
                }
            }
        }
        // new candidates
        for k in 0..m {
            if !self.has_chord[k] {
                let mid = branch.radial_offset((pos[k] + pos[k + 1]) * 0.5);
                let dist = mid.norm();
                if dist - r < CONTACT_LOOKAHEAD && (inv[k] > 0.0 || branch.radial_distance(pos[k]) > r + 1e-9) {
                    if let Some(nu) = mid.try_normalize() {
                        self.has_chord[k] = true;
                        self.push_contact(Row {
                            pts: [k, k + 1],
                            grads: [nu * 0.5, nu * 0.5],
                            npts: 2,
                            c: dist - r,
                            unilateral: true,
                            group: k,
                        });
                    }
                }
            }
            let i = k + 1;
            if !self.has_point[i] {
                let radial = branch.radial_offset(pos[i]);
                let dist = radial.norm();
                if dist - r < CONTACT_LOOKAHEAD {
                    let nu = radial.try_normalize().unwrap_or(Vec3::Z);
                    self.has_point[i] = true;
                    self.push_contact(Row { pts: [i, i], grads: [nu, Vec3::ZERO], npts: 1, c: dist - r, unilateral: true, group: k });
                }
            }
        }
    }

    fn push_contact(&mut self, row: Row) {
        self.active.push(row.c < 1e-12);
        self.rows.push(row);
        self.lambda.push(0.0);
    }

    /// Gradient of `row` with respect to point `p` (zero if untouched).
    #[inline]
    fn grad(row: &Row, p: usize) -> Vec3 {
        let mut g = Vec3::ZERO;
        for i in 0..row.npts {
            if row.pts[i] == p {
                g += row.grads[i];
            }
        }
        g
    }

    /// Curvature block `t P / len` of segment `k` under tension `t`.
    fn segment_hessian(&self, pos: &[Vec3], k: usize) -> [[f64; 3]; 3] {
        let t = (-self.lambda[k]).max(0.0);
        let mut h = [[0.0; 3]; 3];
        let d = pos[k + 1] - pos[k];
        let len = d.norm();
        if t == 0.0 || len < 1e-12 {
            return h;
        }
        let n = d / len;
        for (i, hi) in h.iter_mut().enumerate() {
            for (j, hij) in hi.iter_mut().enumerate() {
                let eye = if i == j { 1.0 } else { 0.0 };
                *hij = t * (eye - n[i] * n[j]) / len;
            }
        }
        h
    }

    /// Solves the KKT system for the current active set. Fills `dx` and the
    /// multipliers of active rows (inactive contact multipliers are zeroed).
    fn solve(&mut self, pos: &[Vec3], inv: &[f64]) {
        let m = pos.len() - 1;
        for nr in self.node_rows.iter_mut() {
            nr.clear();
        }
        for (idx, row) in self.rows.iter().enumerate() {
            if self.active[idx] {
                self.node_rows[row.group].push(idx);
            }
        }
        let hess: Vec<[[f64; 3]; 3]> = (0..m).map(|k| self.segment_hessian(pos, k)).collect();
        self.inv_blocks.clear();
        self.upper.clear();
        self.y.clear();
        let size = |k: usize, nr: &[Vec<usize>]| 3 + nr[k].len();
        for k in 0..m {
            let p = k + 1;
            let n = size(k, &self.node_rows);
            let mut a = ZERO_MAT;
            let mass = 1.0 / inv[p];
            for i in 0..3 {
                a[i][i] = mass * (1.0 + self.damping);
                for j in 0..3 {
                    a[i][j] += hess[k][i][j];
                    if p < m {
                        a[i][j] += hess[p][i][j];
                    }
                }
            }
            let mut b = [0.0; NODE];
            let g = (pos[p] - self.start[p]) * mass;
            for i in 0..3 {
                b[i] = -g[i];
            }
            for (r, &idx) in self.node_rows[k].iter().enumerate() {
                let gr = Self::grad(&self.rows[idx], p);
                for i in 0..3 {
                    a[i][3 + r] = -gr[i];
                    a[3 + r][i] = -gr[i];
                }
                // small compliance keeps redundant contact rows solvable
                a[3 + r][3 + r] = -self.compliance;
                b[3 + r] = self.rows[idx].c;
            }
            // coupling to the next node
            let mut u = ZERO_MAT;
            if p < m {
                for i in 0..3 {
                    for j in 0..3 {
                        u[i][j] = -hess[p][i][j];
                    }
                }
                for (r, &idx) in self.node_rows[k + 1].iter().enumerate() {
                    let gr = Self::grad(&self.rows[idx], p);
                    for i in 0..3 {
                        u[i][3 + r] = -gr[i];
                    }
                }
            }
            if k > 0 {
                // a -= Uᵀ_{k-1} A'^{-1}_{k-1} U_{k-1},  b -= Uᵀ_{k-1} A'^{-1}_{k-1} y_{k-1}
                let np = size(k - 1, &self.node_rows);
                let up = &self.upper[k - 1];
                let ip = &self.inv_blocks[k - 1];
                let mut w = ZERO_MAT; // A'^{-1} U, np × n
                for i in 0..np {
                    for j in 0..n {
                        w[i][j] = (0..np).map(|q| ip[i][q] * up[q][j]).sum();
                    }
                }
                let yp = &self.y[k - 1];
                for i in 0..n {
                    for j in 0..n {
                        a[i][j] -= (0..np).map(|q| up[q][i] * w[q][j]).sum::<f64>();
                    }
                    let z: f64 = (0..np).map(|q| up[q][i] * (0..np).map(|s| ip[q][s] * yp[s]).sum::<f64>()).sum();
                    b[i] -= z;
                }
            }
            self.inv_blocks.push(invert(&a, n));
            self.upper.push(u);
            self.y.push(b);
        }
        for l in self.lambda.iter_mut() {
            *l = 0.0;
        }
        let mut next = [0.0; NODE];
        for k in (0..m).rev() {
            let n = size(k, &self.node_rows);
            let mut rhs = self.y[k];
            if k + 1 < m {
                let nn = size(k + 1, &self.node_rows);
                for (i, r) in rhs.iter_mut().enumerate().take(n) {
                    *r -= (0..nn).map(|j| self.upper[k][i][j] * next[j]).sum::<f64>();
                }
            }
            let mut x = [0.0; NODE];
            for (i, xi) in x.iter_mut().enumerate().take(n) {
                *xi = (0..n).map(|j| self.inv_blocks[k][i][j] * rhs[j]).sum();
            }
            self.dx[k + 1] = Vec3::new(x[0], x[1], x[2]);
            for (r, &idx) in self.node_rows[k].iter().enumerate() {
                self.lambda[idx] = x[3 + r];
            }
            next = x;
        }
        self.dx[0] = Vec3::ZERO;
    }

    fn predicted(&self, row: &Row) -> f64 {
        let mut c = row.c;
        for i in 0..row.npts {
            c += row.grads[i].dot(self.dx[row.pts[i]]);
        }
        c
    }

    /// One SQP step with a primal-dual active set on the contact rows.
    fn pass(&mut self, pos: &mut [Vec3], inv: &[f64], rest: f64, branch: &BranchGeometry, first: bool) {
        let m = pos.len() - 1;
        self.build(pos, rest, inv, branch, first);
        let curvature = self.lambda.clone();
        for _ in 0..(4 * m) {
            // the Hessian uses the multipliers from the previous pass
            self.lambda.copy_from_slice(&curvature);
            self.solve(pos, inv);
            let worst_neg = (0..self.rows.len())
                .filter(|&i| self.active[i] && self.rows[i].unilateral && self.lambda[i] < 0.0)
                .min_by(|&a, &b| self.lambda[a].total_cmp(&self.lambda[b]));
            if let Some(i) = worst_neg {
                self.active[i] = false;
                continue;
            }
            let worst_pen = (0..self.rows.len())
                .filter(|&i| !self.active[i] && self.rows[i].unilateral)
                .map(|i| (i, self.predicted(&self.rows[i])))
                .filter(|&(_, c)| c < -1e-12)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst_pen {
                Some((i, _)) => self.active[i] = true,
                None => break,
            }
        }
    }

    /// Exact-penalty merit `½|x - x̂|²_M + ρ (Σ|C_dist| + Σ max(0, -C_contact))`.
    fn merit(&self, pos: &[Vec3], inv: &[f64], rest: f64, branch: &BranchGeometry, rho: f64) -> f64 {
        let f: f64 = (1..pos.len()).map(|i| 0.5 * (pos[i] - self.start[i]).norm_squared() / inv[i]).sum();
        let m = pos.len() - 1;
        let dist: f64 = pos.windows(2).map(|w| ((w[1] - w[0]).norm() - rest).abs()).sum();
        let contact: f64 = self.rows[m..]
            .iter()
            .map(|row| {
                let q = if row.npts == 1 { pos[row.pts[0]] } else { (pos[row.pts[0]] + pos[row.pts[1]]) * 0.5 };
                (branch.radius - branch.radial_distance(q)).max(0.0)
            })
            .sum();
        f + rho * (dist + contact)
    }

    /// Backtracking on the merit along `dx`; applies the accepted step.
    fn line_search(&mut self, pos: &mut [Vec3], inv: &[f64], rest: f64, branch: &BranchGeometry) {
        let rho = 2.0 * self.lambda.iter().fold(0.0f64, |a, l| a.max(l.abs())) + 1e-12;
        let before = self.merit(pos, inv, rest, branch, rho);
        self.trial.clear();
        self.trial.extend_from_slice(pos);
        let mut alpha = 1.0;
        loop {
            for ((p, q), d) in pos.iter_mut().zip(&self.trial).zip(&self.dx) {
                *p = *q + *d * alpha;
            }
            if alpha < 1.0 / 64.0 || self.merit(pos, inv, rest, branch, rho) <= before {
                break;
            }
            alpha *= 0.5;
        }
        if alpha < 1.0 {
            self.damping = (self.damping * 4.0).clamp(0.05, 1e3);
        } else {
            self.damping *= 0.25;
        }
    }
}

/// Inverse of the leading `n × n` block by Gauss-Jordan with partial pivoting.
fn invert(a: &Mat, n: usize) -> Mat {
    let mut m = *a;
    let mut out = ZERO_MAT;
    for (i, row) in out.iter_mut().enumerate().take(n) {
        row[i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap_or(col);
        m.swap(col, piv);
        out.swap(col, piv);
        let d = m[col][col];
        let d = if d.abs() < 1e-300 { 1e-300 } else { d };
        for j in 0..n {
            m[col][j] /= d;
            out[col][j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for j in 0..n {
                        m[r][j] -= f * m[col][j];
                        out[r][j] -= f * out[col][j];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain() -> TetherChain {
        TetherChain::hanging(Vec3::new(0.0, 0.0, 3.0), 20, 1.0, 0.002, 0.01).unwrap()
    }

    #[test]
    fn vertical_chain_is_fixed_point() {
        let mut c = chain();
        let before = c.link_positions.clone();
        let anchor = before[0];
        let r = solve_tether_constraints(&mut c, anchor, 20);
        assert!(r.max_violation < 1e-12);
        for (a, b) in before.iter().zip(&c.link_positions) {
            assert!((*a - *b).norm() < 1e-12);
        }
    }

    #[test]
    fn equal_masses_split_symmetrically() {
        // A single stretched segment between two equal free masses.
        let mut pos = vec![Vec3::ZERO, Vec3::new(0.0, 0.0, -1.2)];
        let p0 = pos.clone();
        let inv = [1.0, 1.0];
        let mut s = Scratch::default();
        newton_pass(&mut pos, &inv, 1.0, &mut s);
        let d0 = (pos[0] - p0[0]).norm();
        let d1 = (pos[1] - p0[1]).norm();
        assert!((d0 - d1).abs() < 1e-15);
        assert!(((pos[1] - pos[0]).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn displaced_middle_link_symmetric() {
        // Free-free three-point chain with the middle link displaced sideways:
        // the two neighbours are pulled in by identical amounts.
        let mut pos = vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.3), Vec3::new(1.0, 0.0, 0.0)];
        let inv = [1.0, 1.0, 1.0];
        let mut s = Scratch::default();
        for _ in 0..10 {
            newton_pass(&mut pos, &inv, 1.0, &mut s);
        }
        assert!((pos[0].x + pos[2].x).abs() < 1e-12);
        assert!((pos[0].z - pos[2].z).abs() < 1e-12);
        assert!(pos[1].x.abs() < 1e-12);
        assert!(max_violation(&pos, 1.0) < 1e-10);
    }

    #[test]
    fn heavy_tip_moves_less() {
        // light link and perching weight joined by a stretched segment
        let mut pos = vec![Vec3::ZERO, Vec3::new(0.0, 0.0, -1.1)];
        let p0 = pos.clone();
        let inv = [1.0 / 0.0001, 1.0 / 0.0101];
        let mut s = Scratch::default();
        newton_pass(&mut pos, &inv, 1.0, &mut s);
        let light = (pos[0] - p0[0]).norm();
        let heavy = (pos[1] - p0[1]).norm();
        assert!(heavy < light / 50.0);
        assert!(((pos[1] - pos[0]).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perturbed_chain_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut c = chain();
            let anchor = c.link_positions[0];
            let l = c.segment_length;
            for p in c.link_positions.iter_mut().skip(1) {
                *p += Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)) * l;
            }
            let r = solve_tether_constraints(&mut c, anchor, 30);
            assert!(r.max_violation < LENGTH_TOLERANCE * l, "violation {}", r.max_violation);
            assert_eq!(c.link_positions[0], anchor);
        }
    }

    #[test]
    fn kkt_matches_free_projection() {
        let far = BranchGeometry::new(Vec3::new(50.0, 0.0, 0.0), Vec3::Y, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let c = chain();
            let l = c.segment_length;
            let mut pos = c.link_positions.clone();
            for p in pos.iter_mut().skip(1) {
                *p += Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)) * l;
            }
            let inv = c.inverse_masses();
            let mut s = Scratch::default();
            let r = project(&mut pos, &inv, l, c.link_positions[0], Some(&far), 20, &mut s);
            assert!(r.max_violation < 1e-9 * l);
        }
    }
}
