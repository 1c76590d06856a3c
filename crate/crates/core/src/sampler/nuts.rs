//! One NUTS transition: multinomial sampling over the trajectory with the
//! generalized no-U-turn check, applied across and within subtrees.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LogDensity;

/// Energy error above which a leapfrog step counts as divergent.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;

/// Position, momentum and cached gradient of one phase-space point.
#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl Point {
    pub fn new(q: Vec<f64>, target: &mut impl LogDensity) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.log_density(&q, &mut grad);
        Point { p: vec![0.0; q.len()], q, grad, logp }
    }

    fn kinetic(&self, inv_metric: &[f64]) -> f64 {
        0.5 * self.p.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    pub fn hamiltonian(&self, inv_metric: &[f64]) -> f64 {
        let h = -self.logp + self.kinetic(inv_metric);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn velocity(&self, inv_metric: &[f64], out: &mut [f64]) {
        for ((o, p), m) in out.iter_mut().zip(&self.p).zip(inv_metric) {
            *o = p * m;
        }
    }

    pub fn leapfrog(&mut self, eps: f64, inv_metric: &[f64], target: &mut impl LogDensity) {
        for (p, g) in self.p.iter_mut().zip(&self.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in self.q.iter_mut().zip(&self.p).zip(inv_metric) {
            *q += eps * m * p;
        }
        self.logp = target.log_density(&self.q, &mut self.grad);
        for (p, g) in self.p.iter_mut().zip(&self.grad) {
            *p += 0.5 * eps * g;
        }
    }

    pub fn refresh_momentum<R: Rng + ?Sized>(&mut self, inv_metric: &[f64], rng: &mut R) {
        for (p, m) in self.p.iter_mut().zip(inv_metric) {
            let z: f64 = StandardNormal.sample(rng);
            *p = z / m.sqrt();
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Both edge velocities point along the summed momentum.
fn no_u_turn(v_minus: &[f64], v_plus: &[f64], rho: &[f64]) -> bool {
    dot(v_minus, rho) > 0.0 && dot(v_plus, rho) > 0.0
}

/// Summary of one transition.
#[derive(Debug, Clone, Copy)]
pub struct TransitionInfo {
    pub accept_stat: f64,
    pub n_leapfrog: usize,
    pub depth: usize,
    pub divergent: bool,
    /// Hamiltonian at the selected point.
    pub energy: f64,
    /// Hamiltonian at the start of the transition.
    pub initial_energy: f64,
}

/// Edge data of a (sub)trajectory, as seen from its two ends.
struct Edges {
    p_beg: Vec<f64>,
    v_beg: Vec<f64>,
    p_end: Vec<f64>,
    v_end: Vec<f64>,
}

struct TreeCtx<'a, T, R> {
    target: &'a mut T,
    rng: &'a mut R,
    inv_metric: &'a [f64],
    eps: f64,
    h0: f64,
    n_leapfrog: usize,
    sum_metro: f64,
    divergent: bool,
}

impl<T: LogDensity, R: Rng> TreeCtx<'_, T, R> {
    /// Extends `z` by `2^depth` leapfrog steps in direction `dir`. On return
    /// `z` is the new trajectory edge, `proposal` the multinomial pick within
    /// the subtree, `rho` its summed momentum and `log_w` its log weight.
    /// Returns false when the subtree diverged or turned.
    #[allow(clippy::too_many_arguments)]
    fn build(
        &mut self,
        depth: usize,
        dir: f64,
        z: &mut Point,
        proposal: &mut Point,
        rho: &mut [f64],
        edges: &mut Edges,
        log_w: &mut f64,
    ) -> bool {
        if depth == 0 {
            z.leapfrog(dir * self.eps, self.inv_metric, self.target);
            self.n_leapfrog += 1;
            let h = z.hamiltonian(self.inv_metric);
            let delta = self.h0 - h;
            if -delta > MAX_ENERGY_ERROR {
                self.divergent = true;
                return false;
            }
            *log_w = log_add_exp(*log_w, delta);
            self.sum_metro += if delta > 0.0 { 1.0 } else { delta.exp() };
            proposal.clone_from(z);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            edges.p_beg.copy_from_slice(&z.p);
            edges.p_end.copy_from_slice(&z.p);
            z.velocity(self.inv_metric, &mut edges.v_beg);
            z.velocity(self.inv_metric, &mut edges.v_end);
            return true;
        }
        let n = z.q.len();
        // first half
        let mut rho_init = vec![0.0; n];
        let mut e_init = Edges { p_beg: vec![0.0; n], v_beg: vec![0.0; n], p_end: vec![0.0; n], v_end: vec![0.0; n] };
        let mut lw_init = f64::NEG_INFINITY;
        if !self.build(depth - 1, dir, z, proposal, &mut rho_init, &mut e_init, &mut lw_init) {
            return false;
        }
        // second half
        let mut proposal_final = z.clone();
        let mut rho_final = vec![0.0; n];
        let mut e_final = Edges { p_beg: vec![0.0; n], v_beg: vec![0.0; n], p_end: vec![0.0; n], v_end: vec![0.0; n] };
        let mut lw_final = f64::NEG_INFINITY;
        if !self.build(depth - 1, dir, z, &mut proposal_final, &mut rho_final, &mut e_final, &mut lw_final) {
            return false;
        }
        let lw_sub = log_add_exp(lw_init, lw_final);
        *log_w = log_add_exp(*log_w, lw_sub);
        if self.rng.random::<f64>() < (lw_final - lw_sub).exp() {
            std::mem::swap(proposal, &mut proposal_final);
        }
        let mut rho_sub: Vec<f64> = rho_init.iter().zip(&rho_final).map(|(a, b)| a + b).collect();
        let mut ok = no_u_turn(&e_init.v_beg, &e_final.v_end, &rho_sub);
        // each half extended by the neighbouring point of the other half
        let ext: Vec<f64> = rho_init.iter().zip(&e_final.p_beg).map(|(a, b)| a + b).collect();
        ok &= no_u_turn(&e_init.v_beg, &e_final.v_beg, &ext);
        let ext: Vec<f64> = rho_final.iter().zip(&e_init.p_end).map(|(a, b)| a + b).collect();
        ok &= no_u_turn(&e_init.v_end, &e_final.v_end, &ext);

        for (r, s) in rho.iter_mut().zip(rho_sub.drain(..)) {
            *r += s;
        }
        edges.p_beg = e_init.p_beg;
        edges.v_beg = e_init.v_beg;
        edges.p_end = e_final.p_end;
        edges.v_end = e_final.v_end;
        ok
    }
}

/// Runs one transition from `current` (momentum is resampled) and replaces
/// it with the selected point.
pub(crate) fn transition<T: LogDensity, R: Rng>(
    current: &mut Point,
    target: &mut T,
    rng: &mut R,
    inv_metric: &[f64],
    eps: f64,
    max_depth: usize,
) -> TransitionInfo {
    let n = current.q.len();
    current.refresh_momentum(inv_metric, rng);
    let h0 = current.hamiltonian(inv_metric);

    let mut left = current.clone();
    let mut right = current.clone();
    let mut sample = current.clone();
    let mut v0 = vec![0.0; n];
    current.velocity(inv_metric, &mut v0);
    let (mut p_left, mut v_left) = (current.p.clone(), v0.clone());
    let (mut p_right, mut v_right) = (current.p.clone(), v0);
    let mut rho = current.p.clone();
    let mut log_w = 0.0;

    let mut ctx = TreeCtx { target, rng, inv_metric, eps, h0, n_leapfrog: 0, sum_metro: 0.0, divergent: false };
    let mut depth = 0;
    while depth < max_depth {
        let mut rho_sub = vec![0.0; n];
        let mut edges = Edges { p_beg: vec![0.0; n], v_beg: vec![0.0; n], p_end: vec![0.0; n], v_end: vec![0.0; n] };
        let mut lw_sub = f64::NEG_INFINITY;
        let forward = ctx.rng.random::<f64>() > 0.5;
        let mut proposal = current.clone();
        let valid = if forward {
            ctx.build(depth, 1.0, &mut right, &mut proposal, &mut rho_sub, &mut edges, &mut lw_sub)
        } else {
            ctx.build(depth, -1.0, &mut left, &mut proposal, &mut rho_sub, &mut edges, &mut lw_sub)
        };
        if !valid {
            break;
        }
        depth += 1;
        // biased progressive sampling toward the new subtree
        if lw_sub > log_w || ctx.rng.random::<f64>() < (lw_sub - log_w).exp() {
            sample = proposal;
        }
        log_w = log_add_exp(log_w, lw_sub);

        let rho_old = rho.clone();
        for (r, s) in rho.iter_mut().zip(&rho_sub) {
            *r += s;
        }
        // subtree edge adjacent to the old tree, and the new outer edge
        let (mut ok, ext_old, ext_new);
        if forward {
            ok = no_u_turn(&v_left, &edges.v_end, &rho);
            ext_old = rho_old.iter().zip(&edges.p_beg).map(|(a, b)| a + b).collect::<Vec<_>>();
            ok &= no_u_turn(&v_left, &edges.v_beg, &ext_old);
            ext_new = rho_sub.iter().zip(&p_right).map(|(a, b)| a + b).collect::<Vec<_>>();
            ok &= no_u_turn(&v_right, &edges.v_end, &ext_new);
            p_right = edges.p_end;
            v_right = edges.v_end;
        } else {
            ok = no_u_turn(&edges.v_end, &v_right, &rho);
            ext_old = rho_old.iter().zip(&edges.p_beg).map(|(a, b)| a + b).collect::<Vec<_>>();
            ok &= no_u_turn(&edges.v_beg, &v_right, &ext_old);
            ext_new = rho_sub.iter().zip(&p_left).map(|(a, b)| a + b).collect::<Vec<_>>();
            ok &= no_u_turn(&edges.v_end, &v_left, &ext_new);
            p_left = edges.p_end;
            v_left = edges.v_end;
        }
        if !ok {
            break;
        }
    }
    let n_leapfrog = ctx.n_leapfrog.max(1);
    let info = TransitionInfo {
        accept_stat: ctx.sum_metro / n_leapfrog as f64,
        n_leapfrog: ctx.n_leapfrog,
        depth,
        divergent: ctx.divergent,
        energy: 0.0,
        initial_energy: h0,
    };
    *current = sample;
    TransitionInfo { energy: current.hamiltonian(inv_metric), ..info }
}
