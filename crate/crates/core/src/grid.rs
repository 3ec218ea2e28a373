//! Discretization of `P(S) x` context box: simplex lattice with Kuhn
//! triangulation and a rectangular context lattice.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{cartesian, compositions, limit_step_raw, steps, ModelSpec};

/// Points of `P(S)` whose weights are multiples of `1/n`.
#[derive(Clone, Debug)]
pub struct SimplexGrid {
    parts: usize,
    denom: usize,
    nodes: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

impl SimplexGrid {
    pub fn new(parts: usize, pitch: f64) -> Result<Self> {
        if parts == 0 {
            return Err(Error::Config("simplex grid needs at least one state".into()));
        }
        if !(pitch > 0.0) {
            return Err(Error::Config(format!("measure pitch must be positive, got {pitch}")));
        }
        let denom = steps(1.0, pitch);
        let mut nodes = Vec::new();
        let mut buf = vec![0usize; parts];
        compositions(denom, parts, 0, &mut buf, &mut |c| {
            nodes.push(c.iter().map(|&k| k as u32).collect::<Vec<u32>>())
        });
        let index = nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            parts,
            denom,
            nodes,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn denominator(&self) -> usize {
        self.denom
    }

    pub fn weights(&self, node: usize) -> Vec<f64> {
        self.nodes[node]
            .iter()
            .map(|&k| k as f64 / self.denom as f64)
            .collect()
    }

    /// Barycentric coordinates of `m` in the Kuhn simplex containing it.
    /// Slightly infeasible inputs are projected onto the simplex first.
    pub fn locate(&self, m: &[f64]) -> Vec<(usize, f64)> {
        let s = self.parts;
        if s == 1 {
            return vec![(0, 1.0)];
        }
        let mut w: Vec<f64> = m.iter().map(|x| x.max(0.0)).collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|x| *x /= total);
        } else {
            w = vec![1.0 / s as f64; s];
        }
        let n = self.denom as f64;
        // u_k = n * (m_k + ... + m_{S-1}), k = 1..S-1
        let mut u = vec![0.0; s - 1];
        let mut acc = 0.0;
        for k in (1..s).rev() {
            acc += w[k];
            u[k - 1] = (acc * n).clamp(0.0, n);
        }
        let base: Vec<i64> = u.iter().map(|x| x.floor() as i64).collect();
        let frac: Vec<f64> = u.iter().zip(&base).map(|(x, b)| x - *b as f64).collect();
        let mut order: Vec<usize> = (0..s - 1).collect();
        order.sort_by(|&a, &b| frac[b].partial_cmp(&frac[a]).unwrap().then(a.cmp(&b)));
        let mut out = Vec::with_capacity(s);
        let mut vertex = base.clone();
        let first = 1.0 - frac[order[0]];
        if first > 1e-15 {
            out.push((self.node_of(&vertex), first));
        }
        for (k, &dir) in order.iter().enumerate() {
            vertex[dir] += 1;
            let next = if k + 1 < order.len() { frac[order[k + 1]] } else { 0.0 };
            let lambda = frac[dir] - next;
            if lambda > 1e-15 {
                out.push((self.node_of(&vertex), lambda));
            }
        }
        let total: f64 = out.iter().map(|(_, l)| l).sum();
        out.iter_mut().for_each(|(_, l)| *l /= total);
        out
    }

    fn node_of(&self, u: &[i64]) -> usize {
        let s = self.parts;
        let n = self.denom as i64;
        let mut counts = Vec::with_capacity(s);
        let mut prev = n;
        for &x in u {
            counts.push((prev - x) as u32);
            prev = x;
        }
        counts.push(prev as u32);
        self.index[&counts]
    }
}

/// Rectangular lattice over the context box.
#[derive(Clone, Debug)]
pub struct ContextLattice {
    lower: Vec<f64>,
    upper: Vec<f64>,
    intervals: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl ContextLattice {
    pub fn new(bounds: &[(f64, f64)], pitch: f64) -> Result<Self> {
        if !bounds.is_empty() && !(pitch > 0.0) {
            return Err(Error::Config(format!("context pitch must be positive, got {pitch}")));
        }
        let lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let upper: Vec<f64> = bounds.iter().map(|b| b.1).collect();
        if lower.iter().chain(&upper).any(|x| !x.is_finite()) {
            return Err(Error::Config("context box must be bounded".into()));
        }
        let intervals: Vec<usize> = bounds.iter().map(|(l, h)| steps(h - l, pitch)).collect();
        let mut strides = vec![1usize; intervals.len()];
        for k in (0..intervals.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * (intervals[k + 1] + 1);
        }
        let len = intervals.iter().map(|k| k + 1).product();
        Ok(Self {
            lower,
            upper,
            intervals,
            strides,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn axis(&self, k: usize, i: usize) -> f64 {
        let n = self.intervals[k];
        if n == 0 {
            self.lower[k]
        } else {
            self.lower[k] + (self.upper[k] - self.lower[k]) * i as f64 / n as f64
        }
    }

    pub fn point(&self, node: usize) -> Vec<f64> {
        let mut rest = node;
        (0..self.dim())
            .map(|k| {
                let i = rest / self.strides[k];
                rest %= self.strides[k];
                self.axis(k, i)
            })
            .collect()
    }

    /// All lattice points in node order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|k| (0..=self.intervals[k]).map(|i| self.axis(k, i)).collect())
            .collect();
        cartesian(&axes)
    }

    /// Multilinear weights of `c`, clamped to the box.
    pub fn locate(&self, c: &[f64]) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0f64)];
        for k in 0..self.dim() {
            let n = self.intervals[k];
            if n == 0 {
                continue;
            }
            let (l, h) = (self.lower[k], self.upper[k]);
            let x = ((c[k].clamp(l, h) - l) / (h - l) * n as f64).clamp(0.0, n as f64);
            let i = (x.floor() as usize).min(n - 1);
            let f = x - i as f64;
            let mut next = Vec::with_capacity(out.len() * 2);
            for (idx, w) in out {
                if 1.0 - f > 1e-15 {
                    next.push((idx + i * self.strides[k], w * (1.0 - f)));
                }
                if f > 1e-15 {
                    next.push((idx + (i + 1) * self.strides[k], w * f));
                }
            }
            out = next;
        }
        out
    }

    /// Nearest lattice point index.
    pub fn snap(&self, c: &[f64]) -> usize {
        let mut idx = 0;
        for k in 0..self.dim() {
            let n = self.intervals[k];
            if n == 0 {
                continue;
            }
            let (l, h) = (self.lower[k], self.upper[k]);
            let x = (c[k].clamp(l, h) - l) / (h - l) * n as f64;
            idx += (x.round() as usize).min(n) * self.strides[k];
        }
        idx
    }
}

/// Product grid; node `s * contexts + c`.
#[derive(Clone, Debug)]
pub struct StateGrid {
    pub simplex: SimplexGrid,
    pub contexts: ContextLattice,
}

impl StateGrid {
    pub fn new(states: usize, pitch_m: f64, bounds: &[(f64, f64)], pitch_c: f64) -> Result<Self> {
        Ok(Self {
            simplex: SimplexGrid::new(states, pitch_m)?,
            contexts: ContextLattice::new(bounds, pitch_c)?,
        })
    }

    pub fn len(&self) -> usize {
        self.simplex.len() * self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, idx: usize) -> (Vec<f64>, Vec<f64>) {
        let nc = self.contexts.len();
        (self.simplex.weights(idx / nc), self.contexts.point(idx % nc))
    }

    pub fn stencil(&self, m: &[f64], c: &[f64]) -> Vec<(usize, f64)> {
        let nc = self.contexts.len();
        let cs = self.contexts.locate(c);
        let mut out = Vec::new();
        for (s, ws) in self.simplex.locate(m) {
            for &(ci, wc) in &cs {
                out.push((s * nc + ci, ws * wc));
            }
        }
        out
    }

    pub fn interpolate(&self, values: &[f64], m: &[f64], c: &[f64]) -> f64 {
        self.stencil(m, c).iter().map(|&(i, w)| w * values[i]).sum()
    }
}

/// Context box covering every context reachable from the initial state,
/// estimated by propagating sampled boxes through the limit map: at each
/// step the box corners are pushed through `g` for every simplex node of
/// pitch `pitch_m` and every gridded action.
pub fn context_envelope(spec: &ModelSpec, pitch_m: f64) -> Result<Vec<(f64, f64)>> {
    if let Some(b) = &spec.context_box {
        return Ok(b.clone());
    }
    let d = spec.context_dim;
    if d == 0 {
        return Ok(Vec::new());
    }
    let simplex = SimplexGrid::new(spec.num_states(), pitch_m)?;
    let actions = spec.actions.grid();
    let c0 = spec.initial.context.values();
    let mut envelope: Vec<(f64, f64)> = c0.iter().map(|&x| (x, x)).collect();
    let mut current = envelope.clone();
    for t in 0..spec.horizon {
        let axes: Vec<Vec<f64>> = current
            .iter()
            .map(|&(l, h)| if l == h { vec![l] } else { vec![l, h] })
            .collect();
        let corners = cartesian(&axes);
        let mut next: Vec<(f64, f64)> = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for node in 0..simplex.len() {
            let m = simplex.weights(node);
            for c in &corners {
                for a in &actions {
                    let (_, c1) = limit_step_raw(spec, &m, c, a, t);
                    for (b, x) in next.iter_mut().zip(&c1) {
                        if !x.is_finite() {
                            return Err(Error::Config(
                                "context map is unbounded; give an explicit context box".into(),
                            ));
                        }
                        b.0 = b.0.min(*x);
                        b.1 = b.1.max(*x);
                    }
                }
            }
        }
        for (e, n) in envelope.iter_mut().zip(&next) {
            e.0 = e.0.min(n.0);
            e.1 = e.1.max(n.1);
        }
        current = next;
    }
    if envelope.iter().any(|(l, h)| (h - l).abs() > crate::model::CONTEXT_CAP) {
        return Err(Error::Config("context box is unbounded; give an explicit bound".into()));
    }
    Ok(envelope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simplex_grid_counts_compositions() {
        let g = SimplexGrid::new(3, 0.25).unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!(g.weights(0), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn node_is_located_exactly() {
        let g = SimplexGrid::new(3, 0.25).unwrap();
        for i in 0..g.len() {
            let st = g.locate(&g.weights(i));
            assert_eq!(st, vec![(i, 1.0)]);
        }
    }

    #[test]
    fn lattice_multilinear_is_exact_on_affine() {
        let l = ContextLattice::new(&[(0.0, 1.0), (-1.0, 1.0)], 0.25).unwrap();
        let f = |c: &[f64]| 2.0 * c[0] - 3.0 * c[1] + 0.5;
        let vals: Vec<f64> = l.points().iter().map(|p| f(p)).collect();
        let c = [0.37, 0.11];
        let v: f64 = l.locate(&c).iter().map(|&(i, w)| w * vals[i]).sum();
        assert!((v - f(&c)).abs() < 1e-12);
        assert_eq!(l.point(l.snap(&[0.3, 0.9])), vec![0.25, 1.0]);
    }

    proptest! {
        #[test]
        fn barycentric_reproduces_point(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            let s = a + b + c;
            prop_assume!(s > 1e-6);
            let m = [a / s, b / s, c / s];
            let g = SimplexGrid::new(3, 0.1).unwrap();
            let st = g.locate(&m);
            let total: f64 = st.iter().map(|(_, w)| w).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(st.iter().all(|(_, w)| *w >= 0.0));
            let mut back = [0.0; 3];
            for (i, w) in &st {
                for (b, x) in back.iter_mut().zip(g.weights(*i)) {
                    *b += w * x;
                }
            }
            for k in 0..3 {
                prop_assert!((back[k] - m[k]).abs() < 1e-12);
            }
        }
    }
}
