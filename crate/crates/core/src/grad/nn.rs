use std::sync::Arc;

use rand::Rng;

use super::{GradError, Graph, ParamId, ParamStore, Var};

/// `x · W + b` with `W: in × out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{name}/w"), input, output, input, rng);
        let b = store.add_uniform(format!("{name}/b"), 1, output, input, rng);
        Self { w, b, input, output }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, GradError> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Token embedding table `vocab × dim`.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let table = store.add_uniform(format!("{name}/table"), vocab, dim, 1, rng);
        Self { table, dim }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, tokens: &[usize]) -> Result<Var, GradError> {
        let t = g.param(store, self.table);
        g.rows(t, Arc::from(tokens))
    }
}

/// Gated recurrent cell with update and reset gates:
///
/// ```text
/// r  = σ(x Wr + h Ur + br)
/// z  = σ(x Wz + h Uz + bz)
/// n  = tanh(x Wn + bn + r ⊙ (h Un + cn))
/// h' = n + z ⊙ (h − n)
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub size: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, size: usize, rng: &mut impl Rng) -> Self {
        Self {
            input: Linear::new(store, &format!("{name}/input"), input, 3 * size, rng),
            hidden: Linear::new(store, &format!("{name}/hidden"), size, 3 * size, rng),
            size,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var) -> Result<Var, GradError> {
        let s = self.size;
        let xi = self.input.forward(g, store, x)?;
        let hh = self.hidden.forward(g, store, h)?;
        let xr = g.slice_cols(xi, 0, s)?;
        let xz = g.slice_cols(xi, s, 2 * s)?;
        let xn = g.slice_cols(xi, 2 * s, 3 * s)?;
        let hr = g.slice_cols(hh, 0, s)?;
        let hz = g.slice_cols(hh, s, 2 * s)?;
        let hn = g.slice_cols(hh, 2 * s, 3 * s)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let rn = g.mul(r, hn)?;
        let n = g.add(xn, rn)?;
        let n = g.tanh(n);
        let d = g.sub(h, n)?;
        let zd = g.mul(z, d)?;
        g.add(n, zd)
    }
}
