use super::kernels::{add_into, affine, matvec_cols_acc, matvec_t_cols_acc, outer_cols_acc, relu_inplace, sigmoid};
use super::{GnnParams, TensorId as T};
use crate::modem::SymbolPdf;
use crate::numerics::DenseMatrix;

/// Directed edge mask: `active(k, j)` means the edge `j → k` carries a message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMask {
    k: usize,
    active: Vec<bool>,
}

impl EdgeMask {
    /// Fully connected graph without self loops.
    pub fn full(k: usize) -> Self {
        let mut active = vec![true; k * k];
        for i in 0..k {
            active[i * k + i] = false;
        }
        Self { k, active }
    }

    pub fn empty(k: usize) -> Self {
        Self {
            k,
            active: vec![false; k * k],
        }
    }

    pub fn nodes(&self) -> usize {
        self.k
    }

    pub fn active(&self, dest: usize, src: usize) -> bool {
        self.active[dest * self.k + src]
    }

    pub fn set(&mut self, dest: usize, src: usize, on: bool) {
        if dest != src {
            self.active[dest * self.k + src] = on;
        }
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Retained share of the `K(K−1)` possible edges.
    pub fn retention(&self) -> f64 {
        if self.k < 2 {
            return 1.0;
        }
        self.count() as f64 / (self.k * (self.k - 1)) as f64
    }
}

/// Inputs fixed for a whole detection.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInputs {
    /// `[yᵀh_k, h_kᵀh_k, σ²]` per node.
    pub node_features: Vec<[f64; 3]>,
    /// `HᵀH` (edge feature `h_kᵀh_j`).
    pub hh: DenseMatrix,
    pub sigma2: f64,
}

impl GraphInputs {
    pub fn new(h: &DenseMatrix, y: &[f64], sigma2: f64) -> Self {
        let hh = h.gram();
        let hty = h.tr_matvec(y);
        let node_features = (0..h.cols()).map(|k| [hty[k], hh[(k, k)], sigma2]).collect();
        Self {
            node_features,
            hh,
            sigma2,
        }
    }

    pub fn k(&self) -> usize {
        self.node_features.len()
    }
}

/// Per-layer inputs: node attributes `[x_e, v_e]` and the edge mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerInputs {
    pub attrs: Vec<[f64; 2]>,
    pub mask: EdgeMask,
}

/// Node features `u` (`K × N_u`) and GRU states `g` (`K × N_h1`), row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnState {
    pub u: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
struct EdgeRecord {
    dest: usize,
    src: usize,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
struct RoundTape {
    u_in: Vec<f64>,
    g_in: Vec<f64>,
    edges: Vec<EdgeRecord>,
    x: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    g_out: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
struct ReadoutTape {
    u: Vec<f64>,
    r1: Vec<f64>,
    r2: Vec<f64>,
}

/// Activations recorded by [`layer_forward`] for the reverse pass.
#[derive(Clone, Debug, Default)]
pub struct LayerTape {
    rounds: Vec<RoundTape>,
    readout: ReadoutTape,
}

impl LayerTape {
    /// Which ReLU units were active, in a fixed order. Two forward passes with
    /// equal patterns lie on the same smooth piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for round in &self.rounds {
            for e in &round.edges {
                out.extend(e.h1.iter().chain(&e.h2).map(|&v| v > 0.0));
            }
        }
        out.extend(self.readout.r1.iter().chain(&self.readout.r2).map(|&v| v > 0.0));
        out
    }
}

/// `u⁰ = W1·[yᵀh_k, h_kᵀh_k, σ²] + b1`, `g⁰ = 0`.
pub fn init_state(p: &GnnParams, graph: &GraphInputs) -> GnnState {
    let nu = p.hp.n_u;
    let k = graph.k();
    let mut u = vec![0.0; k * nu];
    for (i, f) in graph.node_features.iter().enumerate() {
        affine(p.tensor(T::W1), p.tensor(T::B1), f, &mut u[i * nu..(i + 1) * nu]);
    }
    GnnState {
        u,
        g: vec![0.0; k * p.hp.n_h1],
    }
}

fn round_forward(p: &GnnParams, graph: &GraphInputs, layer: &LayerInputs, state: &mut GnnState, tape: Option<&mut RoundTape>) {
    let k = graph.k();
    let (nu, h1n, h2n) = (p.hp.n_u, p.hp.n_h1, p.hp.n_h2);
    let e = 2 * nu + 2;
    let d = nu + 2;
    let a1 = p.tensor(T::MlpW1);
    let c1 = p.tensor(T::MlpB1);

    // The first message layer splits into a destination part, a source part
    // and the edge-feature part; the node parts are computed once per node.
    let mut dest_part = vec![0.0; k * h1n];
    let mut src_part = vec![0.0; k * h1n];
    for i in 0..k {
        let ui = &state.u[i * nu..(i + 1) * nu];
        matvec_cols_acc(a1, e, 0, ui, &mut dest_part[i * h1n..(i + 1) * h1n]);
        matvec_cols_acc(a1, e, nu, ui, &mut src_part[i * h1n..(i + 1) * h1n]);
    }
    let col_hh: Vec<f64> = (0..h1n).map(|r| a1[r * e + 2 * nu]).collect();
    let col_s2: Vec<f64> = (0..h1n).map(|r| a1[r * e + 2 * nu + 1] * graph.sigma2 + c1[r]).collect();

    let mut agg = vec![0.0; k * nu];
    let mut edges = Vec::new();
    let mut h1 = vec![0.0; h1n];
    let mut h2 = vec![0.0; h2n];
    let mut msg = vec![0.0; nu];
    for dest in 0..k {
        for src in 0..k {
            if !layer.mask.active(dest, src) {
                continue;
            }
            let f = graph.hh[(dest, src)];
            for r in 0..h1n {
                let v = dest_part[dest * h1n + r] + src_part[src * h1n + r] + col_hh[r] * f + col_s2[r];
                h1[r] = if v > 0.0 { v } else { 0.0 };
            }
            affine(p.tensor(T::MlpW2), p.tensor(T::MlpB2), &h1, &mut h2);
            relu_inplace(&mut h2);
            affine(p.tensor(T::MlpW3), p.tensor(T::MlpB3), &h2, &mut msg);
            add_into(&mut agg[dest * nu..(dest + 1) * nu], &msg);
            if tape.is_some() {
                edges.push(EdgeRecord {
                    dest,
                    src,
                    h1: h1.clone(),
                    h2: h2.clone(),
                });
            }
        }
    }

    // GRU update of every node.
    let hn = h1n;
    let mut x_all = vec![0.0; k * d];
    let mut z_all = vec![0.0; k * hn];
    let mut r_all = vec![0.0; k * hn];
    let mut n_all = vec![0.0; k * hn];
    let mut g_new = vec![0.0; k * hn];
    let mut rh = vec![0.0; hn];
    for i in 0..k {
        let x = &mut x_all[i * d..(i + 1) * d];
        x[..nu].copy_from_slice(&agg[i * nu..(i + 1) * nu]);
        x[nu] = layer.attrs[i][0];
        x[nu + 1] = layer.attrs[i][1];
        let g = &state.g[i * hn..(i + 1) * hn];
        let z = &mut z_all[i * hn..(i + 1) * hn];
        let r = &mut r_all[i * hn..(i + 1) * hn];
        let n = &mut n_all[i * hn..(i + 1) * hn];
        affine(p.tensor(T::GruWz), p.tensor(T::GruBz), x, z);
        matvec_cols_acc(p.tensor(T::GruUz), hn, 0, g, z);
        affine(p.tensor(T::GruWr), p.tensor(T::GruBr), x, r);
        matvec_cols_acc(p.tensor(T::GruUr), hn, 0, g, r);
        for j in 0..hn {
            z[j] = sigmoid(z[j]);
            r[j] = sigmoid(r[j]);
            rh[j] = r[j] * g[j];
        }
        affine(p.tensor(T::GruWn), p.tensor(T::GruBn), x, n);
        matvec_cols_acc(p.tensor(T::GruUn), hn, 0, &rh, n);
        let gn = &mut g_new[i * hn..(i + 1) * hn];
        for j in 0..hn {
            n[j] = n[j].tanh();
            gn[j] = z[j] * g[j] + (1.0 - z[j]) * n[j];
        }
    }
    let mut u_new = vec![0.0; k * nu];
    for i in 0..k {
        affine(p.tensor(T::W2), p.tensor(T::B2), &g_new[i * hn..(i + 1) * hn], &mut u_new[i * nu..(i + 1) * nu]);
    }
    if let Some(t) = tape {
        t.u_in = std::mem::take(&mut state.u);
        t.g_in = std::mem::take(&mut state.g);
        t.edges = edges;
        t.x = x_all;
        t.z = z_all;
        t.r = r_all;
        t.n = n_all;
        t.g_out = g_new.clone();
    }
    state.u = u_new;
    state.g = g_new;
}

fn readout_forward(p: &GnnParams, u: &[f64], k: usize, tape: Option<&mut ReadoutTape>) -> Vec<f64> {
    let (nu, h1n, h2n, m) = (p.hp.n_u, p.hp.n_h1, p.hp.n_h2, p.m);
    let mut logits = vec![0.0; k * m];
    let mut r1 = vec![0.0; k * h1n];
    let mut r2 = vec![0.0; k * h2n];
    for i in 0..k {
        let a = &mut r1[i * h1n..(i + 1) * h1n];
        affine(p.tensor(T::ReadW1), p.tensor(T::ReadB1), &u[i * nu..(i + 1) * nu], a);
        relu_inplace(a);
        let b = &mut r2[i * h2n..(i + 1) * h2n];
        affine(p.tensor(T::ReadW2), p.tensor(T::ReadB2), a, b);
        relu_inplace(b);
        affine(p.tensor(T::ReadW3), p.tensor(T::ReadB3), b, &mut logits[i * m..(i + 1) * m]);
    }
    if let Some(t) = tape {
        t.u = u.to_vec();
        t.r1 = r1;
        t.r2 = r2;
    }
    logits
}

/// One GEPNet layer of message passing (`L` rounds) followed by the readout.
/// Returns the readout logits `z` (`K × M`, row per node); `state` carries over.
pub fn layer_forward(
    p: &GnnParams,
    graph: &GraphInputs,
    layer: &LayerInputs,
    state: &mut GnnState,
    tape: Option<&mut LayerTape>,
) -> Vec<f64> {
    let k = graph.k();
    match tape {
        Some(t) => {
            t.rounds = Vec::with_capacity(p.hp.rounds);
            for _ in 0..p.hp.rounds {
                let mut rt = RoundTape::default();
                round_forward(p, graph, layer, state, Some(&mut rt));
                t.rounds.push(rt);
            }
            readout_forward(p, &state.u, k, Some(&mut t.readout))
        }
        None => {
            for _ in 0..p.hp.rounds {
                round_forward(p, graph, layer, state, None);
            }
            readout_forward(p, &state.u, k, None)
        }
    }
}

/// Softmax of one node's logits.
pub fn readout_pdf(logits: &[f64]) -> SymbolPdf {
    SymbolPdf::from_log_weights(logits)
}

/// Runs all layers from the initial state with frozen per-layer inputs and
/// returns every layer's logits.
pub fn replay(p: &GnnParams, graph: &GraphInputs, layers: &[LayerInputs]) -> Vec<Vec<f64>> {
    let mut state = init_state(p, graph);
    layers
        .iter()
        .map(|l| layer_forward(p, graph, l, &mut state, None))
        .collect()
}

fn slice_mut<'a>(grad: &'a mut [f64], p: &GnnParams, id: T) -> &'a mut [f64] {
    &mut grad[p.range(id)]
}

fn readout_backward(p: &GnnParams, tape: &ReadoutTape, k: usize, dlogits: &[f64], du: &mut [f64], grad: &mut [f64]) {
    let (nu, h1n, h2n, m) = (p.hp.n_u, p.hp.n_h1, p.hp.n_h2, p.m);
    let mut d2 = vec![0.0; h2n];
    let mut d1 = vec![0.0; h1n];
    for i in 0..k {
        let dz = &dlogits[i * m..(i + 1) * m];
        let r1 = &tape.r1[i * h1n..(i + 1) * h1n];
        let r2 = &tape.r2[i * h2n..(i + 1) * h2n];
        let u = &tape.u[i * nu..(i + 1) * nu];
        outer_cols_acc(slice_mut(grad, p, T::ReadW3), h2n, 0, dz, r2);
        add_into(slice_mut(grad, p, T::ReadB3), dz);
        d2.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_cols_acc(p.tensor(T::ReadW3), h2n, 0, dz, &mut d2);
        for (dv, &a) in d2.iter_mut().zip(r2) {
            if a <= 0.0 {
                *dv = 0.0;
            }
        }
        outer_cols_acc(slice_mut(grad, p, T::ReadW2), h1n, 0, &d2, r1);
        add_into(slice_mut(grad, p, T::ReadB2), &d2);
        d1.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_cols_acc(p.tensor(T::ReadW2), h1n, 0, &d2, &mut d1);
        for (dv, &a) in d1.iter_mut().zip(r1) {
            if a <= 0.0 {
                *dv = 0.0;
            }
        }
        outer_cols_acc(slice_mut(grad, p, T::ReadW1), nu, 0, &d1, u);
        add_into(slice_mut(grad, p, T::ReadB1), &d1);
        matvec_t_cols_acc(p.tensor(T::ReadW1), nu, 0, &d1, &mut du[i * nu..(i + 1) * nu]);
    }
}

/// Reverse pass through one round. `du`, `dg` hold the gradients with respect
/// to the round's outputs on entry and with respect to its inputs on exit.
fn round_backward(p: &GnnParams, graph: &GraphInputs, tape: &RoundTape, du: &mut Vec<f64>, dg: &mut Vec<f64>, grad: &mut [f64]) {
    let k = graph.k();
    let (nu, h1n, h2n) = (p.hp.n_u, p.hp.n_h1, p.hp.n_h2);
    let hn = h1n;
    let d = nu + 2;
    let e = 2 * nu + 2;

    // u = W2 g + b2
    for i in 0..k {
        let dui = &du[i * nu..(i + 1) * nu];
        outer_cols_acc(slice_mut(grad, p, T::W2), hn, 0, dui, &tape.g_out[i * hn..(i + 1) * hn]);
        add_into(slice_mut(grad, p, T::B2), dui);
        matvec_t_cols_acc(p.tensor(T::W2), hn, 0, dui, &mut dg[i * hn..(i + 1) * hn]);
    }

    // GRU
    let mut dx_all = vec![0.0; k * d];
    let mut dg_prev = vec![0.0; k * hn];
    let mut daz = vec![0.0; hn];
    let mut dar = vec![0.0; hn];
    let mut dan = vec![0.0; hn];
    let mut drh = vec![0.0; hn];
    let mut rh = vec![0.0; hn];
    for i in 0..k {
        let g = &tape.g_in[i * hn..(i + 1) * hn];
        let x = &tape.x[i * d..(i + 1) * d];
        let z = &tape.z[i * hn..(i + 1) * hn];
        let r = &tape.r[i * hn..(i + 1) * hn];
        let n = &tape.n[i * hn..(i + 1) * hn];
        let dgo = &dg[i * hn..(i + 1) * hn];
        let dgp = &mut dg_prev[i * hn..(i + 1) * hn];
        for j in 0..hn {
            let dz = dgo[j] * (g[j] - n[j]);
            let dn = dgo[j] * (1.0 - z[j]);
            dgp[j] = dgo[j] * z[j];
            daz[j] = dz * z[j] * (1.0 - z[j]);
            dan[j] = dn * (1.0 - n[j] * n[j]);
            rh[j] = r[j] * g[j];
        }
        let dx = &mut dx_all[i * d..(i + 1) * d];
        // candidate
        outer_cols_acc(slice_mut(grad, p, T::GruWn), d, 0, &dan, x);
        add_into(slice_mut(grad, p, T::GruBn), &dan);
        outer_cols_acc(slice_mut(grad, p, T::GruUn), hn, 0, &dan, &rh);
        matvec_t_cols_acc(p.tensor(T::GruWn), d, 0, &dan, dx);
        drh.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_cols_acc(p.tensor(T::GruUn), hn, 0, &dan, &mut drh);
        for j in 0..hn {
            let dr = drh[j] * g[j];
            dgp[j] += drh[j] * r[j];
            dar[j] = dr * r[j] * (1.0 - r[j]);
        }
        // update and reset gates
        outer_cols_acc(slice_mut(grad, p, T::GruWz), d, 0, &daz, x);
        add_into(slice_mut(grad, p, T::GruBz), &daz);
        outer_cols_acc(slice_mut(grad, p, T::GruUz), hn, 0, &daz, g);
        matvec_t_cols_acc(p.tensor(T::GruWz), d, 0, &daz, dx);
        matvec_t_cols_acc(p.tensor(T::GruUz), hn, 0, &daz, dgp);
        outer_cols_acc(slice_mut(grad, p, T::GruWr), d, 0, &dar, x);
        add_into(slice_mut(grad, p, T::GruBr), &dar);
        outer_cols_acc(slice_mut(grad, p, T::GruUr), hn, 0, &dar, g);
        matvec_t_cols_acc(p.tensor(T::GruWr), d, 0, &dar, dx);
        matvec_t_cols_acc(p.tensor(T::GruUr), hn, 0, &dar, dgp);
    }

    // Edge messages. Gradients of the first layer are summed per node before
    // the outer products with the node features.
    let mut sum_dest = vec![0.0; k * h1n];
    let mut sum_src = vec![0.0; k * h1n];
    let mut sum_hh = vec![0.0; h1n];
    let mut d2 = vec![0.0; h2n];
    let mut d1 = vec![0.0; h1n];
    for rec in &tape.edges {
        let dm = &dx_all[rec.dest * d..rec.dest * d + nu];
        outer_cols_acc(slice_mut(grad, p, T::MlpW3), h2n, 0, dm, &rec.h2);
        add_into(slice_mut(grad, p, T::MlpB3), dm);
        d2.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_cols_acc(p.tensor(T::MlpW3), h2n, 0, dm, &mut d2);
        for (dv, &a) in d2.iter_mut().zip(&rec.h2) {
            if a <= 0.0 {
                *dv = 0.0;
            }
        }
        outer_cols_acc(slice_mut(grad, p, T::MlpW2), h1n, 0, &d2, &rec.h1);
        add_into(slice_mut(grad, p, T::MlpB2), &d2);
        d1.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_cols_acc(p.tensor(T::MlpW2), h1n, 0, &d2, &mut d1);
        let f = graph.hh[(rec.dest, rec.src)];
        for (r, dv) in d1.iter_mut().enumerate() {
            if rec.h1[r] <= 0.0 {
                *dv = 0.0;
            }
            sum_hh[r] += *dv * f;
        }
        add_into(&mut sum_dest[rec.dest * h1n..(rec.dest + 1) * h1n], &d1);
        add_into(&mut sum_src[rec.src * h1n..(rec.src + 1) * h1n], &d1);
    }
    let mut du_prev = vec![0.0; k * nu];
    {
        let ga1 = &mut grad[p.range(T::MlpW1)];
        for i in 0..k {
            let ui = &tape.u_in[i * nu..(i + 1) * nu];
            outer_cols_acc(ga1, e, 0, &sum_dest[i * h1n..(i + 1) * h1n], ui);
            outer_cols_acc(ga1, e, nu, &sum_src[i * h1n..(i + 1) * h1n], ui);
        }
        let mut total = vec![0.0; h1n];
        for i in 0..k {
            add_into(&mut total, &sum_dest[i * h1n..(i + 1) * h1n]);
        }
        for r in 0..h1n {
            ga1[r * e + 2 * nu] += sum_hh[r];
            ga1[r * e + 2 * nu + 1] += total[r] * graph.sigma2;
        }
        add_into(slice_mut(grad, p, T::MlpB1), &total);
    }
    let a1 = p.tensor(T::MlpW1);
    for i in 0..k {
        let out = &mut du_prev[i * nu..(i + 1) * nu];
        matvec_t_cols_acc(a1, e, 0, &sum_dest[i * h1n..(i + 1) * h1n], out);
        matvec_t_cols_acc(a1, e, nu, &sum_src[i * h1n..(i + 1) * h1n], out);
    }
    *du = du_prev;
    *dg = dg_prev;
}

/// Reverse pass over all recorded layers. `dlogits[t]` is the loss gradient
/// with respect to layer `t`'s logits (`None` when that layer's output is
/// unused). Gradients are accumulated into `grad`.
pub fn backward(p: &GnnParams, graph: &GraphInputs, tapes: &[LayerTape], dlogits: &[Option<&[f64]>], grad: &mut [f64]) {
    assert_eq!(tapes.len(), dlogits.len());
    assert_eq!(grad.len(), p.len());
    let k = graph.k();
    let (nu, hn) = (p.hp.n_u, p.hp.n_h1);
    let mut du = vec![0.0; k * nu];
    let mut dg = vec![0.0; k * hn];
    let mut started = false;
    for (tape, dl) in tapes.iter().zip(dlogits).rev() {
        if let Some(dl) = dl {
            readout_backward(p, &tape.readout, k, dl, &mut du, grad);
            started = true;
        }
        if !started {
            continue;
        }
        for rt in tape.rounds.iter().rev() {
            round_backward(p, graph, rt, &mut du, &mut dg, grad);
        }
    }
    if !started {
        return;
    }
    let gw1 = p.range(T::W1);
    let gb1 = p.range(T::B1);
    for (i, f) in graph.node_features.iter().enumerate() {
        let dui = &du[i * nu..(i + 1) * nu];
        outer_cols_acc(&mut grad[gw1.clone()], 3, 0, dui, f);
        add_into(&mut grad[gb1.clone()], dui);
    }
}
