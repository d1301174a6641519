use crate::modem::log_sum_exp;

/// Binary-input trellis: `next[s][u]` and packed output bits `out[s][u]`
/// (bit `o` of the word is output stream `o`).
#[derive(Clone, Debug, PartialEq)]
pub struct Trellis {
    pub num_states: usize,
    pub num_outputs: usize,
    pub next: Vec<[usize; 2]>,
    pub out: Vec<[u32; 2]>,
}

fn parity(x: u32) -> u32 {
    x.count_ones() & 1
}

impl Trellis {
    /// Non-recursive code with `generators` (each `constraint_len` bits wide,
    /// MSB tapping the current input).
    pub fn feedforward(generators: &[u32], constraint_len: usize) -> Self {
        let m = constraint_len - 1;
        let num_states = 1 << m;
        let mut next = Vec::with_capacity(num_states);
        let mut out = Vec::with_capacity(num_states);
        for s in 0..num_states {
            let mut n = [0; 2];
            let mut o = [0; 2];
            for u in 0..2u32 {
                let reg = (u << m) | s as u32;
                n[u as usize] = (reg >> 1) as usize;
                o[u as usize] = generators
                    .iter()
                    .enumerate()
                    .fold(0, |acc, (i, &g)| acc | (parity(reg & g) << i));
            }
            next.push(n);
            out.push(o);
        }
        Self {
            num_states,
            num_outputs: generators.len(),
            next,
            out,
        }
    }

    /// Recursive systematic code: output 0 is the systematic bit, output 1 the
    /// parity of `feedforward`; `feedback` closes the loop.
    pub fn recursive_systematic(feedback: u32, feedforward: u32, constraint_len: usize) -> Self {
        let m = constraint_len - 1;
        let num_states = 1 << m;
        let mut next = Vec::with_capacity(num_states);
        let mut out = Vec::with_capacity(num_states);
        for s in 0..num_states {
            let mut n = [0; 2];
            let mut o = [0; 2];
            for u in 0..2u32 {
                let fb = parity(s as u32 & feedback & ((1 << m) - 1));
                let a = u ^ fb;
                let reg = (a << m) | s as u32;
                n[u as usize] = (reg >> 1) as usize;
                o[u as usize] = u | (parity(reg & feedforward) << 1);
            }
            next.push(n);
            out.push(o);
        }
        Self {
            num_states,
            num_outputs: 2,
            next,
            out,
        }
    }

    pub fn output_bit(&self, state: usize, input: usize, stream: usize) -> u8 {
        ((self.out[state][input] >> stream) & 1) as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EndState {
    Zero,
    Free,
}

/// A-posteriori LLRs from one forward/backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BcjrOutput {
    /// Per step, LLR of the input bit.
    pub input_app: Vec<f64>,
    /// Per step and output stream, LLR of the coded bit.
    pub output_app: Vec<Vec<f64>>,
}

/// Exact log-MAP forward/backward recursion (Jacobian logarithm, no max-log
/// approximation) over `input_prior.len()` trellis steps starting in state 0.
///
/// `channel[t][o]` is the LLR of output stream `o` at step `t`.
pub fn bcjr(trellis: &Trellis, input_prior: &[f64], channel: &[Vec<f64>], end: EndState) -> BcjrOutput {
    let steps = input_prior.len();
    debug_assert_eq!(channel.len(), steps);
    let ns = trellis.num_states;
    let neg = f64::NEG_INFINITY;

    let gamma = |t: usize, s: usize, u: usize| -> f64 {
        let mut g = if u == 1 { 0.5 * input_prior[t] } else { -0.5 * input_prior[t] };
        let word = trellis.out[s][u];
        for (o, &l) in channel[t].iter().enumerate() {
            g += if (word >> o) & 1 == 1 { 0.5 * l } else { -0.5 * l };
        }
        g
    };

    let mut alpha = vec![vec![neg; ns]; steps + 1];
    alpha[0][0] = 0.0;
    for t in 0..steps {
        let (cur, nxt) = alpha.split_at_mut(t + 1);
        let cur = &cur[t];
        let nxt = &mut nxt[0];
        for s in 0..ns {
            if cur[s] == neg {
                continue;
            }
            for u in 0..2 {
                let s2 = trellis.next[s][u];
                let v = cur[s] + gamma(t, s, u);
                nxt[s2] = jacobian_log(nxt[s2], v);
            }
        }
        let mx = nxt.iter().cloned().fold(neg, f64::max);
        for v in nxt.iter_mut() {
            *v -= mx;
        }
    }

    let mut beta = vec![vec![neg; ns]; steps + 1];
    match end {
        EndState::Zero => beta[steps][0] = 0.0,
        EndState::Free => beta[steps].iter_mut().for_each(|b| *b = 0.0),
    }
    for t in (0..steps).rev() {
        let mut b = vec![neg; ns];
        for (s, bs) in b.iter_mut().enumerate() {
            for u in 0..2 {
                let s2 = trellis.next[s][u];
                if beta[t + 1][s2] == neg {
                    continue;
                }
                *bs = jacobian_log(*bs, beta[t + 1][s2] + gamma(t, s, u));
            }
        }
        let mx = b.iter().cloned().fold(neg, f64::max);
        for v in b.iter_mut() {
            *v -= mx;
        }
        beta[t] = b;
    }

    let no = trellis.num_outputs;
    let mut input_app = Vec::with_capacity(steps);
    let mut output_app = Vec::with_capacity(steps);
    let mut in_terms: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut out_terms: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; no];
    for t in 0..steps {
        in_terms.iter_mut().for_each(Vec::clear);
        out_terms.iter_mut().for_each(|p| p.iter_mut().for_each(Vec::clear));
        for s in 0..ns {
            if alpha[t][s] == neg {
                continue;
            }
            for u in 0..2 {
                let s2 = trellis.next[s][u];
                if beta[t + 1][s2] == neg {
                    continue;
                }
                let v = alpha[t][s] + gamma(t, s, u) + beta[t + 1][s2];
                in_terms[u].push(v);
                let word = trellis.out[s][u];
                for (o, terms) in out_terms.iter_mut().enumerate() {
                    terms[((word >> o) & 1) as usize].push(v);
                }
            }
        }
        input_app.push(log_sum_exp(&in_terms[1]) - log_sum_exp(&in_terms[0]));
        output_app.push(
            out_terms
                .iter()
                .map(|p| log_sum_exp(&p[1]) - log_sum_exp(&p[0]))
                .collect(),
        );
    }
    BcjrOutput {
        input_app,
        output_app,
    }
}

/// `log(e^a + e^b)` computed as `max(a, b) + log(1 + e^{-|a-b|})`.
fn jacobian_log(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}
