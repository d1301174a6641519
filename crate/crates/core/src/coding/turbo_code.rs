use serde::{Deserialize, Serialize};

use super::interleaver::Interleaver;
use super::trellis::{bcjr, EndState, Trellis};
use super::SisoOutput;
use crate::error::{Error, Result};

/// Parallel-concatenated code with two identical recursive systematic
/// constituents. Parities are alternately punctured (rate 1/2 before tails).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurboCodeSpec {
    #[serde(default = "default_feedback")]
    pub feedback: u32,
    #[serde(default = "default_feedforward")]
    pub feedforward: u32,
    #[serde(default = "default_k")]
    pub constraint_length: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub interleaver_seed: u64,
}

fn default_feedback() -> u32 {
    0o13
}
fn default_feedforward() -> u32 {
    0o15
}
fn default_k() -> usize {
    4
}
fn default_iterations() -> usize {
    10
}

impl Default for TurboCodeSpec {
    fn default() -> Self {
        Self {
            feedback: default_feedback(),
            feedforward: default_feedforward(),
            constraint_length: default_k(),
            iterations: default_iterations(),
            interleaver_seed: 0,
        }
    }
}

/// Coded layout: `[s_0, p_0, s_1, p_1, ...]` for the message (`p_t` from
/// constituent 1 at even `t`, constituent 2 at odd `t`), followed by the
/// `(u, p)` tail pairs of constituent 1 and then constituent 2.
#[derive(Clone, Debug)]
pub struct TurboCode {
    spec: TurboCodeSpec,
    trellis: Trellis,
    interleaver: Interleaver,
    n_b: usize,
}

impl TurboCode {
    pub fn new(spec: TurboCodeSpec, n_b: usize) -> Result<Self> {
        let m = spec.constraint_length.saturating_sub(1);
        if !(1..=12).contains(&m)
            || spec.feedback >> spec.constraint_length != 0
            || spec.feedforward >> spec.constraint_length != 0
            || spec.feedback >> m != 1
        {
            return Err(Error::InvalidConfig("bad recursive constituent code".into()));
        }
        if n_b == 0 || spec.iterations == 0 {
            return Err(Error::InvalidConfig(
                "turbo code needs a positive length and iteration count".into(),
            ));
        }
        let trellis = Trellis::recursive_systematic(spec.feedback, spec.feedforward, spec.constraint_length);
        let interleaver = Interleaver::new(n_b, spec.interleaver_seed);
        Ok(Self {
            spec,
            trellis,
            interleaver,
            n_b,
        })
    }

    pub fn message_len(&self) -> usize {
        self.n_b
    }

    fn memory(&self) -> usize {
        self.spec.constraint_length - 1
    }

    pub fn coded_len(&self) -> usize {
        2 * self.n_b + 4 * self.memory()
    }

    pub fn interleaver(&self) -> &Interleaver {
        &self.interleaver
    }

    /// Returns `(systematic, parity)` including the terminating tail.
    fn rsc_encode(&self, message: &[u8]) -> (Vec<u8>, Vec<u8>) {
        let m = self.memory();
        let mut s = 0usize;
        let mut sys = Vec::with_capacity(message.len() + m);
        let mut par = Vec::with_capacity(message.len() + m);
        for &b in message {
            let u = (b & 1) as usize;
            sys.push(u as u8);
            par.push(self.trellis.output_bit(s, u, 1));
            s = self.trellis.next[s][u];
        }
        for _ in 0..m {
            // Choose the input that shifts a zero into the register.
            let u = if self.trellis.next[s][0] == s >> 1 { 0 } else { 1 };
            sys.push(u as u8);
            par.push(self.trellis.output_bit(s, u, 1));
            s = self.trellis.next[s][u];
        }
        debug_assert_eq!(s, 0);
        (sys, par)
    }

    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>> {
        if message.len() != self.n_b {
            return Err(Error::InvalidLength {
                expected: self.n_b,
                actual: message.len(),
            });
        }
        let (s1, p1) = self.rsc_encode(message);
        let (s2, p2) = self.rsc_encode(&self.interleaver.interleave(message));
        let mut out = Vec::with_capacity(self.coded_len());
        for t in 0..self.n_b {
            out.push(s1[t]);
            out.push(if t % 2 == 0 { p1[t] } else { p2[t] });
        }
        for (s, p) in [(&s1, &p1), (&s2, &p2)] {
            for t in self.n_b..self.n_b + self.memory() {
                out.push(s[t]);
                out.push(p[t]);
            }
        }
        Ok(out)
    }

    /// Iterative log-MAP decoding with extrinsic exchange between the
    /// constituents. The coded extrinsic is taken from the final iteration.
    pub fn decode(&self, channel: &[f64]) -> Result<SisoOutput> {
        if channel.len() != self.coded_len() {
            return Err(Error::InvalidLength {
                expected: self.coded_len(),
                actual: channel.len(),
            });
        }
        let n = self.n_b;
        let m = self.memory();
        let steps = n + m;
        let sys: Vec<f64> = (0..n).map(|t| channel[2 * t]).collect();
        let tail1 = 2 * n;
        let tail2 = 2 * n + 2 * m;

        let mut lc1 = vec![vec![0.0; 2]; steps];
        let mut lc2 = vec![vec![0.0; 2]; steps];
        let sys_i = self.interleaver.interleave(&sys);
        for t in 0..n {
            lc1[t][0] = sys[t];
            lc2[t][0] = sys_i[t];
            if t % 2 == 0 {
                lc1[t][1] = channel[2 * t + 1];
            } else {
                lc2[t][1] = channel[2 * t + 1];
            }
        }
        for j in 0..m {
            lc1[n + j] = vec![channel[tail1 + 2 * j], channel[tail1 + 2 * j + 1]];
            lc2[n + j] = vec![channel[tail2 + 2 * j], channel[tail2 + 2 * j + 1]];
        }

        let mut le21 = vec![0.0; n];
        let mut la1 = vec![0.0; steps];
        let mut la2 = vec![0.0; steps];
        let mut out1 = None;
        let mut out2 = None;
        let mut app = vec![0.0; n];
        for _ in 0..self.spec.iterations {
            la1[..n].copy_from_slice(&le21);
            let o1 = bcjr(&self.trellis, &la1, &lc1, EndState::Zero);
            let le12: Vec<f64> = (0..n).map(|t| o1.input_app[t] - la1[t] - sys[t]).collect();
            la2[..n].copy_from_slice(&self.interleaver.interleave(&le12));
            let o2 = bcjr(&self.trellis, &la2, &lc2, EndState::Zero);
            let le21_i: Vec<f64> = (0..n).map(|t| o2.input_app[t] - la2[t] - sys_i[t]).collect();
            le21 = self.interleaver.deinterleave(&le21_i);
            app = self.interleaver.deinterleave(&o2.input_app[..n]);
            out1 = Some(o1);
            out2 = Some(o2);
        }
        let (o1, o2) = (out1.unwrap(), out2.unwrap());

        let mut ext = vec![0.0; self.coded_len()];
        for t in 0..n {
            ext[2 * t] = app[t] - sys[t];
            ext[2 * t + 1] = if t % 2 == 0 {
                o1.output_app[t][1] - lc1[t][1]
            } else {
                o2.output_app[t][1] - lc2[t][1]
            };
        }
        for j in 0..m {
            for b in 0..2 {
                ext[tail1 + 2 * j + b] = o1.output_app[n + j][b] - lc1[n + j][b];
                ext[tail2 + 2 * j + b] = o2.output_app[n + j][b] - lc2[n + j][b];
            }
        }
        Ok(SisoOutput {
            message_app: app,
            coded_extrinsic: ext,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_termination() {
        let code = TurboCode::new(TurboCodeSpec::default(), 32).unwrap();
        assert_eq!(code.coded_len(), 64 + 12);
        let msg: Vec<u8> = (0..32).map(|i| (i % 3 == 0) as u8).collect();
        let cw = code.encode(&msg).unwrap();
        for t in 0..32 {
            assert_eq!(cw[2 * t], msg[t]);
        }
        assert!(code.encode(&[0; 32]).unwrap().iter().all(|&b| b == 0));
    }

    #[test]
    fn noiseless_decode() {
        let code = TurboCode::new(TurboCodeSpec::default(), 40).unwrap();
        let msg: Vec<u8> = (0..40).map(|i| ((i * 5 + 1) % 7 % 2) as u8).collect();
        let cw = code.encode(&msg).unwrap();
        let llr: Vec<f64> = cw.iter().map(|&b| if b == 1 { 2.0 } else { -2.0 }).collect();
        let out = code.decode(&llr).unwrap();
        let hard: Vec<u8> = out.message_app.iter().map(|&l| (l > 0.0) as u8).collect();
        assert_eq!(hard, msg);
        for (e, &b) in out.coded_extrinsic.iter().zip(&cw) {
            assert_eq!(*e > 0.0, b == 1);
        }
    }
}
