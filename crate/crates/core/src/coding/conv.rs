use serde::{Deserialize, Serialize};

use super::trellis::{bcjr, EndState, Trellis};
use super::SisoOutput;
use crate::error::{Error, Result};

/// Puncturing applied to a rate-1/2 mother code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Puncture {
    None,
    /// Period-5 pattern keeping `[1,1,0,1,0]` of stream 0 and `[1,0,1,0,1]`
    /// of stream 1: 6 coded bits per 5 inputs.
    Rate5_6,
}

impl Puncture {
    fn keep(self, step: usize, stream: usize) -> bool {
        const A: [bool; 5] = [true, true, false, true, false];
        const B: [bool; 5] = [true, false, true, false, true];
        match self {
            Puncture::None => true,
            Puncture::Rate5_6 => {
                if stream == 0 {
                    A[step % 5]
                } else {
                    B[step % 5]
                }
            }
        }
    }
}

/// Terminated feed-forward convolutional code description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvCodeSpec {
    /// Generator polynomials (MSB taps the current input), e.g. `[0o133, 0o171]`.
    pub generators: Vec<u32>,
    pub constraint_length: usize,
    #[serde(default = "default_puncture")]
    pub puncture: Puncture,
}

fn default_puncture() -> Puncture {
    Puncture::None
}

impl ConvCodeSpec {
    /// The standard 64-state `[133, 171]` code.
    pub fn standard(puncture: Puncture) -> Self {
        Self {
            generators: vec![0o133, 0o171],
            constraint_length: 7,
            puncture,
        }
    }
}

/// Encoder/decoder for a zero-tail terminated convolutional code.
#[derive(Clone, Debug)]
pub struct ConvCode {
    spec: ConvCodeSpec,
    trellis: Trellis,
    n_b: usize,
    /// `(step, stream)` for each transmitted coded bit.
    positions: Vec<(usize, usize)>,
}

impl ConvCode {
    pub fn new(spec: ConvCodeSpec, n_b: usize) -> Result<Self> {
        if !(2..=16).contains(&spec.constraint_length) {
            return Err(Error::InvalidConfig(format!(
                "constraint length {} out of range",
                spec.constraint_length
            )));
        }
        if spec.generators.is_empty()
            || spec.generators.iter().any(|&g| g == 0 || g >> spec.constraint_length != 0)
        {
            return Err(Error::InvalidConfig("bad generator polynomial".into()));
        }
        if spec.puncture != Puncture::None && spec.generators.len() != 2 {
            return Err(Error::InvalidConfig("puncturing needs a rate-1/2 mother code".into()));
        }
        if n_b == 0 {
            return Err(Error::InvalidConfig("message length must be positive".into()));
        }
        let trellis = Trellis::feedforward(&spec.generators, spec.constraint_length);
        let steps = n_b + spec.constraint_length - 1;
        let mut positions = Vec::new();
        for t in 0..steps {
            for o in 0..spec.generators.len() {
                if spec.puncture.keep(t, o) {
                    positions.push((t, o));
                }
            }
        }
        Ok(Self {
            spec,
            trellis,
            n_b,
            positions,
        })
    }

    pub fn spec(&self) -> &ConvCodeSpec {
        &self.spec
    }

    pub fn trellis(&self) -> &Trellis {
        &self.trellis
    }

    pub fn message_len(&self) -> usize {
        self.n_b
    }

    pub fn coded_len(&self) -> usize {
        self.positions.len()
    }

    fn steps(&self) -> usize {
        self.n_b + self.spec.constraint_length - 1
    }

    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>> {
        if message.len() != self.n_b {
            return Err(Error::InvalidLength {
                expected: self.n_b,
                actual: message.len(),
            });
        }
        let mut streams = Vec::with_capacity(self.steps());
        let mut s = 0usize;
        for t in 0..self.steps() {
            let u = if t < self.n_b { (message[t] & 1) as usize } else { 0 };
            streams.push(self.trellis.out[s][u]);
            s = self.trellis.next[s][u];
        }
        debug_assert_eq!(s, 0);
        Ok(self
            .positions
            .iter()
            .map(|&(t, o)| ((streams[t] >> o) & 1) as u8)
            .collect())
    }

    /// Log-MAP decoding. Punctured positions get zero channel LLR. The returned
    /// coded extrinsic covers only transmitted positions.
    pub fn decode(&self, channel: &[f64], message_prior: Option<&[f64]>) -> Result<SisoOutput> {
        if channel.len() != self.coded_len() {
            return Err(Error::InvalidLength {
                expected: self.coded_len(),
                actual: channel.len(),
            });
        }
        let steps = self.steps();
        let mut lc = vec![vec![0.0; self.spec.generators.len()]; steps];
        for (&(t, o), &l) in self.positions.iter().zip(channel) {
            lc[t][o] = l;
        }
        let mut la = vec![0.0; steps];
        if let Some(p) = message_prior {
            if p.len() != self.n_b {
                return Err(Error::InvalidLength {
                    expected: self.n_b,
                    actual: p.len(),
                });
            }
            la[..self.n_b].copy_from_slice(p);
        }
        let out = bcjr(&self.trellis, &la, &lc, EndState::Zero);
        let coded_extrinsic = self
            .positions
            .iter()
            .zip(channel)
            .map(|(&(t, o), &l)| out.output_app[t][o] - l)
            .collect();
        let mut message_app = out.input_app;
        message_app.truncate(self.n_b);
        Ok(SisoOutput {
            message_app,
            coded_extrinsic,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_response_matches_generators() {
        let code = ConvCode::new(ConvCodeSpec::standard(Puncture::None), 1).unwrap();
        let c = code.encode(&[1]).unwrap();
        // A single 1 followed by six zeros reads out the generator taps MSB first.
        let g0: Vec<u8> = (0..7).map(|i| ((0o133u32 >> (6 - i)) & 1) as u8).collect();
        let g1: Vec<u8> = (0..7).map(|i| ((0o171u32 >> (6 - i)) & 1) as u8).collect();
        for t in 0..7 {
            assert_eq!(c[2 * t], g0[t]);
            assert_eq!(c[2 * t + 1], g1[t]);
        }
    }

    #[test]
    fn lengths() {
        let code = ConvCode::new(ConvCodeSpec::standard(Puncture::None), 128).unwrap();
        assert_eq!(code.coded_len(), 2 * 134);
        let p = ConvCode::new(ConvCodeSpec::standard(Puncture::Rate5_6), 130).unwrap();
        // 136 steps: 27 full periods (6 bits each) plus one step keeping both streams.
        assert_eq!(p.coded_len(), 27 * 6 + 2);
    }

    #[test]
    fn zero_message_is_zero_codeword() {
        let code = ConvCode::new(ConvCodeSpec::standard(Puncture::Rate5_6), 40).unwrap();
        assert!(code.encode(&[0; 40]).unwrap().iter().all(|&b| b == 0));
    }

    #[test]
    fn noiseless_decoding_recovers_message() {
        for p in [Puncture::None, Puncture::Rate5_6] {
            let code = ConvCode::new(ConvCodeSpec::standard(p), 50).unwrap();
            let msg: Vec<u8> = (0..50).map(|i| ((i * 7 + 3) % 5 % 2) as u8).collect();
            let cw = code.encode(&msg).unwrap();
            let llr: Vec<f64> = cw.iter().map(|&b| if b == 1 { 4.0 } else { -4.0 }).collect();
            let out = code.decode(&llr, None).unwrap();
            let hard: Vec<u8> = out.message_app.iter().map(|&l| (l > 0.0) as u8).collect();
            assert_eq!(hard, msg);
        }
    }

    #[test]
    fn rejects_bad_generators() {
        let spec = ConvCodeSpec {
            generators: vec![0o400],
            constraint_length: 7,
            puncture: Puncture::None,
        };
        assert!(ConvCode::new(spec, 4).is_err());
    }
}
