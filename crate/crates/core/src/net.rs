//! Policy/value network: three SAME-padded convolutions, a shared dense trunk
//! (`fc1`), a policy head (`fc2`) and a value head (`fc3`). An optional
//! decoder mirrors the encoder with transposed convolutions and reconstructs
//! the input stack.

use std::hash::{Hash, Hasher};

use ndgrad::{ParamSet, Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{FRAME_SIDE, STACK_DEPTH};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_side: usize,
    pub input_depth: usize,
    pub convs: [ConvSpec; 3],
    pub fc_width: usize,
    pub num_actions: usize,
}

impl NetConfig {
    pub fn standard(num_actions: usize) -> Self {
        Self {
            input_side: FRAME_SIDE,
            input_depth: STACK_DEPTH,
            convs: [
                ConvSpec { filters: 16, kernel: 8, stride: 4 },
                ConvSpec { filters: 32, kernel: 4, stride: 2 },
                ConvSpec { filters: 32, kernel: 3, stride: 1 },
            ],
            fc_width: 256,
            num_actions,
        }
    }

    /// Side lengths after each convolution.
    pub fn sides(&self) -> [usize; 4] {
        let mut s = [self.input_side; 4];
        for (i, c) in self.convs.iter().enumerate() {
            s[i + 1] = s[i].div_ceil(c.stride);
        }
        s
    }

    pub fn trunk_inputs(&self) -> usize {
        let s = self.sides()[3];
        s * s * self.convs[2].filters
    }

    /// The decoder only reproduces the input size when every stride divides evenly.
    pub fn decoder_fits(&self) -> bool {
        let s = self.sides();
        (0..3).all(|i| s[i + 1] * self.convs[i].stride == s[i])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("network: {m}")));
        if self.input_side == 0 || self.input_depth == 0 || self.fc_width == 0 {
            return bad("sizes must be positive");
        }
        if self.num_actions < 2 {
            return bad("at least two actions");
        }
        let sides = self.sides();
        for (i, c) in self.convs.iter().enumerate() {
            if c.filters == 0 || c.stride == 0 || c.kernel == 0 || c.kernel > sides[i] {
                return bad(&format!("conv{} {:?} does not fit a {}-pixel input", i + 1, c, sides[i]));
            }
        }
        Ok(())
    }

    /// Block names and shapes; encoder first, decoder blocks after when requested.
    pub fn layout(&self, with_decoder: bool) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = self.input_depth;
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{}/w", i + 1), vec![c.kernel, c.kernel, cin, c.filters]));
            out.push((format!("conv{}/b", i + 1), vec![c.filters]));
            cin = c.filters;
        }
        let flat = self.trunk_inputs();
        out.push(("fc1/w".into(), vec![flat, self.fc_width]));
        out.push(("fc1/b".into(), vec![self.fc_width]));
        out.push(("fc2/w".into(), vec![self.fc_width, self.num_actions]));
        out.push(("fc2/b".into(), vec![self.num_actions]));
        out.push(("fc3/w".into(), vec![self.fc_width, 1]));
        out.push(("fc3/b".into(), vec![1]));
        if with_decoder {
            out.push(("dec_fc/w".into(), vec![self.fc_width, flat]));
            out.push(("dec_fc/b".into(), vec![flat]));
            for i in (0..3).rev() {
                let c = self.convs[i];
                let out_c = if i == 0 { self.input_depth } else { self.convs[i - 1].filters };
                out.push((format!("deconv{}/w", i + 1), vec![c.kernel, c.kernel, out_c, c.filters]));
                out.push((format!("deconv{}/b", i + 1), vec![out_c]));
            }
        }
        out
    }
}

pub fn is_decoder_block(name: &str) -> bool {
    name.starts_with("dec")
}

pub fn is_output_block(name: &str) -> bool {
    name.starts_with("fc2/") || name.starts_with("fc3/")
}

/// Uniform `±1/√fan_in` for weights, zero for biases. Each block draws from its
/// own stream keyed by `(seed, name)`, so adding or removing blocks never
/// changes the others.
pub fn init_block<T: Real>(seed: u64, name: &str, shape: &[usize]) -> Tensor<T> {
    if name.ends_with("/b") {
        return Tensor::zeros(shape);
    }
    let fan_in = if name.starts_with("deconv") {
        // transposed kernels are [kh, kw, out, in]; each output sums over in·kh·kw / stride²
        shape[0] * shape[1] * shape[3]
    } else {
        shape[..shape.len() - 1].iter().product()
    };
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
}

fn name_hash(name: &str) -> u64 {
    // FNV is stable across releases, unlike the std hasher
    struct Fnv(u64);
    impl Hasher for Fnv {
        fn finish(&self) -> u64 {
            self.0
        }
        fn write(&mut self, bytes: &[u8]) {
            for &b in bytes {
                self.0 = (self.0 ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
        }
    }
    let mut h = Fnv(0xcbf2_9ce4_8422_2325);
    name.hash(&mut h);
    h.finish()
}

#[derive(Clone, Debug)]
pub struct PolicyValueNet {
    config: NetConfig,
}

/// Handles into the tape for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct NetOutput {
    /// `[n, actions]`
    pub logits: Var,
    /// `[n]`
    pub value: Var,
    /// `[n, side, side, depth]` when the decoder ran.
    pub reconstruction: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Inference<T> {
    pub logits: Vec<T>,
    pub values: Vec<T>,
    pub reconstruction: Option<Tensor<T>>,
}

impl PolicyValueNet {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn num_actions(&self) -> usize {
        self.config.num_actions
    }

    pub fn init<T: Real>(&self, seed: u64, with_decoder: bool) -> Result<ParamSet<T>> {
        if with_decoder && !self.config.decoder_fits() {
            return Err(Error::Config("decoder needs input sides divisible by every stride".into()));
        }
        let mut p = ParamSet::new();
        for (name, shape) in self.config.layout(with_decoder) {
            let t = init_block(seed, &name, &shape);
            p.insert(name, t)?;
        }
        Ok(p)
    }

    /// Records a forward pass with trainable parameter leaves.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var, decode: bool) -> Result<NetOutput> {
        let leaves: Vec<Var> = (0..params.len()).map(|i| tape.param(params, i)).collect();
        self.forward_with(tape, params, &leaves, x, decode)
    }

    /// Forward pass with parameters as constants; nothing is kept for a backward sweep.
    /// Returns flattened `[n, actions]` logits and `[n]` values.
    pub fn infer<T: Real>(&self, params: &ParamSet<T>, batch: Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
        let inf = self.infer_full(params, batch, false)?;
        Ok((inf.logits, inf.values))
    }

    pub fn infer_full<T: Real>(&self, params: &ParamSet<T>, batch: Tensor<T>, decode: bool) -> Result<Inference<T>> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = params.iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let x = tape.constant(batch);
        let out = self.forward_with(&mut tape, params, &leaves, x, decode)?;
        Ok(Inference {
            logits: tape.value(out.logits).data().to_vec(),
            values: tape.value(out.value).data().to_vec(),
            reconstruction: out.reconstruction.map(|r| tape.value(r).clone()),
        })
    }

    fn forward_with<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        leaves: &[Var],
        x: Var,
        decode: bool,
    ) -> Result<NetOutput> {
        let c = &self.config;
        let leaf = |name: &str| -> Result<Var> { Ok(leaves[params.id(name)?]) };
        let shape = tape.value(x).shape().to_vec();
        let n = shape[0];
        if shape[1..] != [c.input_side, c.input_side, c.input_depth] {
            return Err(Error::Config(format!(
                "network expects [n, {s}, {s}, {d}] input, got {shape:?}",
                s = c.input_side,
                d = c.input_depth
            )));
        }

        let mut h = x;
        for (i, spec) in c.convs.iter().enumerate() {
            let w = leaf(&format!("conv{}/w", i + 1))?;
            let b = leaf(&format!("conv{}/b", i + 1))?;
            h = tape.conv2d(h, w, Some(b), spec.stride)?;
            h = tape.relu(h);
        }
        let trunk = tape.dense(h, leaf("fc1/w")?, Some(leaf("fc1/b")?))?;
        let trunk = tape.relu(trunk);
        let logits = tape.dense(trunk, leaf("fc2/w")?, Some(leaf("fc2/b")?))?;
        let value = tape.dense(trunk, leaf("fc3/w")?, Some(leaf("fc3/b")?))?;
        let value = tape.reshape(value, &[n])?;

        let reconstruction = if decode {
            if !params.contains("dec_fc/w") {
                return Err(Error::Config("reconstruction requested but the parameters carry no decoder".into()));
            }
            let sides = c.sides();
            let d = tape.dense(trunk, leaf("dec_fc/w")?, Some(leaf("dec_fc/b")?))?;
            let d = tape.relu(d);
            let mut d = tape.reshape(d, &[n, sides[3], sides[3], c.convs[2].filters])?;
            for i in (0..3).rev() {
                let w = leaf(&format!("deconv{}/w", i + 1))?;
                let b = leaf(&format!("deconv{}/b", i + 1))?;
                d = tape.conv_transpose(d, w, Some(b), c.convs[i].stride)?;
                if i > 0 {
                    d = tape.relu(d);
                }
            }
            Some(d)
        } else {
            None
        };
        Ok(NetOutput { logits, value, reconstruction })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_shapes() {
        let cfg = NetConfig::standard(4);
        assert_eq!(cfg.sides(), [88, 22, 11, 11]);
        assert!(cfg.decoder_fits());
        let net = PolicyValueNet::new(cfg).unwrap();
        let p = net.init::<f32>(7, true).unwrap();
        let mut tape = Tape::for_params(&p);
        let x = tape.constant(Tensor::full(&[2, 88, 88, 4], 0.5));
        let out = net.forward(&mut tape, &p, x, true).unwrap();
        assert_eq!(tape.value(out.logits).shape(), &[2, 4]);
        assert_eq!(tape.value(out.value).shape(), &[2]);
        assert_eq!(tape.value(out.reconstruction.unwrap()).shape(), &[2, 88, 88, 4]);
    }

    #[test]
    fn init_is_per_block_deterministic() {
        let net = PolicyValueNet::new(NetConfig::standard(3)).unwrap();
        let a = net.init::<f32>(1, false).unwrap();
        let b = net.init::<f32>(1, true).unwrap();
        for (name, t) in a.iter() {
            assert_eq!(t, b.by_name(name).unwrap());
        }
        let c = net.init::<f32>(2, false).unwrap();
        assert_ne!(a.by_name("conv1/w").unwrap(), c.by_name("conv1/w").unwrap());
    }

    #[test]
    fn infer_matches_recorded_forward() {
        let net = PolicyValueNet::new(NetConfig::standard(3)).unwrap();
        let p = net.init::<f64>(3, false).unwrap();
        let x = Tensor::from_fn(&[1, 88, 88, 4], |i| (i % 13) as f64 / 13.0);
        let (logits, value) = net.infer(&p, x.clone()).unwrap();
        let mut tape = Tape::for_params(&p);
        let xv = tape.constant(x);
        let out = net.forward(&mut tape, &p, xv, false).unwrap();
        assert_eq!(tape.value(out.logits).data(), logits.as_slice());
        assert_eq!(tape.value(out.value).data(), value.as_slice());
    }
}
