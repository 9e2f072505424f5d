//! Dueling Q-network with hand-written backpropagation, Adam, and a binary
//! checkpoint format.
//!
//! Parameters live in one flat `Vec<f64>` laid out as
//! `W1, b1, W2, b2, Wv, bv, Wa, ba` with weights stored row-major by output
//! unit. Checkpoints are little-endian:
//!
//! ```text
//! magic "HEMSDQN\0" | version u32 | input, hidden1, hidden2, actions u32
//! | n_params u64 | params f64*n
//! | lr, beta1, beta2, eps f64 | adam_t u64 | m f64*n | v f64*n
//! | gradient_steps u64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HEMSDQN\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub actions: usize,
}

impl Architecture {
    pub fn new(input: usize, actions: usize) -> Self {
        Self {
            input,
            hidden1: 128,
            hidden2: 128,
            actions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden1 == 0 || self.hidden2 == 0 || self.actions < 2 {
            return Err(Error::Parameter(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let (i, h1, h2, a) = (self.input, self.hidden1, self.hidden2, self.actions);
        Layout {
            w1: take(h1 * i),
            b1: take(h1),
            w2: take(h2 * h1),
            b2: take(h2),
            wv: take(h2),
            bv: take(1),
            wa: take(a * h2),
            ba: take(a),
            total: off,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wv: usize,
    bv: usize,
    wa: usize,
    ba: usize,
    total: usize,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    /// State value V(s).
    pub value: f64,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuelingNetwork {
    arch: Architecture,
    layout_total: usize,
    params: Vec<f64>,
}

fn dense(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &w[j * n..(j + 1) * n];
        *o = b[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl DuelingNetwork {
    /// He-uniform initialisation for the ReLU trunk, Xavier-uniform for the heads.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let l = arch.layout();
        let mut params = vec![0.0; l.total];
        let mut fill = |off: usize, fan_in: usize, fan_out: usize, relu: bool| {
            let bound = if relu {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            for p in &mut params[off..off + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
        };
        fill(l.w1, arch.input, arch.hidden1, true);
        fill(l.w2, arch.hidden1, arch.hidden2, true);
        fill(l.wv, arch.hidden2, 1, false);
        fill(l.wa, arch.hidden2, arch.actions, false);
        Ok(Self {
            arch,
            layout_total: l.total,
            params,
        })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let total = arch.param_count();
        if params.len() != total {
            return Err(Error::Dimension {
                expected: total,
                actual: params.len(),
            });
        }
        Ok(Self {
            arch,
            layout_total: total,
            params,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout_total
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.q)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        let a = &self.arch;
        if x.len() != a.input {
            return Err(Error::Dimension {
                expected: a.input,
                actual: x.len(),
            });
        }
        let l = a.layout();
        let p = &self.params;
        let mut h1 = vec![0.0; a.hidden1];
        dense(&p[l.w1..l.b1], &p[l.b1..l.w2], x, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut h2 = vec![0.0; a.hidden2];
        dense(&p[l.w2..l.b2], &p[l.b2..l.wv], &h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut v = [0.0];
        dense(&p[l.wv..l.bv], &p[l.bv..l.wa], &h2, &mut v);
        let mut adv = vec![0.0; a.actions];
        dense(&p[l.wa..l.ba], &p[l.ba..l.total], &h2, &mut adv);
        let mean = adv.iter().sum::<f64>() / a.actions as f64;
        let q = adv.iter().map(|aj| v[0] + aj - mean).collect();
        Ok(ForwardCache {
            input: x.to_vec(),
            h1,
            h2,
            value: v[0],
            q,
        })
    }

    /// Accumulates `∂L/∂θ` into `grad` given `dq = ∂L/∂Q`.
    pub fn backward(&self, cache: &ForwardCache, dq: &[f64], grad: &mut [f64]) -> Result<()> {
        let a = &self.arch;
        if dq.len() != a.actions {
            return Err(Error::Dimension {
                expected: a.actions,
                actual: dq.len(),
            });
        }
        if grad.len() != self.layout_total {
            return Err(Error::Dimension {
                expected: self.layout_total,
                actual: grad.len(),
            });
        }
        let l = a.layout();
        let p = &self.params;
        let dv: f64 = dq.iter().sum();
        let mean_dq = dv / a.actions as f64;

        let mut dh2 = vec![0.0; a.hidden2];
        // Value head.
        grad[l.bv] += dv;
        for k in 0..a.hidden2 {
            grad[l.wv + k] += dv * cache.h2[k];
            dh2[k] += dv * p[l.wv + k];
        }
        // Advantage head.
        for j in 0..a.actions {
            let da = dq[j] - mean_dq;
            if da == 0.0 {
                continue;
            }
            grad[l.ba + j] += da;
            let row = l.wa + j * a.hidden2;
            for k in 0..a.hidden2 {
                grad[row + k] += da * cache.h2[k];
                dh2[k] += da * p[row + k];
            }
        }
        let mut dh1 = vec![0.0; a.hidden1];
        for k in 0..a.hidden2 {
            if cache.h2[k] <= 0.0 {
                continue;
            }
            let g = dh2[k];
            grad[l.b2 + k] += g;
            let row = l.w2 + k * a.hidden1;
            for i in 0..a.hidden1 {
                grad[row + i] += g * cache.h1[i];
                dh1[i] += g * p[row + i];
            }
        }
        for i in 0..a.hidden1 {
            if cache.h1[i] <= 0.0 {
                continue;
            }
            let g = dh1[i];
            grad[l.b1 + i] += g;
            let row = l.w1 + i * a.input;
            for (gw, x) in grad[row..row + a.input].iter_mut().zip(&cache.input) {
                *gw += g * x;
            }
        }
        Ok(())
    }

    /// Mean squared error between `Q(s_i, a_i)` and `targets[i]` and its gradient.
    pub fn loss_and_gradient(&self, inputs: &[&[f64]], actions: &[usize], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = inputs.len();
        if actions.len() != n || targets.len() != n || n == 0 {
            return Err(Error::Dimension {
                expected: n,
                actual: actions.len().min(targets.len()),
            });
        }
        let mut grad = vec![0.0; self.layout_total];
        let mut loss = 0.0;
        let mut dq = vec![0.0; self.arch.actions];
        for ((x, &act), &y) in inputs.iter().zip(actions).zip(targets) {
            if act >= self.arch.actions {
                return Err(Error::Dimension {
                    expected: self.arch.actions,
                    actual: act,
                });
            }
            let cache = self.forward_cached(x)?;
            let err = cache.q[act] - y;
            loss += err * err;
            dq.iter_mut().for_each(|d| *d = 0.0);
            dq[act] = 2.0 * err / n as f64;
            self.backward(&cache, &dq, &mut grad)?;
        }
        loss /= n as f64;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite loss {loss}")));
        }
        Ok((loss, grad))
    }

    /// One optimiser step on a minibatch; returns the pre-update loss.
    pub fn train_batch(&mut self, inputs: &[&[f64]], actions: &[usize], targets: &[f64], opt: &mut Adam) -> Result<f64> {
        let (loss, grad) = self.loss_and_gradient(inputs, actions, targets)?;
        opt.step(&mut self.params, &grad)?;
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite parameters after update".into()));
        }
        Ok(loss)
    }

    /// Copies every parameter from `source` (target-network synchronisation).
    pub fn copy_from(&mut self, source: &DuelingNetwork) -> Result<()> {
        if source.arch != self.arch {
            return Err(Error::Compatibility(format!(
                "cannot copy {:?} into {:?}",
                source.arch, self.arch
            )));
        }
        self.params.copy_from_slice(&source.params);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                actual: grad.len(),
            });
        }
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
        Ok(())
    }
}

/// Serialisable training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: DuelingNetwork,
    pub optimizer: Adam,
    pub gradient_steps: u64,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let a = self.network.arch;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for d in [a.input, a.hidden1, a.hidden2, a.actions] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.network.params.len() as u64).to_le_bytes())?;
        let f64s = |w: &mut W, xs: &[f64]| -> std::io::Result<()> {
            for x in xs {
                w.write_all(&x.to_le_bytes())?;
            }
            Ok(())
        };
        f64s(w, &self.network.params)?;
        let c = &self.optimizer.config;
        f64s(w, &[c.learning_rate, c.beta1, c.beta2, c.epsilon])?;
        w.write_all(&self.optimizer.t.to_le_bytes())?;
        f64s(w, &self.optimizer.m)?;
        f64s(w, &self.optimizer.v)?;
        w.write_all(&self.gradient_steps.to_le_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let arch = Architecture {
            input: r.u32()? as usize,
            hidden1: r.u32()? as usize,
            hidden2: r.u32()? as usize,
            actions: r.u32()? as usize,
        };
        arch.validate().map_err(|e| Error::Format(e.to_string()))?;
        let n = r.u64()? as usize;
        if n != arch.param_count() {
            return Err(Error::Format(format!(
                "parameter count {n} does not match architecture ({})",
                arch.param_count()
            )));
        }
        let params = r.f64s(n)?;
        let config = AdamConfig {
            learning_rate: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
        };
        let t = r.u64()?;
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        let gradient_steps = r.u64()?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            network: DuelingNetwork::from_params(arch, params)?,
            optimizer: Adam { config, t, m, v },
            gradient_steps,
        })
    }

    /// Loads a checkpoint and checks it fits the expected network shape.
    pub fn load_for(path: impl AsRef<Path>, expected: Architecture) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.network.arch != expected {
            return Err(Error::Compatibility(format!(
                "checkpoint network {:?} does not match environment {:?}",
                ck.network.arch, expected
            )));
        }
        Ok(ck)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.checked_mul(8).is_none_or(|b| self.pos + b > self.bytes.len()) {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}
