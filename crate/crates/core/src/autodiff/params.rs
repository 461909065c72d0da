use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Scalar;
use crate::error::{CoreError, Result};

/// A named trainable tensor with its gradient and Adam state.
#[derive(Clone, Debug)]
pub struct ParamTensor<F> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<F>,
    pub grad: Vec<F>,
    pub adam_m: Vec<F>,
    pub adam_v: Vec<F>,
    pub steps: u64,
}

impl<F: Scalar> ParamTensor<F> {
    pub fn zeros(name: &str, rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        ParamTensor {
            name: name.to_string(),
            rows,
            cols,
            values: vec![F::zero(); n],
            grad: vec![F::zero(); n],
            adam_m: vec![F::zero(); n],
            adam_v: vec![F::zero(); n],
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn accumulate_grad(&mut self, g: &[F]) {
        debug_assert_eq!(g.len(), self.grad.len());
        for (d, &s) in self.grad.iter_mut().zip(g) {
            *d += s;
        }
    }

    /// Uniform(-a, a) with a = sqrt(1 / fan_in): the default for linear maps.
    pub fn scaled_uniform(name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut t = Self::zeros(name, rows, cols);
        let a = (1.0 / cols as f64).sqrt();
        for v in t.values.iter_mut() {
            *v = F::from_f64(rng.gen_range(-a..a));
        }
        t
    }

    /// Row-orthogonal init for recurrent weights: each `block` x cols chunk of
    /// rows (cols == block) is orthonormalized by modified Gram-Schmidt.
    pub fn orthogonal_blocks(name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        assert_eq!(rows % cols, 0, "orthogonal_blocks: rows must tile by cols");
        let mut t = Self::zeros(name, rows, cols);
        for block in 0..rows / cols {
            let mut m = vec![0.0f64; cols * cols];
            for v in m.iter_mut() {
                // Box-Muller, good enough for init.
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                *v = (-2.0 * u1.ln()).sqrt() * u2.cos();
            }
            gram_schmidt_rows(&mut m, cols);
            for (i, &v) in m.iter().enumerate() {
                t.values[block * cols * cols + i] = F::from_f64(v);
            }
        }
        t
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass over square,
/// row-major `m` of side `n`.
fn gram_schmidt_rows(m: &mut [f64], n: usize) {
    for _pass in 0..2 {
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                for k in 0..n {
                    m[i * n + k] -= dot * m[j * n + k];
                }
            }
            let norm: f64 = (0..n).map(|k| m[i * n + k] * m[i * n + k]).sum::<f64>().sqrt();
            assert!(norm > 1e-12, "gram_schmidt: degenerate random matrix");
            for k in 0..n {
                m[i * n + k] /= norm;
            }
        }
    }
}

/// A tensor as read back from a checkpoint file.
#[derive(Clone, Debug)]
pub struct CheckpointTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

/// Checkpoint format: text header, one `name rows cols` line per tensor,
/// terminated by a blank line; then all values as little-endian f32 in header
/// order. Values are stored at 32-bit regardless of the in-memory float type.
pub fn save_checkpoint<F: Scalar>(path: &Path, tensors: &[&ParamTensor<F>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in tensors {
        writeln!(w, "{} {} {}", t.name, t.rows, t.cols)?;
    }
    writeln!(w)?;
    for t in tensors {
        for &v in &t.values {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<CheckpointTensor>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    loop {
        let mut line = String::new();
        let n = r.read_line(&mut line)?;
        if n == 0 {
            return Err(CoreError::BadFormat(
                "checkpoint header not terminated by blank line".into(),
            ));
        }
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            break;
        }
        let mut it = line.split_whitespace();
        let name = it
            .next()
            .ok_or_else(|| CoreError::BadFormat("empty header line".into()))?
            .to_string();
        let rows: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CoreError::BadFormat(format!("bad rows in header line '{line}'")))?;
        let cols: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CoreError::BadFormat(format!("bad cols in header line '{line}'")))?;
        header.push((name, rows, cols));
    }
    let mut out = Vec::with_capacity(header.len());
    for (name, rows, cols) in header {
        let mut values = vec![0f32; rows * cols];
        let mut buf = [0u8; 4];
        for v in values.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| CoreError::BadFormat(format!("truncated data for tensor {name}")))?;
            *v = f32::from_le_bytes(buf);
        }
        out.push(CheckpointTensor { name, rows, cols, values });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: ParamTensor<f32> = ParamTensor::scaled_uniform("layer.w", 3, 4, &mut rng);
        let b: ParamTensor<f32> = ParamTensor::scaled_uniform("layer.b", 1, 3, &mut rng);
        save_checkpoint(&path, &[&a, &b]).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].name, "layer.w");
        assert_eq!((loaded[0].rows, loaded[0].cols), (3, 4));
        assert_eq!(loaded[0].values, a.values);
        assert_eq!(loaded[1].values, b.values);
    }

    #[test]
    fn orthogonal_blocks_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: ParamTensor<f64> = ParamTensor::orthogonal_blocks("g", 12, 4, &mut rng);
        for block in 0..3 {
            let m = &t.values[block * 16..(block + 1) * 16];
            for i in 0..4 {
                for j in 0..4 {
                    let dot: f64 = (0..4).map(|k| m[i * 4 + k] * m[j * 4 + k]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10, "block {block} ({i},{j}): {dot}");
                }
            }
        }
    }
}
