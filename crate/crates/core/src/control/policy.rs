//! Feedforward MLP policy and its plain-text weights format.
//!
//! ```text
//! mlp 1
//! input 6
//! layer 64 tanh
//! weights 6 64
//! <6 rows of 64 numbers>
//! bias 64
//! <64 numbers>
//! layer 4 linear
//! ...
//! ```
//!
//! Weight blocks are row-major `in x out`. Lines starting with `#` are
//! comments. Numbers are written in shortest round-trip form, so saving a
//! loaded canonical file reproduces it byte for byte.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const POLICY_INPUT_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }

    fn derivative_at_output(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Parse(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    layers: Vec<DenseLayer>,
}

impl MlpPolicy {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Dimension("policy has no layers".into()))?;
        if first.weights.ncols() != POLICY_INPUT_DIM {
            return Err(Error::Dimension(format!(
                "input width must be {POLICY_INPUT_DIM}, got {}",
                first.weights.ncols()
            )));
        }
        let mut width = POLICY_INPUT_DIM;
        for (k, layer) in layers.iter().enumerate() {
            if layer.weights.ncols() != width || layer.bias.len() != layer.weights.nrows() {
                return Err(Error::Dimension(format!(
                    "layer {k}: weights {}x{} and bias {} do not follow width {width}",
                    layer.weights.nrows(),
                    layer.weights.ncols(),
                    layer.bias.len()
                )));
            }
            width = layer.weights.nrows();
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.nrows())
    }

    /// Layer widths including the input, e.g. `[6, 64, 64, 4]`.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(POLICY_INPUT_DIM)
            .chain(self.layers.iter().map(|l| l.weights.nrows()))
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(x)?.pop().unwrap_or_default().iter().copied().collect())
    }

    fn activations(&self, x: &[f64]) -> Result<Vec<DVector<f64>>> {
        if x.len() != POLICY_INPUT_DIM {
            return Err(Error::Dimension(format!(
                "policy input has {} values, expected {POLICY_INPUT_DIM}",
                x.len()
            )));
        }
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut h = DVector::from_column_slice(x);
        for layer in &self.layers {
            let mut z = &layer.weights * &h + &layer.bias;
            z.apply(|v| *v = layer.activation.apply(*v));
            outs.push(z.clone());
            h = z;
        }
        Ok(outs)
    }

    /// Analytic Jacobian `d y / d x`, `output_dim x 6`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let outs = self.activations(x)?;
        let mut jac = DMatrix::<f64>::identity(POLICY_INPUT_DIM, POLICY_INPUT_DIM);
        for (layer, out) in self.layers.iter().zip(&outs) {
            let mut local = layer.weights.clone();
            for (r, o) in out.iter().enumerate() {
                let d = layer.activation.derivative_at_output(*o);
                local.row_mut(r).scale_mut(d);
            }
            jac = local * jac;
        }
        Ok(jac)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("unexpected end of file, expected {what}")))
        };

        let header = next("header")?;
        if header != "mlp 1" {
            return Err(Error::Parse(format!("bad header '{header}'")));
        }
        let input = keyword_usizes(next("input")?, "input", 1)?[0];
        if input != POLICY_INPUT_DIM {
            return Err(Error::Dimension(format!(
                "input width must be {POLICY_INPUT_DIM}, got {input}"
            )));
        }

        let mut layers = Vec::new();
        let mut width = input;
        loop {
            let line = match next("layer or end") {
                Ok(l) => l,
                Err(e) if layers.is_empty() => return Err(e),
                Err(_) => break,
            };
            if line == "end" {
                break;
            }
            let mut parts = line.split_whitespace();
            if parts.next() != Some("layer") {
                return Err(Error::Parse(format!("expected 'layer', got '{line}'")));
            }
            let out: usize = parse_token(parts.next(), "layer width")?;
            let activation: Activation = parts
                .next()
                .ok_or_else(|| Error::Parse("layer line needs an activation".into()))?
                .parse()?;

            let dims = keyword_usizes(next("weights")?, "weights", 2)?;
            if dims != [width, out] {
                return Err(Error::Dimension(format!(
                    "weights {}x{} do not match {width}x{out}",
                    dims[0], dims[1]
                )));
            }
            let mut weights = DMatrix::zeros(out, width);
            for r in 0..width {
                let row = parse_numbers(next("weight row")?, out)?;
                for (c, v) in row.into_iter().enumerate() {
                    weights[(c, r)] = v;
                }
            }
            let bias_len = keyword_usizes(next("bias")?, "bias", 1)?[0];
            if bias_len != out {
                return Err(Error::Dimension(format!("bias {bias_len} does not match width {out}")));
            }
            let bias = DVector::from_vec(parse_numbers(next("bias values")?, out)?);
            layers.push(DenseLayer {
                weights,
                bias,
                activation,
            });
            width = out;
        }
        Self::new(layers)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mlp 1");
        let _ = writeln!(s, "input {POLICY_INPUT_DIM}");
        for layer in &self.layers {
            let (out, inp) = layer.weights.shape();
            let _ = writeln!(s, "layer {out} {}", layer.activation.name());
            let _ = writeln!(s, "weights {inp} {out}");
            for r in 0..inp {
                let row: Vec<String> = (0..out).map(|c| layer.weights[(c, r)].to_string()).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
            let _ = writeln!(s, "bias {out}");
            let row: Vec<String> = layer.bias.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        let _ = writeln!(s, "end");
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }
}

fn parse_token<T: FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad or missing {what}")))
}

fn keyword_usizes(line: &str, keyword: &str, n: usize) -> Result<Vec<usize>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(keyword) {
        return Err(Error::Parse(format!("expected '{keyword}', got '{line}'")));
    }
    let vals: Vec<usize> = parts
        .map(|p| p.parse().map_err(|_| Error::Parse(format!("bad integer '{p}'"))))
        .collect::<Result<_>>()?;
    if vals.len() != n {
        return Err(Error::Parse(format!("'{keyword}' expects {n} integers")));
    }
    Ok(vals)
}

fn parse_numbers(line: &str, n: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|p| p.parse().map_err(|_| Error::Parse(format!("bad number '{p}'"))))
        .collect::<Result<_>>()?;
    if vals.len() != n {
        return Err(Error::Dimension(format!("expected {n} values, got {}", vals.len())));
    }
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_policy(sizes: &[usize], seed: u64) -> MlpPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| DenseLayer {
                weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-0.5..0.5)),
                bias: DVector::from_fn(w[1], |_, _| rng.random_range(-0.1..0.1)),
                activation: if k + 2 == sizes.len() { Activation::Linear } else { Activation::Tanh },
            })
            .collect();
        MlpPolicy::new(layers).unwrap()
    }

    /// Plain nested-loop forward pass over the text format's `in x out` layout.
    fn reference_forward(text: &str, x: &[f64]) -> Vec<f64> {
        let lines: Vec<&str> = text.lines().collect();
        let mut i = 2;
        let mut h = x.to_vec();
        while lines[i] != "end" {
            let parts: Vec<&str> = lines[i].split_whitespace().collect();
            let out: usize = parts[1].parse().unwrap();
            let tanh = parts[2] == "tanh";
            let inp = h.len();
            let mut z = vec![0.0; out];
            for r in 0..inp {
                let row: Vec<f64> = lines[i + 2 + r].split_whitespace().map(|v| v.parse().unwrap()).collect();
                for c in 0..out {
                    z[c] += h[r] * row[c];
                }
            }
            let bias: Vec<f64> = lines[i + 3 + inp].split_whitespace().map(|v| v.parse().unwrap()).collect();
            for c in 0..out {
                z[c] += bias[c];
                if tanh {
                    z[c] = z[c].tanh();
                }
            }
            h = z;
            i += 4 + inp;
        }
        h
    }

    #[test]
    fn zero_net_outputs_zero() {
        let layers = vec![
            DenseLayer { weights: DMatrix::zeros(8, 6), bias: DVector::zeros(8), activation: Activation::Tanh },
            DenseLayer { weights: DMatrix::zeros(4, 8), bias: DVector::zeros(4), activation: Activation::Linear },
        ];
        let p = MlpPolicy::new(layers).unwrap();
        assert_eq!(p.forward(&[3.0, -1.0, 2.0, 0.5, 0.0, 9.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn single_active_hidden_unit() {
        let b = 0.7;
        let mut bias = DVector::zeros(3);
        bias[1] = b;
        let mut out_w = DMatrix::zeros(4, 3);
        out_w[(2, 1)] = 1.5;
        let p = MlpPolicy::new(vec![
            DenseLayer { weights: DMatrix::zeros(3, 6), bias, activation: Activation::Tanh },
            DenseLayer { weights: out_w, bias: DVector::zeros(4), activation: Activation::Linear },
        ])
        .unwrap();
        let y = p.forward(&[1.0; 6]).unwrap();
        assert_eq!(y, vec![0.0, 0.0, 1.5 * b.tanh(), 0.0]);
    }

    #[test]
    fn matches_independent_reference() {
        let p = random_policy(&[6, 32, 32, 4], 42);
        let text = p.to_text();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-50.0..50.0)).collect();
            let a = p.forward(&x).unwrap();
            let b = reference_forward(&text, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12, "{u} {v}");
            }
        }
    }

    #[test]
    fn load_structural_and_round_trip() {
        let p = random_policy(&[6, 64, 64, 4], 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.txt");
        p.save(&path).unwrap();
        let loaded = MlpPolicy::load(&path).unwrap();
        assert_eq!(loaded.sizes(), vec![6, 64, 64, 4]);
        assert_eq!(loaded.layers().len(), 3);
        assert_eq!(loaded.layers()[0].weights.shape(), (64, 6));
        assert_eq!(loaded.layers()[1].weights.shape(), (64, 64));
        assert_eq!(loaded.layers()[2].weights.shape(), (4, 64));
        assert_eq!(loaded, p);
        let again = dir.path().join("again.txt");
        loaded.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn rejects_bad_files() {
        let text = random_policy(&[6, 4, 4], 3).to_text();
        let five = text.replacen("input 6", "input 5", 1);
        assert!(matches!(MlpPolicy::parse(&five), Err(Error::Dimension(_))));
        let relu = text.replacen("tanh", "relu", 1);
        match MlpPolicy::parse(&relu) {
            Err(Error::Parse(m)) => assert!(m.contains("relu")),
            other => panic!("{other:?}"),
        }
        let wrong = text.replacen("weights 6 4", "weights 6 5", 1);
        assert!(matches!(MlpPolicy::parse(&wrong), Err(Error::Dimension(_))));
        assert!(MlpPolicy::parse("").is_err());
        assert!(random_policy(&[6, 4], 1).forward(&[0.0; 5]).is_err());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        for seed in 0..5 {
            let p = random_policy(&[6, 32, 32, 4], 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let jac = p.jacobian(&x).unwrap();
            let h = 1e-5;
            for c in 0..6 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fp = p.forward(&xp).unwrap();
                let fm = p.forward(&xm).unwrap();
                for r in 0..4 {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    let an = jac[(r, c)];
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} {an}");
                }
            }
        }
    }

    #[test]
    fn lipschitz_bound_from_spectral_norms() {
        let p = random_policy(&[6, 32, 32, 4], 9);
        let bound: f64 = p
            .layers()
            .iter()
            .map(|l| l.weights.clone().svd(false, false).singular_values.max())
            .product();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let fa = DVector::from_vec(p.forward(&a).unwrap());
            let fb = DVector::from_vec(p.forward(&b).unwrap());
            let dx = (DVector::from_vec(a) - DVector::from_vec(b)).norm();
            assert!((fa - fb).norm() <= bound * dx * (1.0 + 1e-12));
        }
    }
}
