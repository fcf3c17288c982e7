use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::scalar::Scalar;

/// Gated recurrent cell. Gate blocks are stacked as `[update | reset | candidate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<S> {
    pub w: Array2<S>,
    pub u: Array2<S>,
    pub bw: Array1<S>,
    pub bu: Array1<S>,
}

impl<S: Scalar> GruParams<S> {
    fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w: Array2::zeros((3 * hidden, input)),
            u: Array2::zeros((3 * hidden, hidden)),
            bw: Array1::zeros(3 * hidden),
            bu: Array1::zeros(3 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }
}

/// Additive attention over one encoder: `v · tanh(query·s + key·h_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<S> {
    pub key: Array2<S>,
    pub query: Array2<S>,
    pub v: Array1<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<S> {
    pub embedding: Array2<S>,
    pub gru: GruParams<S>,
    pub attention: AttentionParams<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<S> {
    pub encoders: Vec<EncoderParams<S>>,
    /// Decoder initialization projection (decoder hidden × encoder hidden).
    pub bridge: Array2<S>,
    /// Projection of the concatenated contexts.
    pub context: Array2<S>,
    pub embedding: Array2<S>,
    pub decoder: GruParams<S>,
    pub output: Array2<S>,
    pub output_bias: Array1<S>,
}

impl<S: Scalar> Params<S> {
    pub fn zeros(
        config: &ModelConfig,
        source_vocab_sizes: &[usize],
        target_vocab_size: usize,
    ) -> Self {
        let e = config.embedding_size;
        let he = config.encoder_hidden;
        let hd = config.decoder_hidden;
        let a = config.attention_size;
        let c = config.context_size;
        let encoders = source_vocab_sizes
            .iter()
            .map(|&v| EncoderParams {
                embedding: Array2::zeros((v, e)),
                gru: GruParams::zeros(e, he),
                attention: AttentionParams {
                    key: Array2::zeros((a, he)),
                    query: Array2::zeros((a, hd)),
                    v: Array1::zeros(a),
                },
            })
            .collect::<Vec<_>>();
        Params {
            bridge: Array2::zeros((hd, he)),
            context: Array2::zeros((c, he * encoders.len())),
            encoders,
            embedding: Array2::zeros((target_vocab_size, e)),
            decoder: GruParams::zeros(e + c, hd),
            output: Array2::zeros((target_vocab_size, hd + c)),
            output_bias: Array1::zeros(target_vocab_size),
        }
    }

    /// Glorot-uniform weight matrices, uniform(±0.1) embeddings, zero biases.
    pub fn init(
        config: &ModelConfig,
        source_vocab_sizes: &[usize],
        target_vocab_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut p = Self::zeros(config, source_vocab_sizes, target_vocab_size);
        let glorot = |m: &mut Array2<S>, rng: &mut ChaCha8Rng| {
            let (rows, cols) = m.dim();
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            m.mapv_inplace(|_| S::from_f64_lossy(rng.gen_range(-bound..bound)));
        };
        let embed = |m: &mut Array2<S>, rng: &mut ChaCha8Rng| {
            m.mapv_inplace(|_| S::from_f64_lossy(rng.gen_range(-0.1..0.1)));
        };
        for enc in &mut p.encoders {
            embed(&mut enc.embedding, rng);
            glorot(&mut enc.gru.w, rng);
            glorot(&mut enc.gru.u, rng);
            glorot(&mut enc.attention.key, rng);
            glorot(&mut enc.attention.query, rng);
            let bound = (3.0 / enc.attention.v.len() as f64).sqrt();
            enc.attention
                .v
                .mapv_inplace(|_| S::from_f64_lossy(rng.gen_range(-bound..bound)));
        }
        glorot(&mut p.bridge, rng);
        glorot(&mut p.context, rng);
        embed(&mut p.embedding, rng);
        glorot(&mut p.decoder.w, rng);
        glorot(&mut p.decoder.u, rng);
        glorot(&mut p.output, rng);
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        p.for_each_mut(|s| s.iter_mut().for_each(|x| *x = S::zero()));
        p
    }

    /// Every tensor as `(name, shape, flat data)`, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[S])> {
        let mut out = Vec::new();
        for (i, enc) in self.encoders.iter().enumerate() {
            out.push(mat(format!("encoder{i}.embedding"), &enc.embedding));
            out.push(mat(format!("encoder{i}.gru.w"), &enc.gru.w));
            out.push(mat(format!("encoder{i}.gru.u"), &enc.gru.u));
            out.push(vec1(format!("encoder{i}.gru.bw"), &enc.gru.bw));
            out.push(vec1(format!("encoder{i}.gru.bu"), &enc.gru.bu));
            out.push(mat(format!("encoder{i}.attention.key"), &enc.attention.key));
            out.push(mat(
                format!("encoder{i}.attention.query"),
                &enc.attention.query,
            ));
            out.push(vec1(format!("encoder{i}.attention.v"), &enc.attention.v));
        }
        out.push(mat("bridge".into(), &self.bridge));
        out.push(mat("context".into(), &self.context));
        out.push(mat("decoder.embedding".into(), &self.embedding));
        out.push(mat("decoder.gru.w".into(), &self.decoder.w));
        out.push(mat("decoder.gru.u".into(), &self.decoder.u));
        out.push(vec1("decoder.gru.bw".into(), &self.decoder.bw));
        out.push(vec1("decoder.gru.bu".into(), &self.decoder.bu));
        out.push(mat("output".into(), &self.output));
        out.push(vec1("output_bias".into(), &self.output_bias));
        out
    }

    /// Same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = Vec::new();
        for enc in self.encoders.iter_mut() {
            out.push(flat_mut(&mut enc.embedding));
            out.push(flat_mut(&mut enc.gru.w));
            out.push(flat_mut(&mut enc.gru.u));
            out.push(flat1_mut(&mut enc.gru.bw));
            out.push(flat1_mut(&mut enc.gru.bu));
            out.push(flat_mut(&mut enc.attention.key));
            out.push(flat_mut(&mut enc.attention.query));
            out.push(flat1_mut(&mut enc.attention.v));
        }
        out.push(flat_mut(&mut self.bridge));
        out.push(flat_mut(&mut self.context));
        out.push(flat_mut(&mut self.embedding));
        out.push(flat_mut(&mut self.decoder.w));
        out.push(flat_mut(&mut self.decoder.u));
        out.push(flat1_mut(&mut self.decoder.bw));
        out.push(flat1_mut(&mut self.decoder.bu));
        out.push(flat_mut(&mut self.output));
        out.push(flat1_mut(&mut self.output_bias));
        out
    }

    pub fn for_each_mut(&mut self, f: impl FnMut(&mut [S])) {
        self.tensors_mut().into_iter().for_each(f);
    }

    /// Pairs each tensor of `self` with the same tensor of `other`.
    pub fn zip_mut(&mut self, other: &Params<S>, mut f: impl FnMut(&mut [S], &[S])) {
        for (a, (_, _, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            f(a, b);
        }
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn norm(&self) -> S {
        self.tensors()
            .iter()
            .flat_map(|(_, _, t)| t.iter())
            .map(|&x| x * x)
            .sum::<S>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: S) {
        self.for_each_mut(|s| s.iter_mut().for_each(|x| *x *= factor));
    }

    pub fn add_scaled(&mut self, other: &Params<S>, factor: S) {
        self.zip_mut(other, |a, b| {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += factor * y)
        });
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, t)| t.iter().all(|x| x.is_finite()))
    }
}

fn mat<S>(name: String, m: &Array2<S>) -> (String, Vec<usize>, &[S]) {
    (
        name,
        vec![m.nrows(), m.ncols()],
        m.as_slice().expect("standard layout"),
    )
}

fn vec1<S>(name: String, m: &Array1<S>) -> (String, Vec<usize>, &[S]) {
    (name, vec![m.len()], m.as_slice().expect("standard layout"))
}

fn flat_mut<S>(m: &mut Array2<S>) -> &mut [S] {
    m.as_slice_mut().expect("standard layout")
}

fn flat1_mut<S>(m: &mut Array1<S>) -> &mut [S] {
    m.as_slice_mut().expect("standard layout")
}
