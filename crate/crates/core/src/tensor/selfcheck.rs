//! Gradient checks of every differentiable primitive on small random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, GradCheckReport, Graph, Tensor, Var};
use crate::error::Result;

/// Largest relative error any single primitive may show.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;

type Case = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Scalar probe `sum(r * y)` with a fixed random `r`, so every output
/// element contributes to the checked gradient.
fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_tensor(&mut rng, g.value(y).shape());
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

/// One report per primitive (matmul, broadcast add, mul, ELU, sigmoid,
/// tanh, conv1d, max-pool, slicing/concatenation, softmax cross-entropy and
/// the fused LSTM), each at [`PRIMITIVE_TOLERANCE`].
pub fn primitive_checks(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut cases: Vec<(&str, Vec<Tensor>, Case)> = vec![
        (
            "matmul",
            vec![rand_tensor(&mut rng, &[3, 5]), rand_tensor(&mut rng, &[5, 4])],
            Box::new(move |g, v| {
                let y = g.matmul(v[0], v[1])?;
                probe(g, y, seed + 1)
            }),
        ),
        (
            "add-broadcast",
            vec![rand_tensor(&mut rng, &[4, 3]), rand_tensor(&mut rng, &[3])],
            Box::new(move |g, v| {
                let y = g.add(v[0], v[1])?;
                probe(g, y, seed + 2)
            }),
        ),
        (
            "mul",
            vec![rand_tensor(&mut rng, &[4, 3]), rand_tensor(&mut rng, &[4, 3])],
            Box::new(move |g, v| {
                let y = g.mul(v[0], v[1])?;
                probe(g, y, seed + 3)
            }),
        ),
        (
            "elu",
            vec![rand_tensor(&mut rng, &[5, 5])],
            Box::new(move |g, v| {
                let y = g.elu(v[0]);
                probe(g, y, seed + 4)
            }),
        ),
        (
            "sigmoid",
            vec![rand_tensor(&mut rng, &[5, 5])],
            Box::new(move |g, v| {
                let y = g.sigmoid(v[0]);
                probe(g, y, seed + 5)
            }),
        ),
        (
            "tanh",
            vec![rand_tensor(&mut rng, &[5, 5])],
            Box::new(move |g, v| {
                let y = g.tanh(v[0]);
                probe(g, y, seed + 6)
            }),
        ),
        (
            "conv1d",
            vec![
                rand_tensor(&mut rng, &[2, 3, 9]),
                rand_tensor(&mut rng, &[4, 3, 3]),
                rand_tensor(&mut rng, &[4]),
            ],
            Box::new(move |g, v| {
                let y = g.conv1d(v[0], v[1], v[2])?;
                probe(g, y, seed + 7)
            }),
        ),
        (
            "maxpool",
            vec![rand_tensor(&mut rng, &[2, 3, 10])],
            Box::new(move |g, v| {
                let y = g.maxpool1d(v[0], 3, 3)?;
                probe(g, y, seed + 8)
            }),
        ),
        (
            "slices-and-concats",
            vec![rand_tensor(&mut rng, &[4, 6]), rand_tensor(&mut rng, &[2, 6])],
            Box::new(move |g, v| {
                let a = g.slice_cols(v[0], 1, 3)?;
                let b = g.slice_rows(v[0], 1, 2)?;
                let c = g.concat_rows(&[b, v[1]])?;
                let c = g.reshape(c, &[4, 6])?;
                let c = g.slice_cols(c, 0, 2)?;
                let d = g.concat_cols(&[a, c])?;
                probe(g, d, seed + 9)
            }),
        ),
        (
            "softmax-ce",
            vec![rand_tensor(&mut rng, &[6, 2])],
            Box::new(move |g, v| Ok(g.softmax_cross_entropy(v[0], &[0, 1, 1, 0, 1, 0])?.0)),
        ),
    ];
    cases.push((
        "lstm",
        vec![
            rand_tensor(&mut rng, &[12, 3]),
            rand_tensor(&mut rng, &[3, 16]),
            rand_tensor(&mut rng, &[4, 16]),
            rand_tensor(&mut rng, &[16]),
        ],
        Box::new(move |g, v| {
            let y = g.lstm(v[0], v[1], v[2], v[3], 2)?;
            probe(g, y, seed + 10)
        }),
    ));
    cases
        .into_iter()
        .map(|(name, inputs, f)| Ok((name, grad_check(&inputs, |g, v| f(g, v), PRIMITIVE_TOLERANCE)?)))
        .collect()
}
