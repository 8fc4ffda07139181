use super::{check_dim, numel, Op, Result, Tensor, TensorError};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    const DIMS: [&str; 4] = ["batch", "channels", "height", "width"];
    for i in 0..4 {
        check_dim(op, DIMS[i], sa[i], sb[i])?;
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(a.shape(), data, Op::Add(a.clone(), b.clone())))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(a.shape(), data, Op::Sub(a.clone(), b.clone())))
}

pub fn scale(a: &Tensor, s: f64) -> Tensor {
    let data = a.data().iter().map(|x| x * s).collect();
    Tensor::from_op(a.shape(), data, Op::Scale(a.clone(), s))
}

/// `max(0, x)`; the subgradient at 0 is 0.
pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    Tensor::from_op(a.shape(), data, Op::Relu(a.clone()))
}

/// Elementwise square root. The gradient at 0 is taken as 0.
pub fn sqrt(a: &Tensor) -> Result<Tensor> {
    if let Some(v) = a.data().iter().find(|v| **v < 0.0) {
        return Err(TensorError::Invalid {
            op: "sqrt",
            reason: format!("negative input {v}"),
        });
    }
    let data = a.data().iter().map(|x| x.sqrt()).collect();
    Ok(Tensor::from_op(a.shape(), data, Op::Sqrt(a.clone())))
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    check_dim("concat_channels", "batch", n, nb)?;
    check_dim("concat_channels", "height", h, hb)?;
    check_dim("concat_channels", "width", w, wb)?;
    let (pa, pb) = (ca * h * w, cb * h * w);
    let mut data = Vec::with_capacity(n * (pa + pb));
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * pa..(i + 1) * pa]);
        data.extend_from_slice(&b.data()[i * pb..(i + 1) * pb]);
    }
    Ok(Tensor::from_op(
        [n, ca + cb, h, w],
        data,
        Op::Concat(a.clone(), b.clone()),
    ))
}

/// Channels `start..start + len`.
pub fn narrow_channels(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let [n, c, h, w] = a.shape();
    if len == 0 || start + len > c {
        return Err(TensorError::Invalid {
            op: "narrow_channels",
            reason: format!("range {start}..{} out of {c} channels", start + len),
        });
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * len * plane);
    for i in 0..n {
        let base = (i * c + start) * plane;
        data.extend_from_slice(&a.data()[base..base + len * plane]);
    }
    Ok(Tensor::from_op(
        [n, len, h, w],
        data,
        Op::Narrow {
            input: a.clone(),
            start,
        },
    ))
}

/// Batch item `index` as a batch of one.
pub fn select_batch(a: &Tensor, index: usize) -> Result<Tensor> {
    let [n, c, h, w] = a.shape();
    if index >= n {
        return Err(TensorError::Invalid {
            op: "select_batch",
            reason: format!("index {index} out of batch {n}"),
        });
    }
    let item = c * h * w;
    let data = a.data()[index * item..(index + 1) * item].to_vec();
    Ok(Tensor::from_op(
        [1, c, h, w],
        data,
        Op::Select {
            input: a.clone(),
            index,
        },
    ))
}

/// `Σ x²` as a scalar.
pub fn frobenius_sq(a: &Tensor) -> Tensor {
    let v = a.data().iter().map(|x| x * x).sum();
    Tensor::from_op([1, 1, 1, 1], vec![v], Op::FrobeniusSq(a.clone()))
}

pub fn mean(a: &Tensor) -> Tensor {
    let v = a.data().iter().sum::<f64>() / a.len() as f64;
    Tensor::from_op([1, 1, 1, 1], vec![v], Op::Mean(a.clone()))
}

pub fn sum(a: &Tensor) -> Tensor {
    let v = a.data().iter().sum();
    Tensor::from_op([1, 1, 1, 1], vec![v], Op::Sum(a.clone()))
}

pub(super) fn backward(op: &Op, out: &Tensor, g: &[f64]) -> Vec<(Tensor, Vec<f64>)> {
    match op {
        Op::Relu(a) => {
            let pg = a
                .data()
                .iter()
                .zip(g)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect();
            vec![(a.clone(), pg)]
        }
        Op::Add(a, b) => vec![(a.clone(), g.to_vec()), (b.clone(), g.to_vec())],
        Op::Sub(a, b) => vec![
            (a.clone(), g.to_vec()),
            (b.clone(), g.iter().map(|v| -v).collect()),
        ],
        Op::Scale(a, s) => vec![(a.clone(), g.iter().map(|v| v * s).collect())],
        Op::Sqrt(a) => {
            let pg = out
                .data()
                .iter()
                .zip(g)
                .map(|(&r, &g)| if r > 0.0 { 0.5 * g / r } else { 0.0 })
                .collect();
            vec![(a.clone(), pg)]
        }
        Op::Concat(a, b) => {
            let [n, ca, h, w] = a.shape();
            let cb = b.shape()[1];
            let (pa, pb) = (ca * h * w, cb * h * w);
            let mut ga = Vec::with_capacity(n * pa);
            let mut gb = Vec::with_capacity(n * pb);
            for i in 0..n {
                let base = i * (pa + pb);
                ga.extend_from_slice(&g[base..base + pa]);
                gb.extend_from_slice(&g[base + pa..base + pa + pb]);
            }
            vec![(a.clone(), ga), (b.clone(), gb)]
        }
        Op::Narrow { input, start } => {
            let [n, c, h, w] = input.shape();
            let len = out.shape()[1];
            let plane = h * w;
            let mut pg = vec![0.0; numel(&input.shape())];
            for i in 0..n {
                let dst = (i * c + start) * plane;
                let src = i * len * plane;
                pg[dst..dst + len * plane].copy_from_slice(&g[src..src + len * plane]);
            }
            vec![(input.clone(), pg)]
        }
        Op::Select { input, index } => {
            let item = g.len();
            let mut pg = vec![0.0; input.len()];
            pg[index * item..(index + 1) * item].copy_from_slice(g);
            vec![(input.clone(), pg)]
        }
        Op::FrobeniusSq(a) => {
            let s = 2.0 * g[0];
            vec![(a.clone(), a.data().iter().map(|x| s * x).collect())]
        }
        Op::Mean(a) => {
            let v = g[0] / a.len() as f64;
            vec![(a.clone(), vec![v; a.len()])]
        }
        Op::Sum(a) => vec![(a.clone(), vec![g[0]; a.len()])],
        Op::Leaf | Op::Conv2d { .. } | Op::Custom { .. } => {
            unreachable!("handled by the caller")
        }
    }
}
