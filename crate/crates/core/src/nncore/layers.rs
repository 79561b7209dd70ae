use super::Tensor;
use crate::error::{Error, Result};

fn shape_err(expected: &[usize], got: &[usize]) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

/// `c = a * b` (or `c += a * b` when `accumulate`), with explicit row and
/// column strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(input: &[f64], h: usize, w: usize, cin: usize) -> Vec<f64> {
    let k = 9 * cin;
    let mut cols = vec![0.0; h * w * k];
    for y in 0..h {
        for x in 0..w {
            let row = &mut cols[(y * w + x) * k..][..k];
            for ky in 0..3 {
                let iy = y + ky;
                if iy < 1 || iy > h {
                    continue;
                }
                for kx in 0..3 {
                    let ix = x + kx;
                    if ix < 1 || ix > w {
                        continue;
                    }
                    let src = ((iy - 1) * w + ix - 1) * cin;
                    row[(ky * 3 + kx) * cin..][..cin].copy_from_slice(&input[src..src + cin]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], h: usize, w: usize, cin: usize) -> Vec<f64> {
    let k = 9 * cin;
    let mut out = vec![0.0; h * w * cin];
    for y in 0..h {
        for x in 0..w {
            let row = &cols[(y * w + x) * k..][..k];
            for ky in 0..3 {
                let iy = y + ky;
                if iy < 1 || iy > h {
                    continue;
                }
                for kx in 0..3 {
                    let ix = x + kx;
                    if ix < 1 || ix > w {
                        continue;
                    }
                    let dst = ((iy - 1) * w + ix - 1) * cin;
                    for (o, g) in out[dst..dst + cin].iter_mut().zip(&row[(ky * 3 + kx) * cin..][..cin]) {
                        *o += g;
                    }
                }
            }
        }
    }
    out
}

fn check_conv_params(cin: usize, weight: &Tensor, bias: &Tensor) -> Result<usize> {
    let cout = match weight.shape() {
        [3, 3, c, o] if *c == cin => *o,
        s => return Err(shape_err(&[3, 3, cin, 0], s)),
    };
    if bias.shape() != [cout] {
        return Err(shape_err(&[cout], bias.shape()));
    }
    Ok(cout)
}

/// 3x3 cross-correlation, stride 1, zero padding 1.
///
/// `weight` is `[3, 3, cin, cout]`; returns the output and the im2col
/// buffer the backward pass reuses.
pub fn conv3x3_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (h, w, cin) = input.hwc()?;
    let cout = check_conv_params(cin, weight, bias)?;
    let cols = im2col(input.data(), h, w, cin);
    let mut out = Vec::with_capacity(h * w * cout);
    for _ in 0..h * w {
        out.extend_from_slice(bias.data());
    }
    let k = 9 * cin;
    gemm(h * w, k, cout, &cols, (k, 1), weight.data(), (cout, 1), &mut out, true);
    Ok((Tensor::new(vec![h, w, cout], out)?, cols))
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
pub(crate) fn conv3x3_backward_acc(
    input_shape: (usize, usize, usize),
    cols: &[f64],
    weight: &Tensor,
    grad_out: &Tensor,
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
    need_input: bool,
) -> Option<Tensor> {
    let (h, w, cin) = input_shape;
    let cout = weight.shape()[3];
    let k = 9 * cin;
    let hw = h * w;
    let g = grad_out.data();
    // dW += cols^T g
    gemm(k, hw, cout, cols, (1, k), g, (cout, 1), grad_w.data_mut(), true);
    for row in g.chunks_exact(cout) {
        for (b, v) in grad_b.data_mut().iter_mut().zip(row) {
            *b += v;
        }
    }
    need_input.then(|| {
        // dcols = g W^T
        let mut dcols = vec![0.0; hw * k];
        gemm(hw, cout, k, g, (cout, 1), weight.data(), (1, cout), &mut dcols, false);
        Tensor::new(vec![h, w, cin], col2im(&dcols, h, w, cin)).unwrap()
    })
}

#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv3x3_backward(input: &Tensor, weight: &Tensor, bias: &Tensor, grad_out: &Tensor) -> Result<ParamGrads> {
    let (h, w, cin) = input.hwc()?;
    let cout = check_conv_params(cin, weight, bias)?;
    if grad_out.shape() != [h, w, cout] {
        return Err(shape_err(&[h, w, cout], grad_out.shape()));
    }
    let cols = im2col(input.data(), h, w, cin);
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    let mut gb = Tensor::zeros(vec![cout]);
    let gi = conv3x3_backward_acc((h, w, cin), &cols, weight, grad_out, &mut gw, &mut gb, true).unwrap();
    Ok(ParamGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).unwrap()
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(shape_err(input.shape(), grad_out.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// 2x2 max pooling, stride 2. Also returns, per output element, the flat
/// input index of the first (row-major) maximal element of its window.
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (h, w, c) = input.hwc()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err(&[h & !1, w & !1, c], input.shape()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = usize::MAX;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if best == usize::MAX || x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![oh, ow, c], out)?, argmax))
}

pub fn maxpool2x2_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(shape_err(&[argmax.len()], grad_out.shape()));
    }
    let mut grad = Tensor::zeros(input_shape.to_vec());
    let g = grad.data_mut();
    for (&i, v) in argmax.iter().zip(grad_out.data()) {
        g[i] += v;
    }
    Ok(grad)
}

fn check_dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let n_in = input.len();
    let n_out = match weight.shape() {
        [o, i] if *i == n_in => *o,
        s => return Err(shape_err(&[0, n_in], s)),
    };
    if bias.shape() != [n_out] {
        return Err(shape_err(&[n_out], bias.shape()));
    }
    Ok((n_in, n_out))
}

/// `y = W x + b` with `W` shaped `[out, in]`; `x` is flattened.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n_in, _) = check_dense(input, weight, bias)?;
    let x = input.data();
    let out = weight
        .data()
        .chunks_exact(n_in)
        .zip(bias.data())
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
        .collect::<Vec<_>>();
    Tensor::new(vec![out.len()], out)
}

pub(crate) fn dense_backward_acc(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &[f64],
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
) -> Tensor {
    let n_in = input.len();
    let x = input.data();
    let mut gi = vec![0.0; n_in];
    for (o, &g) in grad_out.iter().enumerate() {
        grad_b.data_mut()[o] += g;
        let wrow = &weight.data()[o * n_in..][..n_in];
        let grow = &mut grad_w.data_mut()[o * n_in..][..n_in];
        for i in 0..n_in {
            grow[i] += g * x[i];
            gi[i] += g * wrow[i];
        }
    }
    Tensor::new(input.shape().to_vec(), gi).unwrap()
}

pub fn dense_backward(input: &Tensor, weight: &Tensor, bias: &Tensor, grad_out: &Tensor) -> Result<ParamGrads> {
    let (_, n_out) = check_dense(input, weight, bias)?;
    if grad_out.len() != n_out {
        return Err(shape_err(&[n_out], grad_out.shape()));
    }
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    let mut gb = Tensor::zeros(vec![n_out]);
    let gi = dense_backward_acc(input, weight, grad_out.data(), &mut gw, &mut gb);
    Ok(ParamGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

/// Per-channel mean over all spatial positions.
pub fn global_avg_pool_forward(input: &Tensor) -> Result<Tensor> {
    let (h, w, c) = input.hwc()?;
    let mut sum = vec![0.0; c];
    for px in input.data().chunks_exact(c) {
        for (s, v) in sum.iter_mut().zip(px) {
            *s += v;
        }
    }
    let n = (h * w) as f64;
    Tensor::new(vec![c], sum.into_iter().map(|s| s / n).collect())
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let [h, w, c] = *input_shape else {
        return Err(shape_err(&[0, 0, 0], input_shape));
    };
    if grad_out.len() != c {
        return Err(shape_err(&[c], grad_out.shape()));
    }
    let scale = 1.0 / (h * w) as f64;
    let g: Vec<f64> = grad_out.data().iter().map(|v| v * scale).collect();
    let data = g.iter().copied().cycle().take(h * w * c).collect();
    Tensor::new(input_shape.to_vec(), data)
}

/// Gray-world branch: appends the per-channel global mean, replicated over
/// the full raster, after the input channels (`h x w x c -> h x w x 2c`).
pub fn grayworld_branch_forward(input: &Tensor) -> Result<Tensor> {
    let (h, w, c) = input.hwc()?;
    let mean = global_avg_pool_forward(input)?;
    let mut out = Vec::with_capacity(h * w * 2 * c);
    for px in input.data().chunks_exact(c) {
        out.extend_from_slice(px);
        out.extend_from_slice(mean.data());
    }
    Tensor::new(vec![h, w, 2 * c], out)
}

/// Identity path plus the mean path, which spreads `1/(h*w)` of each
/// channel's summed gradient over every input cell.
pub fn grayworld_branch_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let [h, w, c] = *input_shape else {
        return Err(shape_err(&[0, 0, 0], input_shape));
    };
    if grad_out.shape() != [h, w, 2 * c] {
        return Err(shape_err(&[h, w, 2 * c], grad_out.shape()));
    }
    let mut mean_grad = vec![0.0; c];
    for px in grad_out.data().chunks_exact(2 * c) {
        for (m, g) in mean_grad.iter_mut().zip(&px[c..]) {
            *m += g;
        }
    }
    let scale = 1.0 / (h * w) as f64;
    mean_grad.iter_mut().for_each(|m| *m *= scale);
    let mut data = Vec::with_capacity(h * w * c);
    for px in grad_out.data().chunks_exact(2 * c) {
        data.extend(px[..c].iter().zip(&mean_grad).map(|(g, m)| g + m));
    }
    Tensor::new(input_shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn identity_kernel_copies_input() {
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let input = t(&[4, 5, 1], (0..20).map(f64::from).collect());
        let (out, _) = conv3x3_forward(&input, &t(&[3, 3, 1, 1], k), &t(&[1], vec![0.0])).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn ones_kernel_sums_neighbourhood() {
        let input = t(&[5, 5, 1], vec![1.0; 25]);
        let (out, _) = conv3x3_forward(&input, &t(&[3, 3, 1, 1], vec![1.0; 9]), &t(&[1], vec![0.0])).unwrap();
        assert_eq!(out.data()[2 * 5 + 2], 9.0);
        assert_eq!(out.data()[0], 4.0);
        assert_eq!(out.data()[2], 6.0);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let input = t(&[4, 4, 2], vec![0.0; 32]);
        let w = Tensor::zeros(vec![3, 3, 3, 1]);
        assert!(matches!(
            conv3x3_forward(&input, &w, &Tensor::zeros(vec![1])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = t(&[3], vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(
            relu_backward(&x, &t(&[3], vec![5.0; 3])).unwrap().data(),
            &[0.0, 0.0, 5.0]
        );
    }

    #[test]
    fn maxpool_routes_to_max() {
        let x = t(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = maxpool2x2_backward(x.shape(), &idx, &t(&[1, 1, 1], vec![1.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_ties_go_to_first() {
        let x = t(&[2, 2, 1], vec![7.0, 7.0, 7.0, 7.0]);
        let (_, idx) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(idx, vec![0]);
        assert!(maxpool2x2_forward(&t(&[3, 2, 1], vec![0.0; 6])).is_err());
    }

    #[test]
    fn grayworld_branch_values() {
        let x = t(&[64, 64, 3], vec![0.7; 64 * 64 * 3]);
        let y = grayworld_branch_forward(&x).unwrap();
        assert_eq!(y.shape(), &[64, 64, 6]);
        assert!(y.data().iter().all(|v| (*v - 0.7).abs() < 1e-12));

        let mut d = vec![0.0; 64 * 64 * 3];
        d[(10 * 64 + 20) * 3] = 2.0;
        let y = grayworld_branch_forward(&t(&[64, 64, 3], d)).unwrap();
        for px in y.data().chunks_exact(6) {
            assert_eq!(px[3], 2.0 / 4096.0);
            assert_eq!(px[4], 0.0);
        }
    }

    #[test]
    fn grayworld_branch_scales_linearly() {
        let x = t(&[4, 4, 3], (0..48).map(|v| f64::from(v) * 0.1).collect());
        let y = grayworld_branch_forward(&x).unwrap();
        let x2 = t(&[4, 4, 3], x.data().iter().map(|v| v * 4.0).collect());
        let y2 = grayworld_branch_forward(&x2).unwrap();
        for (a, b) in y.data().chunks_exact(6).zip(y2.data().chunks_exact(6)) {
            for c in 3..6 {
                assert_eq!(b[c], 4.0 * a[c]);
            }
        }
    }

    #[test]
    fn dense_forward_values() {
        let y = dense_forward(
            &t(&[2], vec![1.0, 2.0]),
            &t(&[2, 2], vec![1.0, 0.5, -1.0, 3.0]),
            &t(&[2], vec![0.25, 0.0]),
        )
        .unwrap();
        assert_eq!(y.data(), &[2.25, 5.0]);
    }
}
