mod common;

use common::*;
use dacomp::tensor::{Graph, Tensor};
use dacomp::Error;

fn naive_conv(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let (&[n, c, h, w], &[o, _, kh, kw]) = (x.shape(), k.shape()) else { unreachable!() };
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (xo * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x.data()[((b * c + ic) * h + iy as usize) * w + ix as usize]
                                    * k.data()[((oc * c + ic) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    out
}

fn close(a: &[f64], b: &[f64]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
    }
}

#[test]
fn conv_matches_direct_loops() {
    for (seed, stride, pad) in [(0, 1, 0), (1, 1, 1), (2, 2, 1), (3, 2, 0)] {
        let r = &mut rng(seed);
        let x = random_tensor(&[2, 3, 7, 7], r);
        let k = random_tensor(&[4, 3, 3, 3], r);
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = g.conv2d(xv, kv, stride, pad).unwrap();
        close(g.value(y).unwrap().data(), &naive_conv(&x, &k, stride, pad));
    }
}

#[test]
fn dense_matches_direct_loops() {
    let r = &mut rng(5);
    let (x, w, b) = (random_tensor(&[3, 4], r), random_tensor(&[4, 2], r), random_tensor(&[2], r));
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.dense(xv, wv, bv).unwrap();
    let mut want = vec![0.0; 6];
    for i in 0..3 {
        for j in 0..2 {
            want[i * 2 + j] = b.data()[j] + (0..4).map(|k| x.data()[i * 4 + k] * w.data()[k * 2 + j]).sum::<f64>();
        }
    }
    close(g.value(y).unwrap().data(), &want);
}

#[test]
fn maxpool_and_average_values() {
    let x = Tensor::new(vec![1, 1, 2, 4], vec![1.0, 5.0, -1.0, 0.0, 3.0, 2.0, -2.0, -3.0]).unwrap();
    let mut g = Graph::new();
    let xv = g.constant(x);
    let p = g.maxpool2x2(xv).unwrap();
    assert_eq!(g.value(p).unwrap().data(), &[5.0, 0.0]);
    let a = g.global_avg_pool(xv).unwrap();
    assert_eq!(g.value(a).unwrap().data(), &[0.625]);
}

#[test]
fn log_softmax_rows_normalise() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2, 3], vec![1000.0, 1001.0, 999.0, -3.0, 0.0, 3.0]).unwrap());
    let y = g.log_softmax(x).unwrap();
    for row in g.value(y).unwrap().rows() {
        let total: f64 = row.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn unreached_leaves_get_zero_gradient() {
    let mut g = Graph::new();
    let a = g.leaf(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
    let unused = g.leaf(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().with_grad());
    let s = g.sum(a).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(a).unwrap(), &[1.0, 1.0]);
    assert_eq!(grads.get(unused).unwrap(), &[0.0, 0.0, 0.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::new();
    let a = g.leaf(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
    assert!(matches!(g.backward(a), Err(Error::Contract(_))));
}

#[test]
fn mismatched_shapes_are_dimension_errors() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.add(a, b), Err(Error::Dimension(_))));
    let k = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
    let x = g.constant(Tensor::zeros(&[1, 1, 5, 5]));
    assert!(matches!(g.conv2d(x, k, 1, 0), Err(Error::Dimension(_))));
}

#[test]
fn overflow_is_a_numeric_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::full(&[2], 1e300));
    assert!(matches!(g.scale(a, 1e300), Err(Error::Numeric(_))));
}
