mod common;

use ccdm::tensor::{Tape, Tensor};
use common::{gradient_check, rng, weighted_sum};

const FD_STEP: f32 = 1e-3;
const FD_TOL: f64 = 1e-3;

/// Direct sliding-window convolution used as the oracle for the im2col path.
fn naive_conv(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let ks = k.shape();
    let (ko, kh, kw) = (ks[0], ks[2], ks[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0f32; n * ko * ho * wo];
    for b in 0..n {
        for o in 0..ko {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0f64;
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (oy * stride + i) as isize - pad as isize;
                                let ix = (ox * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv =
                                    x.data()[((b * c + ch) * h + iy as usize) * w + ix as usize];
                                let kv = k.data()[((o * c + ch) * kh + i) * kw + j];
                                acc += f64::from(xv) * f64::from(kv);
                            }
                        }
                    }
                    out[((b * ko + o) * ho + oy) * wo + ox] = acc as f32;
                }
            }
        }
    }
    Tensor::new(vec![n, ko, ho, wo], out).unwrap()
}

#[test]
fn conv_of_zero_input_is_zero() {
    let mut r = rng(1);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(vec![1, 1, 3, 3]));
    let k = tape.leaf(Tensor::randn(vec![4, 1, 3, 3], 1.0, &mut r));
    let y = tape.conv2d(x, k, 1, 1).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 4, 3, 3]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_of_scalars_is_product() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap());
    let k = tape.leaf(Tensor::new(vec![1, 1, 1, 1], vec![-1.5]).unwrap());
    let y = tape.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[-4.5]);
}

#[test]
fn conv_matches_sliding_window_oracle() {
    let mut r = rng(2);
    let x = Tensor::randn(vec![1, 2, 5, 5], 1.0, &mut r);
    let k = Tensor::randn(vec![3, 2, 3, 3], 1.0, &mut r);
    for (stride, pad) in [(1, 1), (1, 0), (2, 1), (2, 0)] {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let kv = tape.leaf(k.clone());
        let y = tape.conv2d(xv, kv, stride, pad).unwrap();
        let expected = naive_conv(&x, &k, stride, pad);
        assert_eq!(
            tape.value(y).shape(),
            expected.shape(),
            "stride {stride} pad {pad}"
        );
        for (a, b) in tape.value(y).data().iter().zip(expected.data()) {
            assert!(
                (a - b).abs() < 1e-5,
                "stride {stride} pad {pad}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn conv_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(vec![1, 2, 4, 4]));
    let k = tape.leaf(Tensor::zeros(vec![3, 5, 3, 3]));
    let msg = tape.conv2d(x, k, 1, 1).unwrap_err().to_string();
    assert!(
        msg.contains("[1, 2, 4, 4]") && msg.contains("[3, 5, 3, 3]"),
        "{msg}"
    );
    let k_even = tape.leaf(Tensor::zeros(vec![3, 2, 2, 2]));
    assert!(tape.conv2d(x, k_even, 1, 1).is_err());
    let k_ok = tape.leaf(Tensor::zeros(vec![3, 2, 3, 3]));
    assert!(tape.conv2d(x, k_ok, 3, 1).is_err());
}

#[test]
fn stride_two_then_upsample_round_trips_shape() {
    let mut r = rng(3);
    for (h, w) in [(4, 4), (8, 6), (16, 16)] {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(vec![2, 3, h, w], 1.0, &mut r));
        let k = tape.leaf(Tensor::randn(vec![3, 3, 3, 3], 1.0, &mut r));
        let d = tape.conv2d(x, k, 2, 1).unwrap();
        assert_eq!(tape.value(d).shape(), &[2, 3, h / 2, w / 2]);
        let u = tape.upsample2x(d).unwrap();
        assert_eq!(tape.value(u).shape(), &[2, 3, h, w]);
    }
}

#[test]
fn group_norm_constant_input_maps_to_shift() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(vec![1, 4, 3, 3], 2.5));
    let scale = tape.leaf(Tensor::full(vec![4], 1.0));
    let shift = tape.leaf(Tensor::zeros(vec![4]));
    let y = tape.group_norm(x, 2, scale, shift, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn group_norm_zero_scale_gives_shift() {
    let mut r = rng(4);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::randn(vec![2, 4, 3, 3], 3.0, &mut r));
    let scale = tape.leaf(Tensor::zeros(vec![4]));
    let shift = tape.leaf(Tensor::full(vec![4], -0.75));
    let y = tape.group_norm(x, 4, scale, shift, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == -0.75));
}

#[test]
fn group_norm_statistics_per_group() {
    let mut r = rng(5);
    let x = Tensor::randn(vec![2, 8, 4, 4], 2.0, &mut r);
    // shift each channel so groups have non-trivial means before normalization
    let mut x = x;
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v += (i / 16) as f32 * 0.3;
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let scale = tape.leaf(Tensor::full(vec![8], 1.0));
    let shift = tape.leaf(Tensor::zeros(vec![8]));
    let y = tape.group_norm(xv, 4, scale, shift, 1e-5).unwrap();
    let out = tape.value(y).data();
    // groups of 2 channels × 16 pixels = 32 contiguous values
    for block in out.chunks(32) {
        let mean = block.iter().map(|&v| f64::from(v)).sum::<f64>() / 32.0;
        let var = block
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / 32.0;
        assert!(mean.abs() < 1e-5, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }
}

#[test]
fn group_norm_rejects_indivisible_groups() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(vec![1, 6, 2, 2]));
    let s = tape.leaf(Tensor::zeros(vec![6]));
    let b = tape.leaf(Tensor::zeros(vec![6]));
    assert!(tape.group_norm(x, 4, s, b, 1e-5).is_err());
}

#[test]
fn silu_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![3], vec![0.0, 20.0, 1.0]).unwrap());
    let y = tape.silu(x);
    let v = tape.value(y).data();
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 20.0).abs() < 1e-4);
    // 1 / (1 + e^-1)
    assert!((v[2] - 0.731_058_6).abs() < 1e-5);
}

#[test]
fn backward_of_sum_and_square() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let s = tape.sum(p);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(p).unwrap(), &[1.0, 1.0]);

    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let sq = tape.mul(p, p).unwrap();
    let s = tape.sum(sq);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(p).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let q = tape.scale(p, 2.0);
    assert!(tape.backward(q).is_err());
}

#[test]
fn gradient_check_conv() {
    let mut r = rng(6);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let inputs = [
            Tensor::randn(vec![1, 2, 4, 4], 1.0, &mut r),
            Tensor::randn(vec![2, 2, 3, 3], 0.5, &mut r),
        ];
        let errs = gradient_check(&inputs, FD_STEP, |t, v| {
            let y = t.conv2d(v[0], v[1], stride, pad).unwrap();
            weighted_sum(t, y)
        });
        assert!(
            errs.iter().all(|&e| e < FD_TOL),
            "stride {stride} pad {pad}: {errs:?}"
        );
    }
    // pointwise path
    let inputs = [
        Tensor::randn(vec![2, 3, 3, 3], 1.0, &mut r),
        Tensor::randn(vec![2, 3, 1, 1], 0.5, &mut r),
    ];
    let errs = gradient_check(&inputs, FD_STEP, |t, v| {
        let y = t.conv2d(v[0], v[1], 1, 0).unwrap();
        weighted_sum(t, y)
    });
    assert!(errs.iter().all(|&e| e < FD_TOL), "{errs:?}");
}

#[test]
fn gradient_check_group_norm() {
    let mut r = rng(7);
    let inputs = [
        Tensor::randn(vec![2, 4, 2, 2], 1.0, &mut r),
        Tensor::randn(vec![4], 1.0, &mut r),
        Tensor::randn(vec![4], 1.0, &mut r),
    ];
    let errs = gradient_check(&inputs, FD_STEP, |t, v| {
        let y = t.group_norm(v[0], 2, v[1], v[2], 1e-5).unwrap();
        let y = t.mul(y, y).unwrap();
        weighted_sum(t, y)
    });
    assert!(errs.iter().all(|&e| e < FD_TOL), "{errs:?}");
}

#[test]
fn gradient_check_elementwise_and_reductions() {
    let mut r = rng(8);
    let a = Tensor::randn(vec![2, 3, 2, 2], 1.0, &mut r);
    let b = Tensor::randn(vec![2, 3, 2, 2], 1.0, &mut r);
    let inputs = [a, b];
    let errs = gradient_check(&inputs, FD_STEP, |t, v| {
        let s = t.silu(v[0]);
        let m = t.mul(s, v[1]).unwrap();
        let d = t.sub(m, v[0]).unwrap();
        let e = t.add(d, v[1]).unwrap();
        let f = t.scale(e, 0.7);
        weighted_sum(t, f)
    });
    assert!(errs.iter().all(|&e| e < FD_TOL), "{errs:?}");

    let errs = gradient_check(&inputs, FD_STEP, |t, v| t.mse(v[0], v[1]).unwrap());
    assert!(errs.iter().all(|&e| e < FD_TOL), "{errs:?}");
    let errs = gradient_check(&inputs[..1], FD_STEP, |t, v| {
        let sq = t.mul(v[0], v[0]).unwrap();
        t.mean(sq)
    });
    assert!(errs.iter().all(|&e| e < FD_TOL), "{errs:?}");
}

#[test]
fn gradient_check_linear_bias_channels() {
    let mut r = rng(9);
    let inputs = [
        Tensor::randn(vec![2, 3], 1.0, &mut r),
        Tensor::randn(vec![4, 3], 1.0, &mut r),
        Tensor::randn(vec![4], 1.0, &mut r),
        Tensor::randn(vec![2, 4, 2, 2], 1.0, &mut r),
        Tensor::randn(vec![4], 1.0, &mut r),
    ];
    let errs = gradient_check(&inputs, FD_STEP, |t, v| {
        let emb = t.linear(v[0], v[1], v[2]).unwrap();
        let emb = t.silu(emb);
        let h = t.add_channels(v[3], emb).unwrap();
        let h = t.add_bias(h, v[4]).unwrap();
        let h = t.mul(h, h).unwrap();
        weighted_sum(t, h)
    });
    assert!(errs.iter().all(|&e| e < FD_TOL), "{errs:?}");
}

#[test]
fn gradient_check_concat_upsample() {
    let mut r = rng(10);
    let inputs = [
        Tensor::randn(vec![2, 1, 2, 2], 1.0, &mut r),
        Tensor::randn(vec![2, 2, 2, 2], 1.0, &mut r),
    ];
    let errs = gradient_check(&inputs, FD_STEP, |t, v| {
        let c = t.concat(&[v[0], v[1]]).unwrap();
        let u = t.upsample2x(c).unwrap();
        let u = t.mul(u, u).unwrap();
        weighted_sum(t, u)
    });
    assert!(errs.iter().all(|&e| e < FD_TOL), "{errs:?}");
}

#[test]
fn gradient_check_three_layer_conv_net() {
    let mut r = rng(11);
    let inputs = [
        Tensor::randn(vec![1, 1, 4, 4], 1.0, &mut r),
        Tensor::randn(vec![2, 1, 3, 3], 0.5, &mut r),
        Tensor::randn(vec![2], 0.1, &mut r),
        Tensor::randn(vec![2, 2, 3, 3], 0.5, &mut r),
        Tensor::randn(vec![1, 2, 3, 3], 0.5, &mut r),
    ];
    let errs = gradient_check(&inputs, FD_STEP, |t, v| {
        let h = t.conv2d(v[0], v[1], 1, 1).unwrap();
        let h = t.add_bias(h, v[2]).unwrap();
        let h = t.silu(h);
        let h = t.conv2d(h, v[3], 2, 1).unwrap();
        let h = t.silu(h);
        let h = t.conv2d(h, v[4], 1, 1).unwrap();
        weighted_sum(t, h)
    });
    assert!(errs.iter().all(|&e| e < FD_TOL), "{errs:?}");
}

#[test]
fn operations_are_deterministic() {
    let mut r = rng(12);
    let x = Tensor::randn(vec![2, 4, 6, 6], 1.0, &mut r);
    let k = Tensor::randn(vec![4, 4, 3, 3], 1.0, &mut r);
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let kv = tape.leaf(k.clone());
        let s = tape.leaf(Tensor::full(vec![4], 1.0));
        let b = tape.leaf(Tensor::zeros(vec![4]));
        let y = tape.conv2d(xv, kv, 1, 1).unwrap();
        let y = tape.group_norm(y, 2, s, b, 1e-5).unwrap();
        let loss = weighted_sum(&mut tape, y);
        let g = tape.backward(loss).unwrap();
        (tape.value(y).data().to_vec(), g.get(kv).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}
