//! Analytic gradients against central differences of independent float64
//! implementations. Shared by the unit tests and the acceptance runner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tidygrad::autograd::{conv2d, finite_difference_check, finite_difference_check_with, linear, softmax_cross_entropy};
use tidygrad::nn::Layer;
use tidygrad::tensor::{broadcast_shapes, ConvGeometry};
use tidygrad::{build_model, ModelConfig, Result, Tensor, Variable};

const INSTANCES: u64 = 20;
const TOL: f64 = 1e-3;
const H: f64 = 1e-3;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| r.gen_range(-1.0f32..1.0)).collect()
}

/// Values bounded away from zero, so relu kinks stay outside the stencil.
fn off_zero(r: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let m = r.gen_range(0.05f32..1.0);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn param(v: Vec<f32>, shape: &[usize]) -> Variable {
    Variable::parameter(Tensor::from_vec(v, shape).unwrap())
}

fn f64s(v: &Variable) -> Vec<f64> {
    v.data().to_f64_vec().unwrap()
}

/// Projects a tensor output onto fixed weights so the check sees a scalar.
fn project(y: Variable, weights: &[f32]) -> Result<Variable> {
    let c = Variable::constant(Tensor::from_vec(weights.to_vec(), &y.shape())?);
    y.mul(&c)?.sum()
}

fn dot(a: &[f64], w: &[f32]) -> f64 {
    a.iter().zip(w).map(|(x, &c)| x * c as f64).sum()
}

fn assert_check(what: &str, report: tidygrad::autograd::GradCheckReport) {
    assert!(
        report.passed,
        "{what}: max relative error {:.3e}\nanalytic {:?}\nnumeric  {:?}",
        report.max_rel_error, report.analytic, report.numeric
    );
}

fn broadcast_index(flat: usize, out: &[usize], src: &[usize]) -> usize {
    let mut rem = flat;
    let mut idx = 0;
    let mut stride = 1;
    for d in (0..out.len()).rev() {
        let i = rem % out[d];
        rem /= out[d];
        let sd = d as isize - (out.len() - src.len()) as isize;
        if sd >= 0 {
            let ext = src[sd as usize];
            idx += if ext == 1 { 0 } else { i } * stride;
            stride *= ext;
        }
    }
    idx
}

fn binary_case(seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut r = rng(seed);
    let rank = r.gen_range(1..=3);
    let full: Vec<usize> = (0..rank).map(|_| r.gen_range(1..=4)).collect();
    let a: Vec<usize> = full.iter().map(|&d| if r.gen_bool(0.3) { 1 } else { d }).collect();
    let b: Vec<usize> = full.iter().map(|&d| if r.gen_bool(0.3) { 1 } else { d }).collect();
    let drop = r.gen_range(0..rank);
    let b = b[drop..].to_vec();
    (broadcast_shapes(&a, &b).unwrap(), a, b)
}

fn check_binary(name: &str, op: fn(&Variable, &Variable) -> Result<Variable>, f: fn(f64, f64) -> f64) {
    for seed in 0..INSTANCES {
        let (out, sa, sb) = binary_case(seed);
        let mut r = rng(100 + seed);
        let na: usize = sa.iter().product();
        let nb: usize = sb.iter().product();
        let (a, b) = (param(uniform(&mut r, na), &sa), param(uniform(&mut r, nb), &sb));
        let n: usize = out.iter().product();
        let w = uniform(&mut r, n);
        let eval = |av: &[f64], bv: &[f64]| -> f64 {
            (0..n)
                .map(|i| f(av[broadcast_index(i, &out, &sa)], bv[broadcast_index(i, &out, &sb)]) * w[i] as f64)
                .sum()
        };
        let (a64, b64) = (f64s(&a), f64s(&b));
        let ra = finite_difference_check_with(|x| project(op(x, &b)?, &w), |p| eval(p, &b64), &a, H, TOL).unwrap();
        assert_check(&format!("{name} lhs {sa:?}"), ra);
        let rb = finite_difference_check_with(|x| project(op(&a, x)?, &w), |p| eval(&a64, p), &b, H, TOL).unwrap();
        assert_check(&format!("{name} rhs {sb:?}"), rb);
    }
}

pub fn add() {
    check_binary("add", |a, b| a.add(b), |x, y| x + y);
}

pub fn mul() {
    check_binary("mul", |a, b| a.mul(b), |x, y| x * y);
}

fn matmul_ref(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

pub fn matmul() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        let a = param(uniform(&mut r, m * k), &[m, k]);
        let b = param(uniform(&mut r, k * n), &[k, n]);
        let w = uniform(&mut r, m * n);
        let (a64, b64) = (f64s(&a), f64s(&b));
        let ra = finite_difference_check_with(
            |x| project(x.matmul(&b)?, &w),
            |p| dot(&matmul_ref(p, &b64, m, k, n), &w),
            &a,
            H,
            TOL,
        )
        .unwrap();
        assert_check("matmul lhs", ra);
        let rb = finite_difference_check_with(
            |x| project(a.matmul(x)?, &w),
            |p| dot(&matmul_ref(&a64, p, m, k, n), &w),
            &b,
            H,
            TOL,
        )
        .unwrap();
        assert_check("matmul rhs", rb);
    }
}

pub fn relu() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let n = r.gen_range(1..12);
        let x = param(off_zero(&mut r, n), &[n]);
        let w = uniform(&mut r, n);
        let rep = finite_difference_check_with(
            |x| project(x.relu()?, &w),
            |p| dot(&p.iter().map(|v| v.max(0.0)).collect::<Vec<_>>(), &w),
            &x,
            H,
            TOL,
        )
        .unwrap();
        assert_check("relu", rep);
    }
}

pub fn reshape_transpose_sum() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (a, b, c) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4));
        let x = param(uniform(&mut r, a * b * c), &[a, b, c]);
        let w = uniform(&mut r, a * b * c);

        // reshape keeps row-major order, so the projection is unchanged.
        let rep = finite_difference_check_with(|x| project(x.reshape(&[a * b, c])?, &w), |p| dot(p, &w), &x, H, TOL);
        assert_check("reshape", rep.unwrap());

        // transpose(0, 2): out[k, j, i] = x[i, j, k].
        let eval = |p: &[f64]| {
            let mut s = 0.0;
            for i in 0..a {
                for j in 0..b {
                    for k in 0..c {
                        s += p[(i * b + j) * c + k] * w[(k * b + j) * a + i] as f64;
                    }
                }
            }
            s
        };
        let rep = finite_difference_check_with(|x| project(x.transpose(0, 2)?, &w), eval, &x, H, TOL);
        assert_check("transpose", rep.unwrap());

        let sq = |x: &Variable| x.mul(x)?.sum();
        let rep = finite_difference_check_with(sq, |p| p.iter().map(|v| v * v).sum(), &x, H, TOL);
        assert_check("sum", rep.unwrap());
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_ref(
    x: &[f64],
    [b, c, h, wd]: [usize; 4],
    w: &[f64],
    [o, _, kh, kw]: [usize; 4],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * o * oh * ow];
    for n in 0..b {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = bias.map_or(0.0, |bb| bb[oc]);
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += x[((n * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * w[((oc * c + ic) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[((n * o + oc) * oh + y) * ow + xx] = s;
                }
            }
        }
    }
    out
}

pub fn conv2d_all_inputs() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (b, c, o) = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..3));
        let (kh, kw) = (r.gen_range(1..4), r.gen_range(1..4));
        let pad = r.gen_range(0..2);
        let stride = r.gen_range(1..3);
        let h = r.gen_range(kh.max(2)..6);
        let wd = r.gen_range(kw.max(2)..6);
        let geom = ConvGeometry { stride, padding: pad };
        let xs = [b, c, h, wd];
        let ws = [o, c, kh, kw];
        let x = param(uniform(&mut r, b * c * h * wd), &xs);
        let w = param(uniform(&mut r, o * c * kh * kw), &ws);
        let bias = param(uniform(&mut r, o), &[o]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let proj = uniform(&mut r, b * o * oh * ow);
        let (x64, w64, b64) = (f64s(&x), f64s(&w), f64s(&bias));
        let what = format!("conv2d x{xs:?} w{ws:?} s{stride} p{pad}");

        let rep = finite_difference_check_with(
            |v| project(conv2d(v, &w, Some(&bias), geom)?, &proj),
            |p| dot(&conv_ref(p, xs, &w64, ws, Some(&b64), stride, pad), &proj),
            &x,
            H,
            TOL,
        );
        assert_check(&format!("{what} input"), rep.unwrap());
        let rep = finite_difference_check_with(
            |v| project(conv2d(&x, v, Some(&bias), geom)?, &proj),
            |p| dot(&conv_ref(&x64, xs, p, ws, Some(&b64), stride, pad), &proj),
            &w,
            H,
            TOL,
        );
        assert_check(&format!("{what} weight"), rep.unwrap());
        let rep = finite_difference_check_with(
            |v| project(conv2d(&x, &w, Some(v), geom)?, &proj),
            |p| dot(&conv_ref(&x64, xs, &w64, ws, Some(p), stride, pad), &proj),
            &bias,
            H,
            TOL,
        );
        assert_check(&format!("{what} bias"), rep.unwrap());
    }
}

pub fn one_by_one_conv_is_a_scale() {
    let x = param(vec![1.0, -2.0, 3.5, 0.25], &[1, 1, 2, 2]);
    let w = Variable::parameter(Tensor::full(1.5, &[1, 1, 1, 1]));
    let y = conv2d(&x, &w, None, ConvGeometry::default()).unwrap();
    assert_eq!(y.data().to_vec::<f32>().unwrap(), [1.5, -3.0, 5.25, 0.375]);
    y.sum().unwrap().backward().join().unwrap();
    assert_eq!(x.grad().unwrap().to_vec::<f32>().unwrap(), [1.5; 4]);
    assert_eq!(w.grad().unwrap().to_vec::<f32>().unwrap(), [2.75]);
}

fn linear_ref(x: &[f64], w: &[f64], b: &[f64], batch: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * out];
    for n in 0..batch {
        for o in 0..out {
            y[n * out + o] = b[o] + (0..inp).map(|i| x[n * inp + i] * w[o * inp + i]).sum::<f64>();
        }
    }
    y
}

pub fn linear_all_inputs() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (batch, inp, out) = (r.gen_range(1..5), r.gen_range(1..6), r.gen_range(1..5));
        let x = param(uniform(&mut r, batch * inp), &[batch, inp]);
        let w = param(uniform(&mut r, out * inp), &[out, inp]);
        let b = param(uniform(&mut r, out), &[out]);
        let proj = uniform(&mut r, batch * out);
        let (x64, w64, b64) = (f64s(&x), f64s(&w), f64s(&b));
        let rep = finite_difference_check_with(
            |v| project(linear(v, &w, &b)?, &proj),
            |p| dot(&linear_ref(p, &w64, &b64, batch, inp, out), &proj),
            &x,
            H,
            TOL,
        );
        assert_check("linear x", rep.unwrap());
        let rep = finite_difference_check_with(
            |v| project(linear(&x, v, &b)?, &proj),
            |p| dot(&linear_ref(&x64, p, &b64, batch, inp, out), &proj),
            &w,
            H,
            TOL,
        );
        assert_check("linear weight", rep.unwrap());
        let rep = finite_difference_check_with(
            |v| project(linear(&x, &w, v)?, &proj),
            |p| dot(&linear_ref(&x64, &w64, p, batch, inp, out), &proj),
            &b,
            H,
            TOL,
        );
        assert_check("linear bias", rep.unwrap());
    }
}

fn sce_ref(logits: &[f64], labels: &[i32], classes: usize) -> f64 {
    let batch = labels.len();
    let mut total = 0.0;
    for n in 0..batch {
        let row = &logits[n * classes..(n + 1) * classes];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[labels[n] as usize];
    }
    total / batch as f64
}

pub fn softmax_cross_entropy_logits() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (batch, classes) = (r.gen_range(1..6), r.gen_range(2..8));
        let logits = param(uniform(&mut r, batch * classes).iter().map(|v| v * 4.0).collect(), &[batch, classes]);
        let labels: Vec<i32> = (0..batch).map(|_| r.gen_range(0..classes as i32)).collect();
        let lt = Tensor::from_vec(labels.clone(), &[batch]).unwrap();
        let rep = finite_difference_check_with(
            |v| softmax_cross_entropy(v, &lt),
            |p| sce_ref(p, &labels, classes),
            &logits,
            H,
            TOL,
        );
        assert_check("softmax_cross_entropy", rep.unwrap());
    }
}

pub fn uniform_logits_gradient_is_softmax_minus_onehot_over_batch() {
    let (batch, classes) = (4, 10);
    let logits = Variable::parameter(Tensor::full(0.3, &[batch, classes]));
    let labels = Tensor::from_vec(vec![0i32, 3, 9, 3], &[batch]).unwrap();
    let loss = softmax_cross_entropy(&logits, &labels).unwrap();
    assert!((loss.data().item().unwrap() - 10f32.ln()).abs() < 1e-6);
    loss.backward().join().unwrap();
    let g = logits.grad().unwrap().to_vec::<f32>().unwrap();
    let lv = labels.to_vec::<i32>().unwrap();
    for n in 0..batch {
        for c in 0..classes {
            let onehot = if lv[n] == c as i32 { 1.0 } else { 0.0 };
            let want = (0.1 - onehot) / batch as f32;
            assert!((g[n * classes + c] - want).abs() < 1e-7);
        }
    }
}

pub fn fan_out_accumulates_both_paths() {
    // y = sum(x * x): x feeds the product twice, so dy/dx = 2x.
    let mut r = rng(9);
    let x = param(uniform(&mut r, 6), &[6]);
    let rep = finite_difference_check_with(|x| x.mul(x)?.sum(), |p| p.iter().map(|v| v * v).sum(), &x, H, TOL);
    assert_check("fan-out", rep.unwrap());
}

pub fn float32_differences_on_a_well_scaled_input() {
    let x = param(vec![0.5, -1.0, 1.5], &[3]);
    let rep = finite_difference_check(|x| x.mul(x)?.sum(), &x, 1e-2, TOL).unwrap();
    assert_check("float32 differences", rep);
}

/// Float64 forward pass of either architecture from flattened parameters.
fn model_loss(cfg: &ModelConfig, params: &[Vec<f64>], x: &[f64], batch: usize, labels: &[i32]) -> f64 {
    let [c, h, w] = cfg.input_shape;
    let relu = |v: Vec<f64>| v.into_iter().map(|a| a.max(0.0)).collect::<Vec<_>>();
    let logits = match cfg.arch {
        tidygrad::nn::Arch::Mlp => {
            let mut widths = vec![c * h * w];
            widths.extend(&cfg.widths);
            widths.push(cfg.classes);
            let mut a = x.to_vec();
            for (l, pair) in widths.windows(2).enumerate() {
                a = linear_ref(&a, &params[2 * l], &params[2 * l + 1], batch, pair[0], pair[1]);
                if l + 2 < widths.len() {
                    a = relu(a);
                }
            }
            a
        }
        tidygrad::nn::Arch::SmallCnn => {
            let (c1, c2) = (cfg.widths[0], cfg.widths[1]);
            let out = |n: usize| (n + 2 - 3) / 2 + 1;
            let a = relu(conv_ref(x, [batch, c, h, w], &params[0], [c1, c, 3, 3], Some(&params[1]), 2, 1));
            let (h1, w1) = (out(h), out(w));
            let a = relu(conv_ref(&a, [batch, c1, h1, w1], &params[2], [c2, c1, 3, 3], Some(&params[3]), 2, 1));
            let feat = c2 * out(h1) * out(w1);
            linear_ref(&a, &params[4], &params[5], batch, feat, cfg.classes)
        }
    };
    sce_ref(&logits, labels, cfg.classes)
}

fn check_model(cfg_for: impl Fn(u64) -> ModelConfig) {
    for seed in 0..INSTANCES {
        let cfg = cfg_for(seed);
        let model = build_model(&cfg).unwrap();
        let mut r = rng(500 + seed);
        let batch = r.gen_range(1..4);
        let n = batch * cfg.input_features();
        let mut shape = vec![batch];
        shape.extend(cfg.input_shape);
        let xv = uniform(&mut r, n);
        let x = Variable::constant(Tensor::from_vec(xv.clone(), &shape).unwrap());
        let x64: Vec<f64> = xv.iter().map(|&v| v as f64).collect();
        let labels: Vec<i32> = (0..batch).map(|_| r.gen_range(0..cfg.classes as i32)).collect();
        let lt = Tensor::from_vec(labels.clone(), &[batch]).unwrap();
        let params = model.parameters();
        let base: Vec<Vec<f64>> = params.iter().map(|(_, p)| f64s(p)).collect();
        for (i, (name, p)) in params.iter().enumerate() {
            let f = |_: &Variable| softmax_cross_entropy(&model.c(&x).join()?, &lt);
            let reference = |probe: &[f64]| {
                let mut ps = base.clone();
                ps[i] = probe.to_vec();
                model_loss(&cfg, &ps, &x64, batch, &labels)
            };
            // A small step keeps relu kinks out of the stencil; the float64
            // reference has no cancellation problem at this size.
            let rep = finite_difference_check_with(f, reference, p, 1e-5, TOL).unwrap();
            assert_check(&format!("{:?} seed {seed} {name}", cfg.arch), rep);
        }
    }
}

pub fn mlp_parameters() {
    check_model(|seed| ModelConfig {
        arch: tidygrad::nn::Arch::Mlp,
        widths: if seed % 2 == 0 { vec![7] } else { vec![6, 5] },
        input_shape: [1, 3, 3],
        classes: 4,
        seed,
    });
}

pub fn small_cnn_parameters() {
    check_model(|seed| ModelConfig::small_cnn([2, 6, 5], [3, 4], 3, seed));
}

/// Every check, by name.
pub const CHECKS: &[(&str, fn())] = &[
    ("add", add),
    ("mul", mul),
    ("matmul", matmul),
    ("relu", relu),
    ("reshape_transpose_sum", reshape_transpose_sum),
    ("conv2d_all_inputs", conv2d_all_inputs),
    ("one_by_one_conv_is_a_scale", one_by_one_conv_is_a_scale),
    ("linear_all_inputs", linear_all_inputs),
    ("softmax_cross_entropy_logits", softmax_cross_entropy_logits),
    ("uniform_logits_gradient_is_softmax_minus_onehot_over_batch", uniform_logits_gradient_is_softmax_minus_onehot_over_batch),
    ("fan_out_accumulates_both_paths", fan_out_accumulates_both_paths),
    ("float32_differences_on_a_well_scaled_input", float32_differences_on_a_well_scaled_input),
    ("mlp_parameters", mlp_parameters),
    ("small_cnn_parameters", small_cnn_parameters),
];
