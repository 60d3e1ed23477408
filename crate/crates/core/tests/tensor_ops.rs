mod common;

use abutment_core::tensor::{grad_check, Axis, Graph, Tensor, TensorError, Var};
use rand::Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.5..1.5))
}

/// Weighted sum with fixed irregular weights so every output entry matters.
fn probe(g: &mut Graph, v: Var) -> Result<Var, TensorError> {
    let t = g.value(v);
    let w = Tensor::from_fn(t.rows(), t.cols(), |i, j| 0.3 + ((i * 7 + j * 3) % 5) as f64 * 0.37);
    let w = g.constant(w);
    let m = g.mul(v, w)?;
    Ok(g.sum(m))
}

fn check(name: &str, inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>) {
    let err = grad_check(
        |g, v| {
            let out = f(g, v)?;
            probe(g, out)
        },
        inputs,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "{name}: max relative error {err:e}");
}

#[test]
fn every_op_passes_finite_differences() {
    let mut r = common::rng(11);
    let a = random(&mut r, 4, 5);
    let b = random(&mut r, 5, 3);
    let c = random(&mut r, 4, 5);
    let row = random(&mut r, 1, 5);
    let sq = random(&mut r, 4, 4);

    check("matmul", &[a.clone(), b.clone()], |g, v| g.matmul(v[0], v[1]));
    check("add", &[a.clone(), c.clone()], |g, v| g.add(v[0], v[1]));
    check("add row broadcast", &[a.clone(), row.clone()], |g, v| g.add(v[0], v[1]));
    check("sub", &[a.clone(), c.clone()], |g, v| g.sub(v[0], v[1]));
    check("mul", &[a.clone(), c.clone()], |g, v| g.mul(v[0], v[1]));
    check("scale", &[a.clone()], |g, v| Ok(g.scale(v[0], -2.5)));
    check("concat rows", &[a.clone(), c.clone()], |g, v| g.concat(&[v[0], v[1]], Axis::Rows));
    check("concat cols", &[a.clone(), sq.clone()], |g, v| g.concat(&[v[0], v[1]], Axis::Cols));
    check("slice rows", &[a.clone()], |g, v| g.slice(v[0], Axis::Rows, 1, 3));
    check("slice cols", &[a.clone()], |g, v| g.slice(v[0], Axis::Cols, 2, 5));
    check("transpose", &[a.clone()], |g, v| Ok(g.transpose(v[0])));
    check("reshape", &[a.clone()], |g, v| g.reshape(v[0], &[2, 10]));
    check("softmax cols", &[a.clone()], |g, v| Ok(g.softmax(v[0], Axis::Cols)));
    check("softmax rows", &[a.clone()], |g, v| Ok(g.softmax(v[0], Axis::Rows)));
    check("layer_norm", &[a.clone(), row.clone(), random(&mut r, 1, 5)], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-6));
    check("gelu", &[a.clone()], |g, v| Ok(g.gelu(v[0])));
    check("linear", &[a.clone(), b.clone(), random(&mut r, 1, 3)], |g, v| g.linear(v[0], v[1], v[2]));
    check("mean_pool rows", &[a.clone()], |g, v| g.mean_pool(v[0], Axis::Rows));
    check("mean_pool cols", &[a.clone()], |g, v| g.mean_pool(v[0], Axis::Cols));
    check("max_pool rows", &[a.clone()], |g, v| g.max_pool(v[0], Axis::Rows));
    check("max_pool cols", &[a.clone()], |g, v| g.max_pool(v[0], Axis::Cols));
    check("embedding_lookup", &[a.clone()], |g, v| g.embedding_lookup(v[0], &[3, 0, 3, 1]));
    check("square", &[a.clone()], |g, v| Ok(g.square(v[0])));
    check("sum", &[a.clone()], |g, v| Ok(g.sum(v[0])));
    check("mean", &[a.clone()], |g, v| g.mean(v[0]));
    check("smooth_l1", &[a.clone(), c.clone()], |g, v| g.smooth_l1(v[0], v[1], 1.0));
    let p = random(&mut r, 3, 12);
    let q = random(&mut r, 3, 9);
    check("chamfer", &[p.clone(), q.clone()], |g, v| g.chamfer(v[0], v[1], false));
    check("chamfer squared", &[p, q], |g, v| g.chamfer(v[0], v[1], true));
}

#[test]
fn matmul_with_identity_is_identity() {
    let a = random(&mut common::rng(1), 5, 4);
    let mut g = Graph::new();
    let va = g.constant(a.clone());
    let vi = g.constant(Tensor::identity(4));
    let out = g.matmul(va, vi).unwrap();
    assert_eq!(g.value(out).values(), a.values());
}

#[test]
fn softmax_rows_sum_to_one() {
    let a = random(&mut common::rng(2), 6, 7);
    let mut g = Graph::new();
    let va = g.constant(a);
    let s = g.softmax(va, Axis::Cols);
    for i in 0..6 {
        let total: f64 = g.value(s).row(i).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn backward_of_summed_product_is_ones_times_b_transposed() {
    let mut r = common::rng(3);
    let a = random(&mut r, 3, 4);
    let b = random(&mut r, 4, 5);
    let mut g = Graph::new();
    let va = g.input(a);
    let vb = g.constant(b.clone());
    let m = g.matmul(va, vb).unwrap();
    let s = g.sum(m);
    let grads = g.backward(s);
    let ga = grads.get(va).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let expected: f64 = (0..5).map(|j| b.get(k, j)).sum();
            assert!((ga[i * 4 + k] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_layer_check_is_tight() {
    let mut r = common::rng(4);
    let inputs = [random(&mut r, 3, 4), random(&mut r, 4, 2), random(&mut r, 1, 2)];
    let err = grad_check(
        |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            probe(g, y)
        },
        &inputs,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn layer_norm_then_gelu_chain() {
    let mut r = common::rng(5);
    let inputs = [random(&mut r, 5, 6), random(&mut r, 1, 6), random(&mut r, 1, 6)];
    let err = grad_check(
        |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-6)?;
            let y = g.gelu(y);
            probe(g, y)
        },
        &inputs,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-3, "{err:e}");
}

#[test]
fn constant_function_has_zero_gradient_both_ways() {
    let a = random(&mut common::rng(6), 3, 3);
    let err = grad_check(|g, _| Ok(g.constant(Tensor::scalar(4.0))), &[a.clone()], 1e-4).unwrap();
    assert_eq!(err, 0.0);
    let mut g = Graph::new();
    let va = g.input(a);
    let c = g.constant(Tensor::scalar(4.0));
    let grads = g.backward(c);
    assert!(grads.get(va).is_none_or(|s| s.iter().all(|x| *x == 0.0)));
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[4, 5]));
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut r = common::rng(9);
        let a = random(&mut r, 8, 8);
        let w = random(&mut r, 8, 8);
        let mut g = Graph::new();
        let va = g.constant(a);
        let vw = g.constant(w);
        let m = g.matmul(va, vw).unwrap();
        let s = g.softmax(m, Axis::Cols);
        let y = g.gelu(s);
        g.value(y).values().to_vec()
    };
    let (x, y) = (run(), run());
    assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
}
