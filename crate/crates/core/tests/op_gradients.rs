//! Every graph op against central differences at random points.

use hire_core::tensor::{finite_diff_check, rng, Graph, Tensor, TensorError, Var};
use rand::Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;
const POINTS: usize = 100;

type Build = fn(&mut Graph, Var) -> Result<Var, TensorError>;

/// Reduce any tensor to a scalar with fixed non-uniform weights so every
/// output coordinate matters.
fn weighted_sum(g: &mut Graph, y: Var) -> Result<Var, TensorError> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect())?;
    let w = g.constant(w);
    g.dot(y, w)
}

fn check(name: &str, len: usize, lo: f64, hi: f64, build: Build) {
    let mut r = rng::stream(11, name, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..POINTS {
        let x = Tensor::vector((0..len).map(|_| r.gen_range(lo..hi)).collect());
        let err = finite_diff_check(
            |g, x| {
                let y = build(g, x)?;
                weighted_sum(g, y)
            },
            &x,
            EPS,
        )
        .unwrap();
        worst = worst.max(err);
    }
    assert!(worst <= TOL, "{name}: worst relative error {worst:e}");
}

fn halves(g: &mut Graph, x: Var) -> Result<(Var, Var), TensorError> {
    let n = g.shape(x)[0] / 2;
    Ok((g.slice(x, 0, 0, n)?, g.slice(x, 0, n, n)?))
}

#[test]
fn elementwise_ops() {
    check("add", 6, -2.0, 2.0, |g, x| {
        let (a, b) = halves(g, x)?;
        g.add(a, b)
    });
    check("sub", 6, -2.0, 2.0, |g, x| {
        let (a, b) = halves(g, x)?;
        g.sub(a, b)
    });
    check("mul", 6, -2.0, 2.0, |g, x| {
        let (a, b) = halves(g, x)?;
        g.mul(a, b)
    });
    check("scale", 4, -2.0, 2.0, |g, x| g.scale(x, -1.7));
    check("add_const", 4, -2.0, 2.0, |g, x| g.add_const(x, 0.4));
    check("tanh", 5, -2.0, 2.0, |g, x| g.tanh(x));
    check("exp", 5, -2.0, 2.0, |g, x| g.exp(x));
    check("ln", 5, 0.5, 3.0, |g, x| g.ln(x));
    check("sqrt", 5, 0.5, 3.0, |g, x| g.sqrt(x));
    check("recip", 5, 0.5, 3.0, |g, x| g.recip(x));
    // keep away from the kink at 0
    check("relu", 5, 0.01, 2.0, |g, x| g.relu(x));
    check("relu_neg", 5, -2.0, -0.01, |g, x| g.relu(x));
}

#[test]
fn reductions_and_shapes() {
    check("mul_scalar", 5, -2.0, 2.0, |g, x| {
        let a = g.slice(x, 0, 0, 4)?;
        let s = g.slice(x, 0, 4, 1)?;
        g.mul_scalar(a, s)
    });
    check("norm", 4, -2.0, 2.0, |g, x| g.norm(x));
    check("sum", 4, -2.0, 2.0, |g, x| g.sum(x));
    check("sum_rows", 6, -2.0, 2.0, |g, x| {
        let m = g.reshape(x, &[2, 3])?;
        g.sum_rows(m)
    });
    check("sum_cols", 6, -2.0, 2.0, |g, x| {
        let m = g.reshape(x, &[2, 3])?;
        g.sum_cols(m)
    });
    check("mean_rows", 6, -2.0, 2.0, |g, x| {
        let m = g.reshape(x, &[3, 2])?;
        g.mean_rows(m)
    });
    check("broadcast_rows", 3, -2.0, 2.0, |g, x| g.broadcast_rows(x, 4));
    check("broadcast_cols", 3, -2.0, 2.0, |g, x| g.broadcast_cols(x, 2));
    check("transpose", 6, -2.0, 2.0, |g, x| {
        let m = g.reshape(x, &[2, 3])?;
        g.transpose(m)
    });
    check("concat_cols", 12, -2.0, 2.0, |g, x| {
        let (a, b) = halves(g, x)?;
        let a = g.reshape(a, &[2, 3])?;
        let b = g.reshape(b, &[2, 3])?;
        let c = g.concat(&[b, a], 1)?;
        g.mul(c, c)
    });
    check("slice_cols", 6, -2.0, 2.0, |g, x| {
        let m = g.reshape(x, &[2, 3])?;
        let s = g.slice(m, 1, 1, 2)?;
        g.mul(s, s)
    });
    check("stack_row", 6, -2.0, 2.0, |g, x| {
        let (a, b) = halves(g, x)?;
        let m = g.stack(&[a, b, a])?;
        let r = g.row(m, 1)?;
        let s = g.sum_rows(m)?;
        g.mul(r, s)
    });
}

#[test]
fn matrix_ops() {
    check("matmul", 12, -2.0, 2.0, |g, x| {
        let (a, b) = halves(g, x)?;
        let a = g.reshape(a, &[2, 3])?;
        let b = g.reshape(b, &[3, 2])?;
        g.matmul(a, b)
    });
    check("softmax", 6, -3.0, 3.0, |g, x| {
        let m = g.reshape(x, &[2, 3])?;
        g.softmax(m)
    });
    check("softmax_vec", 5, -3.0, 3.0, |g, x| g.softmax(x));
    check("cosine", 8, -2.0, 2.0, |g, x| {
        let (a, b) = halves(g, x)?;
        g.cosine(a, b)
    });
    check("layer_norm", 12, -2.0, 2.0, |g, x| {
        let m = g.slice(x, 0, 0, 8)?;
        let m = g.reshape(m, &[2, 4])?;
        let gain = g.slice(x, 0, 8, 2)?;
        let gain = g.concat(&[gain, gain], 0)?;
        let bias = g.slice(x, 0, 10, 2)?;
        let bias = g.concat(&[bias, bias], 0)?;
        g.layer_norm(m, gain, bias, 1e-5)
    });
    check("linear", 9, -2.0, 2.0, |g, x| {
        let a = g.slice(x, 0, 0, 4)?;
        let a = g.reshape(a, &[2, 2])?;
        let w = g.slice(x, 0, 4, 4)?;
        let w = g.reshape(w, &[2, 2])?;
        let b = g.slice(x, 0, 8, 1)?;
        let b = g.concat(&[b, b], 0)?;
        let y = g.linear(a, w, Some(b))?;
        g.tanh(y)
    });
}

/// Differentiate a recorded gradient and compare with central differences
/// of the first-order gradient.
#[test]
fn second_order_matches_differences_of_gradients() {
    fn inner(g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        // smooth function mixing most ops used by the scoring path
        let (a, b) = {
            let a = g.slice(x, 0, 0, 3)?;
            let b = g.slice(x, 0, 3, 3)?;
            (a, b)
        };
        let s = g.dot(a, b)?;
        let p = g.mul_scalar(b, s)?;
        let q = g.add(p, a)?;
        let n = g.norm(q)?;
        let t = g.tanh(a)?;
        let u = g.sum(t)?;
        g.add(n, u)
    }
    let mut r = rng::stream(3, "second-order", &[]);
    for _ in 0..20 {
        let x = Tensor::vector((0..6).map(|_| r.gen_range(-1.5..1.5)).collect());
        // directional second derivative: d/dx <grad f(x), w>
        let err = finite_diff_check(
            |g, x| {
                let f = inner(g, x)?;
                let grad = g.grad(f, &[x], true)?[0];
                weighted_sum(g, grad)
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(err <= TOL, "second-order error {err:e}");
    }
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let x = g.param(Tensor::matrix(3, 4, (0..12).map(|i| (i as f64).sin()).collect()).unwrap());
        let s = g.softmax(x).unwrap();
        let t = g.transpose(s).unwrap();
        let m = g.matmul(x, t).unwrap();
        let n = g.norm(m).unwrap();
        g.backward(n).unwrap()[0].1.clone()
    };
    let a = run();
    let b = run();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}
