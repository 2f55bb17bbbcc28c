use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakdns::autodiff::gradcheck::check_inputs;
use weakdns::autodiff::{Graph, ParamStore, Tensor, Var};
use weakdns::Result;

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-3;

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Contract `y` with fixed random weights so the upstream gradient is not
/// all ones.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let n = g.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(g.shape(y).to_vec(), rand_vec(n, &mut rng))?;
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check<F>(name: &str, shapes: &[Vec<usize>], build: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    let inputs: Vec<(Vec<usize>, Vec<f64>)> = shapes
        .iter()
        .map(|s| (s.clone(), rand_vec(s.iter().product(), &mut rng)))
        .collect();
    let report = check_inputs(
        &inputs,
        |g, v| {
            let y = build(g, v)?;
            weighted_sum(g, y, 99)
        },
        EPS,
        100,
        1,
    )
    .unwrap();
    assert!(report.passes(TOL), "{name}: {report:?}");
}

#[test]
fn elementwise_ops() {
    let s = vec![vec![3, 4], vec![3, 4]];
    check("add", &s, |g, v| g.add(v[0], v[1]));
    check("sub", &s, |g, v| g.sub(v[0], v[1]));
    check("mul", &s, |g, v| g.mul(v[0], v[1]));
    check("max", &s, |g, v| g.maximum(v[0], v[1]));
    check("scale", &s[..1], |g, v| Ok(g.scale(v[0], -2.5)));
    check("add_scalar", &s[..1], |g, v| Ok(g.add_scalar(v[0], 0.7)));
    check("sigmoid", &s[..1], |g, v| Ok(g.sigmoid(v[0])));
    check("tanh", &s[..1], |g, v| Ok(g.tanh(v[0])));
    check("relu", &s[..1], |g, v| Ok(g.relu(v[0])));
    check("square", &s[..1], |g, v| Ok(g.square(v[0])));
    check("gate", &s[..1], |g, v| Ok(g.quality_gate(v[0])));
    check("complex_abs", &s, |g, v| g.complex_abs(v[0], v[1]));
    check("tanh_ratio", &s, |g, v| g.tanh_ratio(v[0], v[1]));
}

#[test]
fn tanh_ratio_near_origin() {
    // Exercise the series branch.
    let inputs = vec![
        (vec![4], vec![0.01, -0.02, 0.003, 0.04]),
        (vec![4], vec![-0.01, 0.015, 0.02, -0.001]),
    ];
    let r = check_inputs(
        &inputs,
        |g, v| {
            let f = g.tanh_ratio(v[0], v[1])?;
            weighted_sum(g, f, 3)
        },
        1e-4,
        8,
        0,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn reductions_and_shape_ops() {
    check("sum", &[vec![5, 2]], |g, v| Ok(g.sum(v[0])));
    check("mean", &[vec![5, 2]], |g, v| g.mean(v[0]));
    check("reshape", &[vec![6, 2]], |g, v| g.reshape(v[0], vec![3, 4]));
    check("concat0", &[vec![2, 3, 4], vec![1, 3, 4]], |g, v| g.concat(v, 0));
    check("concat1", &[vec![2, 3, 4], vec![2, 2, 4]], |g, v| g.concat(v, 1));
    check("slice", &[vec![4, 5, 3]], |g, v| g.slice(v[0], 1, 1, 4));
    check("mean_axis", &[vec![4, 5, 3]], |g, v| g.mean_axis(v[0], 2));
    check("max_frames", &[vec![4, 6, 3]], |g, v| g.reduce_max_over_frames(v[0]));
    check("matmul", &[vec![3, 5], vec![5, 2]], |g, v| g.matmul(v[0], v[1]));
}

#[test]
fn convolutions() {
    check("conv2d", &[vec![3, 6, 12], vec![4, 3, 3, 5], vec![4]], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), (1, 2))
    });
    check("conv2d_s22", &[vec![2, 7, 9], vec![3, 2, 3, 3], vec![3]], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), (2, 2))
    });
    check("conv_t", &[vec![4, 5, 6], vec![4, 3, 3, 5], vec![3]], |g, v| {
        g.conv_transpose2d(v[0], v[1], Some(v[2]), (1, 2))
    });
}

#[test]
fn sum_of_squares_gradient() {
    let mut s = ParamStore::<f64>::new();
    let id = s.add("p", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let mut g = Graph::new();
    let p = g.param(&s, id);
    let sq = g.square(p);
    let l = g.sum(sq);
    g.backward(l, &mut s).unwrap();
    assert_eq!(s.get(id).grad(), &[2.0, 4.0, 6.0]);
    // A second backward without zero_grad accumulates exactly.
    g.backward(l, &mut s).unwrap();
    assert_eq!(s.get(id).grad(), &[4.0, 8.0, 12.0]);
    s.zero_grad();
    assert_eq!(s.get(id).grad(), &[0.0; 3]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::<f64>::new();
    let x = g.input(vec![2], vec![1.0, 2.0], true).unwrap();
    let y = g.square(x);
    assert!(g.gradients(y).is_err());
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::<f64>::new();
    let a = g.input(vec![2, 3], vec![0.0; 6], true).unwrap();
    let b = g.input(vec![3, 2], vec![0.0; 6], true).unwrap();
    let e = g.add(a, b).unwrap_err().to_string();
    assert!(e.contains("add") && e.contains("[2, 3]") && e.contains("[3, 2]"), "{e}");
    let e = g.matmul(a, a).unwrap_err().to_string();
    assert!(e.contains("matmul"), "{e}");
    let w = g.input(vec![1, 5, 1, 1], vec![0.0; 5], true).unwrap();
    let x = g.input(vec![2, 3, 3], vec![0.0; 18], true).unwrap();
    assert!(g.conv2d(x, w, None, (1, 1)).unwrap_err().to_string().contains("conv2d"));
}

#[test]
fn gate_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.input(vec![4], vec![0.0, 1e3, -1e3, 40.0], false).unwrap();
    let y = g.quality_gate(x);
    let v = g.value(y);
    assert!((v[0] - 2.84).abs() < 1e-15);
    for &q in v {
        assert!(q > 1.04 && q < 4.64, "{q}");
    }
    let mut g32 = Graph::<f32>::new();
    let x = g32.input(vec![2], vec![1e4, -1e4], false).unwrap();
    let y = g32.quality_gate(x);
    assert!(g32.value(y)[0] < 4.64f32 && g32.value(y)[1] > 1.04f32);
}

#[test]
fn identity_kernel_conv() {
    let mut g = Graph::<f64>::new();
    let data: Vec<f64> = (0..9).map(f64::from).collect();
    let x = g.input(vec![1, 3, 3], data.clone(), false).unwrap();
    let w = g.input(vec![1, 1, 1, 1], vec![1.0], false).unwrap();
    let y = g.conv2d(x, w, None, (1, 1)).unwrap();
    assert_eq!(g.value(y), data.as_slice());
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_t(y)> with the same kernel.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::<f64>::new();
    let x = g.input(vec![2, 6, 10], rand_vec(120, &mut rng), false).unwrap();
    let w = g.input(vec![3, 2, 3, 5], rand_vec(90, &mut rng), false).unwrap();
    let cx = g.conv2d(x, w, None, (1, 2)).unwrap();
    assert_eq!(g.shape(cx), &[3, 6, 5]);
    let y = g.input(vec![3, 6, 5], rand_vec(90, &mut rng), false).unwrap();
    let ty = g.conv_transpose2d(y, w, None, (1, 2)).unwrap();
    assert_eq!(g.shape(ty), &[2, 6, 10]);
    let lhs: f64 = g.value(cx).iter().zip(g.value(y)).map(|(a, b)| a * b).sum();
    let rhs: f64 = g.value(x).iter().zip(g.value(ty)).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12);
}
