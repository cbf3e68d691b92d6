use ndarray::{Array, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smgarn_autograd::gradcheck::check_gradients;
use smgarn_autograd::{AutogradError, Graph, ParamStore};

fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    Array::from_iter((0..n).map(|_| rng.random_range(-scale..scale)))
        .into_shape_with_order(IxDyn(shape))
        .unwrap()
}

fn store_with(rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert("x", random(&[2, 3, 6, 5], rng, 1.0));
    s.insert("y", random(&[2, 3, 6, 5], rng, 1.0));
    s.insert("w3", random(&[4, 3, 3, 3], rng, 0.5));
    s.insert("b3", random(&[4], rng, 0.5));
    s.insert("w5", random(&[2, 6, 5, 5], rng, 0.3));
    s.insert("proj", random(&[2, 4, 6, 5], rng, 1.0));
    s
}

#[test]
fn composite_graph_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = store_with(&mut rng);
    let report = check_gradients::<AutogradError, _, _>(&mut store, &[], 60, 1e-5, &mut rng, |g| {
        let x = g.param("x")?;
        let y = g.param("y")?;
        let w3 = g.param("w3")?;
        let b3 = g.param("b3")?;
        let w5 = g.param("w5")?;
        let proj = g.param("proj")?;
        let xy = g.mul(x, y)?;
        let d = g.sub(xy, y)?;
        let cat = g.concat(&[d, x])?;
        let c5 = g.conv2d(cat, w5, None, 2)?;
        let sig = g.sigmoid(c5);
        let c3 = g.conv2d(x, w3, Some(b3), 1)?;
        let r = g.relu(c3);
        let sc = g.scale(r, 0.7);
        let cl = g.clamp(sc, -0.2, 0.4);
        let a = g.abs(xy);
        let am = g.mean(a);
        let p = g.mul(cl, proj)?;
        let ps = g.sum(p);
        let ss = g.sum(sig);
        let t = g.add(ps, ss)?;
        g.add(t, am)
    })
    .unwrap();
    assert!(report.max_rel_err() < 1e-5, "{:?}", report.worst());
}

#[test]
fn l1_gradient_is_sign_over_n() {
    let mut store = ParamStore::<f64>::new();
    store.insert("a", ndarray::arr1(&[1.0, 0.0, -2.0, 0.5]).into_dyn());
    let target = ndarray::arr1(&[0.5, 1.0, -2.5, 0.5]).into_dyn();
    let mut g = Graph::new(&store);
    let a = g.param("a").unwrap();
    let t = g.input(target);
    let l = g.l1(a, t).unwrap();
    assert!((g.scalar(l).unwrap() - 0.5).abs() < 1e-12);
    let grads = g.backward(l).unwrap();
    let ga = grads.get("a").unwrap();
    assert_eq!(ga.as_slice().unwrap(), &[0.25, -0.25, 0.25, 0.0]);
}

#[test]
fn shape_errors_surface() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let a = g.input(ArrayD::zeros(IxDyn(&[1, 2, 3, 3])));
    let b = g.input(ArrayD::zeros(IxDyn(&[1, 3, 3, 3])));
    assert!(g.add(a, b).is_err());
    assert!(g.param("missing").is_err());
    assert!(g.backward(a).is_err());
}

#[test]
fn unused_parameter_gets_no_entry_and_inputs_get_no_gradient() {
    let mut store = ParamStore::<f64>::new();
    store.insert("w", ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), 2.0));
    store.insert("unused", ArrayD::from_elem(IxDyn(&[3]), 1.0));
    let mut g = Graph::new(&store);
    let x = g.input(ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 3.0));
    let w = g.param("w").unwrap();
    let y = g.conv2d(x, w, None, 0).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.len(), 1);
    assert_eq!(grads.get("w").unwrap().iter().next(), Some(&12.0));
}
