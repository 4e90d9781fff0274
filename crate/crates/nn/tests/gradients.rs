//! Finite-difference checks of every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strokepose_nn::gradcheck::{central_difference, relative_error};
use strokepose_nn::init::normal_tensor;
use strokepose_nn::{Graph, NodeId, ParamId, ParamStore, Result, Tensor};

/// Builds a loss from the store and returns it as f64.
type Builder = dyn Fn(&mut Graph<'_>) -> Result<NodeId>;

fn check_all(store: &mut ParamStore, build: &Builder, samples_per_param: usize, tol: f64) {
    let grads = {
        let mut g = Graph::new(store);
        let loss = build(&mut g).unwrap();
        g.backward(loss).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let analytic = grads.get(id).expect("every param reached").clone();
        let n = store.value(id).numel();
        for _ in 0..samples_per_param.min(n) {
            let i = rng.gen_range(0..n);
            let numeric = central_difference(store, id, i, 1e-2, |s| {
                let mut g = Graph::new(s);
                let loss = build(&mut g)?;
                Ok(g.value(loss).data()[0] as f64)
            })
            .unwrap();
            let a = analytic.data()[i] as f64;
            let err = relative_error(a, numeric, 1e-3);
            assert!(
                err < tol,
                "{}[{i}]: analytic {a} numeric {numeric} rel {err}",
                store.name(id)
            );
        }
    }
}

fn store_with(shapes: &[(&str, &[usize])], seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in shapes {
        store
            .insert(*name, normal_tensor(shape, 0.5, &mut rng))
            .unwrap();
    }
    store
}

fn target(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn conv_relu_pool_upsample_chain() {
    let mut store = store_with(
        &[
            ("x", &[3, 6, 6]),
            ("c1.weight", &[4, 3, 3, 3]),
            ("c1.bias", &[4]),
            ("c2.weight", &[2, 4, 5, 5]),
            ("c2.bias", &[2]),
            ("c3.weight", &[2, 2, 1, 1]),
            ("c3.bias", &[2]),
        ],
        1,
    );
    let t = target(&[2, 6, 6], 2);
    let build = move |g: &mut Graph<'_>| -> Result<NodeId> {
        let s = g.store();
        let p = |n: &str| s.id(n).unwrap();
        let (x, w1, b1, w2, b2, w3, b3) = (
            p("x"),
            p("c1.weight"),
            p("c1.bias"),
            p("c2.weight"),
            p("c2.bias"),
            p("c3.weight"),
            p("c3.bias"),
        );
        let x = g.param(x);
        let (w1, b1, w2, b2, w3, b3) = (
            g.param(w1),
            g.param(b1),
            g.param(w2),
            g.param(b2),
            g.param(w3),
            g.param(b3),
        );
        let h = g.conv2d(x, w1, b1)?;
        let h = g.relu(h);
        let h = g.max_pool2(h)?;
        let h = g.conv2d(h, w2, b2)?;
        let h = g.upsample2(h)?;
        let h = g.conv2d(h, w3, b3)?;
        g.mse(h, &t)
    };
    check_all(&mut store, &build, 12, 2e-2);
}

#[test]
fn concat_add_sum_and_joint_mix() {
    let mut store = store_with(
        &[
            ("a", &[3, 4, 4]),
            ("b", &[3, 4, 4]),
            ("c", &[3, 4, 4]),
            ("mix.weight", &[3, 3]),
            ("mix.bias", &[3]),
            ("k.weight", &[3, 6, 3, 3]),
            ("k.bias", &[3]),
        ],
        3,
    );
    let t1 = target(&[3, 4, 4], 4);
    let t2 = target(&[3, 4, 4], 5);
    let build = move |g: &mut Graph<'_>| -> Result<NodeId> {
        let s = g.store();
        let ids: Vec<ParamId> = [
            "a",
            "b",
            "c",
            "mix.weight",
            "mix.bias",
            "k.weight",
            "k.bias",
        ]
        .iter()
        .map(|n| s.id(n).unwrap())
        .collect();
        let n: Vec<NodeId> = ids.into_iter().map(|id| g.param(id)).collect();
        let cat = g.concat(&[n[0], n[1]])?;
        let conv = g.conv2d(cat, n[5], n[6])?;
        let sum = g.add(conv, n[2])?;
        let mixed = g.joint_mix(&[n[0], sum, n[2]], n[3], n[4])?;
        let l1 = g.mse(mixed, &t1)?;
        let l2 = g.mse(sum, &t2)?;
        g.sum(&[l1, l2])
    };
    check_all(&mut store, &build, 10, 2e-2);
}

#[test]
fn frozen_params_get_no_gradient() {
    let mut store = store_with(&[("w.weight", &[1, 1, 3, 3]), ("w.bias", &[1])], 7);
    let wid = store.id("w.weight").unwrap();
    store.set_trainable(wid, false);
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::full(&[1, 4, 4], 1.0));
    let w = g.param(wid);
    let b = g.param(store.id("w.bias").unwrap());
    let y = g.conv2d(x, w, b).unwrap();
    let loss = g.mse(y, &Tensor::zeros(&[1, 4, 4])).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(wid).is_none());
    assert!(grads.get(store.id("w.bias").unwrap()).is_some());
}

#[test]
fn labels_trace_wiring() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.labeled_input(Tensor::zeros(&[1, 2, 2]), "a");
    let b = g.labeled_input(Tensor::zeros(&[1, 2, 2]), "b");
    let c = g.labeled_input(Tensor::zeros(&[1, 2, 2]), "c");
    let ab = g.add(a, b).unwrap();
    let _ = g.concat(&[ab, c]).unwrap();
    assert_eq!(
        g.input_labels_reaching(ab),
        vec!["a".to_string(), "b".to_string()]
    );
}
