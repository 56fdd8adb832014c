use sodkit_core::gradcheck::{self, GradcheckReport, NETWORK_TOLERANCE, OP_TOLERANCE, REGISTERED};
use sodkit_core::{Shape, Tape, Tensor};

fn check(op: &str, seed: u64) -> GradcheckReport {
    let r = gradcheck::gradcheck(op, seed).unwrap();
    assert!(r.pass, "{r}");
    assert!(r.checked > 0);
    r
}

#[test]
fn every_operation_passes_on_three_seeds() {
    for op in gradcheck::operation_names() {
        for seed in 0..3 {
            let r = check(op, seed);
            assert_eq!(r.tolerance, OP_TOLERANCE);
        }
    }
}

#[test]
fn modules_pass() {
    for op in ["edge_gate", "efaba_forward", "gdal_forward"] {
        check(op, 7);
    }
}

#[test]
fn whole_network_passes() {
    let r = check("network", 0);
    assert_eq!(r.tolerance, NETWORK_TOLERANCE);
}

#[test]
fn registry_is_complete() {
    for op in ["conv2d", "sigmoid", "softmax_lastdim", "bmm", "batchnorm", "sobel_magnitude", "network"] {
        assert!(REGISTERED.contains(&op));
    }
    assert!(gradcheck::gradcheck("nosuchop", 0).is_err());
}

#[test]
fn simple_gradients() {
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.5, -1.0, 2.0, 3.0]).unwrap();
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let s = tape.sum(v);
    let g = tape.backward(s).unwrap();
    assert!(g.get(v).unwrap().data().iter().all(|&d| d == 1.0));

    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let sq = tape.mul(v, v).unwrap();
    let s = tape.sum(sq);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(v).unwrap(), &x.map(|a| 2.0 * a));
}
