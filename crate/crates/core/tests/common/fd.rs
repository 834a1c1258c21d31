//! Central finite differences against analytic network gradients.

use higoc_core::nn::{Activation, Graph, Mlp, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn loss(net: &Mlp, x: &Tensor) -> f64 {
    net.forward(x).unwrap().data().iter().map(|y| y * y).sum()
}

/// Smallest distance of any ReLU pre-activation from its kink.
fn kink_margin(net: &Mlp, x: &Tensor) -> f64 {
    let (widths, acts) = (net.widths(), net.activations());
    let mut margin = f64::INFINITY;
    for l in 0..acts.len() {
        if acts[l] != Relu {
            continue;
        }
        let mut head = acts[..l].to_vec();
        head.push(Identity);
        let sub = Mlp::from_params(&widths[..l + 2], &head, net.params()[..2 * l + 2].to_vec()).unwrap();
        let pre = sub.forward(x).unwrap();
        margin = pre.data().iter().fold(margin, |m, v| m.min(v.abs()));
    }
    margin
}

/// Largest relative error over all parameters for one random net and batch.
/// Inputs are redrawn until no ReLU sits within 1e-3 of its kink, where
/// finite differences are meaningless.
pub fn worst_rel_error(widths: &[usize], acts: &[Activation], rng: &mut ChaCha8Rng) -> f64 {
    let mut net = Mlp::new(widths, acts, rng).unwrap();
    let rows = 3;
    let x = loop {
        let x = Tensor::matrix(rows, widths[0], (0..rows * widths[0]).map(|_| rng.random_range(-1.0..1.0)).collect());
        if kink_margin(&net, &x) > 1e-3 {
            break x;
        }
    };
    let mut g = Graph::new();
    let bound = net.bind(&mut g, true);
    let xv = g.constant(&x);
    let y = bound.forward(&mut g, xv);
    let sq = g.square(y);
    let l = g.sum(sq);
    let grads = bound.grads(&g.backward(l).unwrap(), &net);
    let mut worst: f64 = 0.0;
    for p in 0..grads.len() {
        for i in 0..grads[p].len() {
            let orig = net.params()[p].data()[i];
            net.params_mut()[p].data_mut()[i] = orig + H;
            let up = loss(&net, &x);
            net.params_mut()[p].data_mut()[i] = orig - H;
            let down = loss(&net, &x);
            net.params_mut()[p].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * H);
            let an = grads[p].data()[i];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

use Activation::{Identity, Relu, Tanh};

/// Every network shape the agents build, scaled down.
pub const ARCHITECTURES: [(&str, &[usize], &[Activation]); 6] = [
    ("goal critic", &[11, 16, 16, 1], &[Relu, Relu, Identity]),
    ("goal policy", &[9, 16, 16, 4], &[Relu, Relu, Identity]),
    ("cvae encoder", &[8, 16, 16, 8], &[Relu, Relu, Identity]),
    ("cvae decoder", &[8, 16, 16, 4], &[Relu, Relu, Identity]),
    ("flat critic", &[6, 16, 16, 1], &[Relu, Relu, Identity]),
    ("tanh", &[2, 8, 1], &[Tanh, Identity]),
];

/// Worst relative error over `cases` random nets of one architecture.
pub fn worst_over_cases(widths: &[usize], acts: &[Activation], cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases).map(|_| worst_rel_error(widths, acts, &mut rng)).fold(0.0, f64::max)
}
