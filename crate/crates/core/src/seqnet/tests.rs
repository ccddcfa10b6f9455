use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn zero_params_give_zero_state() {
    let p = CellParams::zeros(5, 3);
    let s = CellState::zeros(3);
    let x: SparseInput = vec![(0, 1.0), (3, -2.0)];
    let next = cell_forward(&p, &s, CellInput::Sparse(&x)).unwrap();
    assert!(next.h.iter().chain(&next.c).all(|&v| v == 0.0));
}

#[test]
fn width_mismatch_is_an_error() {
    let p = CellParams::zeros(2, 3);
    let s = CellState::zeros(3);
    assert!(cell_forward(&p, &s, CellInput::Sparse(&[(2, 1.0)])).is_err());
    assert!(cell_forward(&p, &s, CellInput::Dense(&[1.0])).is_err());
}

/// Scalar long-hand LSTM step used as an oracle.
fn scalar_step(w_x: [f64; 4], w_h: [f64; 4], b: [f64; 4], x: f64, h: f64, c: f64) -> (f64, f64) {
    let z: Vec<f64> = (0..4).map(|k| w_x[k] * x + w_h[k] * h + b[k]).collect();
    let (i, f, g, o) = (sig(z[0]), sig(z[1]), z[2].tanh(), sig(z[3]));
    let c2 = f * c + i * g;
    (o * c2.tanh(), c2)
}

#[test]
fn single_unit_matches_scalar_oracle() {
    let w_x = [0.5, -0.3, 0.8, 0.1];
    let w_h = [0.2, 0.7, -0.4, 0.9];
    let b = [0.05, 1.0, -0.1, 0.2];
    let mut p = CellParams::zeros(1, 1);
    p.w_in = w_x.to_vec();
    p.w_rec = w_h.to_vec();
    p.b_in = b.to_vec();
    let mut s = CellState::zeros(1);
    let (mut h, mut c) = (0.0, 0.0);
    for x in [1.0, -0.5, 2.0, 0.25] {
        s = cell_forward(&p, &s, CellInput::Dense(&[x])).unwrap();
        (h, c) = scalar_step(w_x, w_h, b, x, h, c);
        assert!((s.h[0] - h).abs() < 1e-15 && (s.c[0] - c).abs() < 1e-15);
    }
}

#[test]
fn zero_input_converges_to_fixed_point() {
    let mut p = CellParams::zeros(2, 1);
    p.w_rec = vec![0.3, 0.2, -0.5, 0.4];
    p.b_in = vec![0.1, -0.5, 0.6, 0.3];
    let mut s = CellState::zeros(1);
    let mut last = f64::INFINITY;
    for _ in 0..100 {
        let next = cell_forward(&p, &s, CellInput::Sparse(&[])).unwrap();
        let delta = ((next.h[0] - s.h[0]).powi(2) + (next.c[0] - s.c[0]).powi(2)).sqrt();
        assert!(delta <= last, "{delta} > {last}");
        last = delta;
        s = next;
    }
    assert!(last < 1e-10);
}

#[test]
fn one_layer_stack_is_cell_plus_projection() {
    let mut r = rng(1);
    let stack = StackParams::init(6, 4, 1, 5, 0.0, &mut r);
    let x: SparseInput = vec![(1, 1.0), (4, 0.5)];
    let states = stack.zero_states();
    let (next, logits) = stack.forward(&states, &x, None).unwrap();
    let cell = cell_forward(&stack.cells[0], &states[0], CellInput::Sparse(&x)).unwrap();
    assert_eq!(next[0], cell);
    let mut expected = Vec::new();
    stack.projection.apply(&cell.h, &mut expected);
    assert_eq!(logits, expected);
}

#[test]
fn zero_dropout_train_equals_eval() {
    let mut r = rng(2);
    let mut stack = StackParams::init(6, 4, 3, 5, 0.0, &mut r);
    stack.inter_layer_dropout = 0.0;
    let x: SparseInput = vec![(2, 1.0)];
    let s = stack.zero_states();
    let mut dr = rng(3);
    let train = stack.forward(&s, &x, Some(&mut dr)).unwrap();
    let eval = stack.forward(&s, &x, None).unwrap();
    assert_eq!(train, eval);
}

#[test]
fn two_layers_compose_single_layer_references() {
    let mut r = rng(4);
    let stack = StackParams::init(5, 3, 2, 4, 0.0, &mut r);
    let inputs: Vec<SparseInput> = vec![vec![(0, 1.0)], vec![(3, 1.0), (4, -1.0)], vec![]];
    let mut states = stack.zero_states();
    let mut s0 = CellState::zeros(3);
    let mut s1 = CellState::zeros(3);
    let mut scratch = StepScratch::default();
    let mut fast = Vec::new();
    for x in &inputs {
        let (next, logits) = stack.forward(&states, x, None).unwrap();
        s0 = cell_forward(&stack.cells[0], &s0, CellInput::Sparse(x)).unwrap();
        s1 = cell_forward(&stack.cells[1], &s1, CellInput::Dense(&s0.h)).unwrap();
        let mut expected = Vec::new();
        stack.projection.apply(&s1.h, &mut expected);
        assert_eq!(logits, expected);
        let mut in_place = states.clone();
        stack.step(&mut in_place, x, &mut fast, &mut scratch);
        assert_eq!(fast, logits);
        assert_eq!(in_place, next);
        states = next;
    }
}

fn random_sequence(r: &mut ChaCha8Rng, steps: usize, width: usize) -> Vec<SparseInput> {
    (0..steps)
        .map(|_| {
            let mut v: SparseInput = Vec::new();
            for i in 0..width {
                if r.gen_bool(0.5) {
                    v.push((i, r.gen_range(-1.0..1.0)));
                }
            }
            v
        })
        .collect()
}

fn loss_of(stack: &StackParams, inputs: &[SparseInput], targets: &[Option<usize>], loss_width: usize) -> f64 {
    let mut g = stack.zeros_like();
    bptt_gradients(stack, inputs, targets, loss_width, 1.0, &mut g, None).unwrap()
}

#[test]
fn bptt_matches_central_differences() {
    let mut r = rng(11);
    for layers in [1usize, 2] {
        let stack = StackParams::init(5, 4, layers, 6, 0.0, &mut r);
        let inputs = random_sequence(&mut r, 5, 5);
        let targets = vec![None, None, Some(2), Some(0), Some(4)];
        let mut grads = stack.zeros_like();
        bptt_gradients(&stack, &inputs, &targets, 5, 1.0, &mut grads, None).unwrap();
        let analytic: Vec<f64> = grads.blocks().iter().flat_map(|b| b.iter().copied()).collect();
        let step = 1e-5;
        let mut idx = 0;
        let n_blocks = stack.blocks().len();
        for b in 0..n_blocks {
            let len = stack.blocks()[b].len();
            for j in 0..len {
                let mut plus = stack.clone();
                plus.blocks_mut()[b][j] += step;
                let mut minus = stack.clone();
                minus.blocks_mut()[b][j] -= step;
                let fd = (loss_of(&plus, &inputs, &targets, 5) - loss_of(&minus, &inputs, &targets, 5)) / (2.0 * step);
                let a = analytic[idx];
                let tol = 1e-4 * fd.abs().max(a.abs()) + 1e-7;
                assert!((fd - a).abs() <= tol, "layers={layers} block={b} j={j}: fd={fd} analytic={a}");
                idx += 1;
            }
        }
    }
}

#[test]
fn empty_prediction_range_gives_zero_gradients() {
    let mut r = rng(12);
    let stack = StackParams::init(5, 4, 2, 6, 0.0, &mut r);
    let inputs = random_sequence(&mut r, 4, 5);
    let mut grads = stack.zeros_like();
    let loss = bptt_gradients(&stack, &inputs, &[None; 4], 6, 1.0, &mut grads, None).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.blocks().iter().all(|b| b.iter().all(|&v| v == 0.0)));
}

#[test]
fn doubling_loss_doubles_gradients() {
    let mut r = rng(13);
    let stack = StackParams::init(5, 4, 2, 6, 0.0, &mut r);
    let inputs = random_sequence(&mut r, 4, 5);
    let targets = vec![Some(1), None, Some(3), Some(5)];
    let mut g1 = stack.zeros_like();
    let mut g2 = stack.zeros_like();
    let l1 = bptt_gradients(&stack, &inputs, &targets, 6, 1.0, &mut g1, None).unwrap();
    let l2 = bptt_gradients(&stack, &inputs, &targets, 6, 2.0, &mut g2, None).unwrap();
    assert!((l2 - 2.0 * l1).abs() < 1e-12);
    for (a, b) in g1.blocks().iter().zip(g2.blocks()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}

#[test]
fn bptt_with_fixed_dropout_stream_is_deterministic() {
    let mut r = rng(14);
    let stack = StackParams::init(5, 4, 3, 6, 0.3, &mut r);
    let inputs = random_sequence(&mut r, 6, 5);
    let targets = vec![Some(1); 6];
    let run = |seed| {
        let mut g = stack.zeros_like();
        let mut dr = rng(seed);
        let l = bptt_gradients(&stack, &inputs, &targets, 6, 1.0, &mut g, Some(&mut dr)).unwrap();
        (l, g)
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7).0, run(8).0);
}

#[test]
fn parameter_count_closed_form() {
    let mut r = rng(15);
    for (i, h, layers, o) in [(36, 64, 1, 14), (38, 8, 3, 12), (5, 4, 2, 6)] {
        let s = StackParams::init(i, h, layers, o, 0.0, &mut r);
        assert_eq!(s.num_params(), StackParams::count_params(i, h, layers, o));
    }
}

#[test]
fn input_dropout_behaviour() {
    let mut r = rng(16);
    let mut x = vec![1.5; 8];
    input_dropout(&mut x, 0.0, &mut r, true);
    assert_eq!(x, vec![1.5; 8]);
    input_dropout(&mut x, 0.7, &mut r, false);
    assert_eq!(x, vec![1.5; 8]);
    let n = 100_000;
    let mut mean = vec![0.0; 4];
    for _ in 0..n {
        let mut v = vec![2.0; 4];
        input_dropout(&mut v, 0.2, &mut r, true);
        for (m, x) in mean.iter_mut().zip(&v) {
            *m += x / n as f64;
        }
    }
    for m in mean {
        assert!((m - 2.0).abs() < 0.02, "{m}");
    }
}
