mod common;

use common::gradcheck::*;
use hybridsent::layers::HeadActivation;

fn assert_small(name: &str, err: f64) {
    assert!(err < TOLERANCE, "{name}: relative error {err:e}");
}

#[test]
fn conv1d_odd_and_even_kernels() {
    for (kernel, seed) in [(3, 1), (4, 2), (1, 3), (6, 4)] {
        assert_small(&format!("conv kernel {kernel}"), check_conv1d(kernel, seed));
    }
}

#[test]
fn maxpool_shapes() {
    for (len, pool, stride) in [(6, 2, 2), (5, 2, 2), (7, 3, 2), (4, 3, 1)] {
        assert_small(&format!("pool {len} {pool} {stride}"), check_maxpool(len, pool, stride, len as u64));
    }
}

#[test]
fn dense_heads() {
    for head in [HeadActivation::Sigmoid, HeadActivation::NormalizedSigmoid, HeadActivation::Softmax] {
        assert_small(head.name(), check_dense(head, 5));
    }
}

#[test]
fn lstm_cell_step_and_sequences() {
    assert_small("step", check_lstm_step(6));
    assert_small("forward sequence", check_lstm_sequence(false, 7));
    assert_small("reverse sequence", check_lstm_sequence(true, 8));
}

#[test]
fn bilstm() {
    assert_small("bilstm", check_bilstm(9));
}

#[test]
fn encoder_parts() {
    assert_small("attention", check_attention(10));
    assert_small("layer norm", check_layer_norm(11));
    assert_small("feed-forward", check_feed_forward(12));
    assert_small("embedding", check_embedding(13));
    assert_small("encoder", check_encoder(14));
}

#[test]
fn all_scenarios_end_to_end() {
    for s in 1..=8 {
        assert_small(&format!("scenario {s}"), check_scenario(s, HeadActivation::default(), s as u64));
    }
    assert_small("scenario 1 sigmoid", check_scenario(1, HeadActivation::Sigmoid, 21));
    assert_small("scenario 6 softmax", check_scenario(6, HeadActivation::Softmax, 22));
}
