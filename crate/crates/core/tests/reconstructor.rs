use filterbench::recon::{batch_gradient, UNet, UNetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(net: &UNet<f64>, x: &[f64], t: &[f64]) -> f64 {
    UNet::mse(&net.forward(x), t)
}

fn flat_get(net: &mut UNet<f64>, idx: usize) -> &mut f64 {
    let mut i = idx;
    for t in net.tensors_mut() {
        if i < t.len() {
            return &mut t[i];
        }
        i -= t.len();
    }
    unreachable!("index within parameter count")
}

#[test]
fn gradient_matches_central_differences() {
    let cfg = UNetConfig { input_size: 4, depth: 2, base_channels: 2 };
    let mut net = UNet::<f64>::new(cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..48).map(|_| rng.random()).collect();
    let t: Vec<f64> = (0..48).map(|_| rng.random()).collect();
    let (_, grad) = batch_gradient(&net, &[(&x, &t)]);
    let mut grad = grad;
    let total = net.param_count();
    let h = 1e-4;
    for _ in 0..10 {
        let idx = rng.random_range(0..total);
        let analytic = *flat_get(&mut grad, idx);
        let orig = *flat_get(&mut net, idx);
        *flat_get(&mut net, idx) = orig + h;
        let up = loss(&net, &x, &t);
        *flat_get(&mut net, idx) = orig - h;
        let down = loss(&net, &x, &t);
        *flat_get(&mut net, idx) = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        assert!(rel < 1e-3, "param {idx}: analytic {analytic} numeric {numeric}");
    }
}

#[test]
fn skips_are_added_per_resolution() {
    // With every transposed conv zeroed, decoder stage 0 sees only the
    // stage-0 skip, so deeper encoder weights cannot reach the output.
    let cfg = UNetConfig { input_size: 16, depth: 3, base_channels: 4 };
    let mut net = UNet::<f64>::new(cfg, 2).unwrap();
    for stage in &mut net.decoder {
        stage.up.weight.iter_mut().for_each(|w| *w = 0.0);
        stage.up.bias.iter_mut().for_each(|w| *w = 0.0);
    }
    let x: Vec<f64> = (0..3 * 256).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
    let base = net.forward(&x);

    let mut deeper = net.clone();
    deeper.encoder[0].down.weight.iter_mut().for_each(|w| *w += 0.5);
    deeper.encoder[1].conv.weight.iter_mut().for_each(|w| *w -= 0.3);
    deeper.encoder[2].down.bias.iter_mut().for_each(|w| *w += 1.0);
    assert_eq!(deeper.forward(&x), base);

    let mut shallow = net.clone();
    shallow.encoder[0].conv.bias.iter_mut().for_each(|w| *w += 0.5);
    assert_ne!(shallow.forward(&x), base);
}
