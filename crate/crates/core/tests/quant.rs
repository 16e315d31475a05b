use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sleeplite_core::quant::{
    calibrate, qat_finetune, quantize, quantize_multiplier, read_quantized_bytes, requantize, write_quantized_bytes,
    QConv, QatConfig, QuantParams,
};
use sleeplite_core::slcnn::{build, train, LayerSpec, Network, TopologyConfig, TrainConfig};
use sleeplite_core::ApneaClass;

/// Four classes told apart by a bump position.
fn toy(n: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<ApneaClass>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        let c = ApneaClass::ALL[i % 4];
        let centre = [8.0, 24.0, 40.0, 56.0][c.index()] + rng.gen_range(-2.0f32..2.0);
        let x = (0..64)
            .map(|t| {
                let d = (t as f32 - centre) / 3.0;
                2.0 * (-d * d).exp() + 0.2 * rng.gen_range(-1.0f32..1.0)
            })
            .collect();
        xs.push(x);
        ys.push(c);
    }
    (xs, ys)
}

fn small_topology() -> TopologyConfig {
    TopologyConfig {
        input_len: 64,
        conv_filters: vec![4, 6],
        conv_kernels: vec![5, 3],
        pool_size: 2,
        dropout: 0.1,
        input_batchnorm: true,
    }
}

fn refs(v: &[Vec<f32>]) -> Vec<&[f32]> {
    v.iter().map(|x| x.as_slice()).collect()
}

fn trained(seed: u64) -> Network<f32> {
    let (tx, ty) = toy(384, seed);
    let (vx, vy) = toy(64, seed + 100);
    let cfg = TrainConfig {
        epochs: 12,
        batch_size: 32,
        learning_rate: 5e-3,
        seed,
        ..TrainConfig::default()
    };
    let net = build(&small_topology(), seed).unwrap();
    train(net, &refs(&tx), &ty, &refs(&vx), &vy, &cfg).unwrap().network
}

fn accuracy(pred: &[ApneaClass], truth: &[ApneaClass]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// Independent requantization: exact quotient and remainder in i128.
fn requantize_oracle(acc: i32, m0: i32, shift: u32) -> i64 {
    let p = acc as i128 * m0 as i128;
    let d = 1i128 << shift;
    let (q, r) = (p.abs() / d, p.abs() % d);
    let mag = if 2 * r >= d { q + 1 } else { q };
    (p.signum() * mag) as i64
}

proptest! {
    #[test]
    fn requantize_matches_exact_division(acc in -(1i32 << 30)..(1i32 << 30), m in 1e-6f64..0.99) {
        let (m0, shift) = quantize_multiplier(m).unwrap();
        prop_assert_eq!(requantize(acc, m0, shift), requantize_oracle(acc, m0, shift));
    }

    #[test]
    fn requantize_matches_float_simulation(acc in -(1i32 << 20)..(1i32 << 20), m in 1e-4f64..0.99) {
        // |acc · m0| < 2^51, so the float product and quotient are exact.
        let (m0, shift) = quantize_multiplier(m).unwrap();
        let sim = (acc as f64 * m0 as f64 / 2f64.powi(shift as i32)).round() as i64;
        prop_assert_eq!(requantize(acc, m0, shift), sim);
    }

    #[test]
    fn weight_round_trip_within_half_step(w in prop::collection::vec(-3.0f64..3.0, 1..200)) {
        prop_assume!(w.iter().any(|v| *v != 0.0));
        let p = QuantParams::symmetric(&w).unwrap();
        for &v in &w {
            prop_assert!((p.dequantize(p.quantize(v)) - v).abs() <= p.scale / 2.0 + 1e-12);
        }
    }

    #[test]
    fn activation_round_trip_and_clamping(lo in -5.0f64..0.5, width in 0.1f64..10.0, t in 0.0f64..1.0, out in 0.1f64..100.0) {
        let hi = lo + width;
        let p = QuantParams::asymmetric(lo, hi).unwrap();
        let v = lo + t * width;
        prop_assert!((p.dequantize(p.quantize(v)) - v).abs() <= p.scale / 2.0 + 1e-12);
        let (rmin, rmax) = p.representable();
        prop_assert_eq!(p.quantize(rmax + out), 127);
        prop_assert_eq!(p.quantize(rmin - out), -128);
    }

    #[test]
    fn widening_the_range_only_coarsens(lo in -5.0f64..0.0, hi in 0.1f64..5.0, grow in 1.0f64..4.0, t in 0.0f64..1.0) {
        let narrow = QuantParams::asymmetric(lo, hi).unwrap();
        let wide = QuantParams::asymmetric(lo * grow, hi * grow).unwrap();
        prop_assert!(wide.scale >= narrow.scale * (1.0 - 1e-12));
        let v = lo + t * (hi - lo);
        let err = (wide.dequantize(wide.quantize(v)) - v).abs();
        prop_assert!(err <= wide.scale / 2.0 + 1e-12);
    }
}

#[test]
fn integer_conv_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..50 {
        let (in_ch, out_ch, kernel, len) = (rng.gen_range(1..4), rng.gen_range(1..4), [1, 3, 5, 4][trial % 4], rng.gen_range(4..20));
        let input = QuantParams::asymmetric(-1.0, rng.gen_range(0.5..3.0)).unwrap();
        let output = QuantParams::asymmetric(0.0, rng.gen_range(1.0..6.0)).unwrap();
        let weight = QuantParams::symmetric(&[0.7]).unwrap();
        let (multiplier, shift) = quantize_multiplier(input.scale * weight.scale / output.scale).unwrap();
        let conv = QConv {
            source: 0,
            in_ch,
            out_ch,
            kernel,
            len,
            weights: (0..out_ch * in_ch * kernel).map(|_| rng.gen_range(-127..=127)).collect(),
            weight,
            bias: (0..out_ch).map(|_| rng.gen_range(-5000..5000)).collect(),
            input,
            output,
            multiplier,
            shift,
            fused_relu: trial % 2 == 0,
        };
        let x: Vec<i8> = (0..in_ch * len).map(|_| rng.gen()).collect();
        let got = conv.forward(&x);
        let pad = (kernel as i64 - 1) / 2;
        for o in 0..out_ch {
            for l in 0..len {
                let mut acc = conv.bias[o] as i64;
                for c in 0..in_ch {
                    for t in 0..kernel {
                        let p = l as i64 + t as i64 - pad;
                        if (0..len as i64).contains(&p) {
                            let xv = x[c * len + p as usize] as i64 - input.zero_point as i64;
                            acc += conv.weights[(o * in_ch + c) * kernel + t] as i64 * xv;
                        }
                    }
                }
                let lo = if conv.fused_relu { output.zero_point as i64 } else { -128 };
                let want = (requantize_oracle(acc as i32, multiplier, shift) + output.zero_point as i64).clamp(lo, 127);
                assert_eq!(got[o * len + l] as i64, want, "trial {trial} o {o} l {l}");
            }
        }
    }
}

#[test]
fn calibration_is_deterministic_and_needs_windows() {
    let net = trained(1);
    let (xs, _) = toy(100, 5);
    let a = calibrate(&net, &refs(&xs)).unwrap();
    let b = calibrate(&net, &refs(&xs)).unwrap();
    assert_eq!(a, b);
    assert!(a.activations.iter().all(|p| p.scale > 0.0));
    assert!(calibrate(&net, &[]).is_err());
    assert!(calibrate(&net, &refs(&xs[..10])).is_err());
}

#[test]
fn quantized_network_tracks_its_float_source() {
    let net = trained(2);
    let (cx, _) = toy(128, 6);
    let (ex, ey) = toy(1000, 7);
    let calib = calibrate(&net, &refs(&cx)).unwrap();
    let q = quantize(&net, &calib).unwrap();
    assert_eq!(q.topology, net.layers);

    for (source, p) in q.weight_params() {
        let deq = q.dequantized_weights(source).unwrap();
        assert_eq!(deq.len(), net.weight(source).len());
        for (d, w) in deq.iter().zip(net.weight(source)) {
            assert!((d - *w as f64).abs() <= p.scale / 2.0 + 1e-12);
        }
    }

    let xs = refs(&ex);
    let int_pred = q.predict(&xs).unwrap();
    let float_pred = net.predict(&xs).unwrap();
    let mut ref_agree = 0;
    for (x, p) in xs.iter().zip(&int_pred) {
        let r = q.reference_forward(x).unwrap();
        let best = (0..4).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
        ref_agree += usize::from(ApneaClass::ALL[best] == *p);
    }
    assert!(ref_agree >= 990, "integer vs fake-quant reference agreement {ref_agree}/1000");
    let float_agree = accuracy(&int_pred, &float_pred);
    assert!(float_agree >= 0.97, "integer vs float agreement {float_agree}");
    assert!(accuracy(&float_pred, &ey) > 0.9);
}

#[test]
fn zero_window_propagates_zero_points() {
    let layers = vec![
        LayerSpec::Conv1d { in_ch: 1, out_ch: 3, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Maxpool1d { size: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: 48, outputs: 4 },
        LayerSpec::Softmax,
    ];
    let net = Network::<f32>::from_layers(32, layers, 3).unwrap();
    let (xs, _) = toy(64, 8);
    let xs: Vec<Vec<f32>> = xs.into_iter().map(|x| x[..32].to_vec()).collect();
    let q = quantize(&net, &calibrate(&net, &refs(&xs)).unwrap()).unwrap();
    let zero = vec![0.0f32; 32];
    assert!(q.infer_accumulators(&zero).unwrap().iter().all(|&a| a == 0));
    let p = q.infer(&zero).unwrap();
    let f = net.forward(&zero).unwrap();
    for c in 0..4 {
        assert_eq!(p[c], 0.25);
        assert!((f[c] - 0.25).abs() < 1e-7);
    }
}

#[test]
fn export_round_trips() {
    let net = trained(3);
    let (cx, _) = toy(64, 9);
    let q = quantize(&net, &calibrate(&net, &refs(&cx)).unwrap()).unwrap();
    let bytes = write_quantized_bytes(&q);
    assert_eq!(&bytes[..4], b"SLQN");
    let back = read_quantized_bytes(&bytes).unwrap();
    assert_eq!(write_quantized_bytes(&back), bytes);
    for x in &cx {
        assert_eq!(back.infer_accumulators(x).unwrap(), q.infer_accumulators(x).unwrap());
    }
    assert!(read_quantized_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(read_quantized_bytes(&bad).is_err());
}

#[test]
fn qat_zero_epochs_is_identity() {
    let net = trained(4);
    let (cx, cy) = toy(64, 10);
    let calib = calibrate(&net, &refs(&cx)).unwrap();
    let cfg = QatConfig { epochs: 0, ..QatConfig::default() };
    assert_eq!(qat_finetune(&net, &calib, &refs(&cx), &cy, &cfg).unwrap(), net);
}

#[test]
fn qat_does_not_lose_quantized_accuracy() {
    for seed in 0..5 {
        let net = trained(20 + seed);
        let (tx, ty) = toy(384, 40 + seed);
        let (ex, ey) = toy(400, 60 + seed);
        let calib = calibrate(&net, &refs(&tx)).unwrap();
        let ptq = quantize(&net, &calib).unwrap();
        let cfg = QatConfig { seed, ..QatConfig::default() };
        let tuned = qat_finetune(&net, &calib, &refs(&tx), &ty, &cfg).unwrap();
        let qat = quantize(&tuned, &calibrate(&tuned, &refs(&tx)).unwrap()).unwrap();
        let a_ptq = accuracy(&ptq.predict(&refs(&ex)).unwrap(), &ey);
        let a_qat = accuracy(&qat.predict(&refs(&ex)).unwrap(), &ey);
        assert!(a_qat >= a_ptq - 0.005, "seed {seed}: qat {a_qat} ptq {a_ptq}");
    }
}
