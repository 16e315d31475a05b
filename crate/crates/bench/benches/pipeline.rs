use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use sleeplite_bench::windows;
use sleeplite_core::hrv::{detect_r_peaks, window_features};
use sleeplite_core::quant::{calibrate, quantize};
use sleeplite_core::slcnn::build;
use sleeplite_core::{Scheme, TopologyConfig};

fn conv_forward(c: &mut Criterion) {
    let set = windows(Scheme::Win11, 240.0);
    let net = build(&TopologyConfig::default(), 1).unwrap();
    let mut g = c.benchmark_group("cnn_forward");
    for batch in [1usize, 32] {
        let xs: Vec<&[f32]> = set.windows[..batch].iter().map(|w| w.samples.as_slice()).collect();
        g.throughput(Throughput::Elements(batch as u64));
        g.bench_with_input(BenchmarkId::from_parameter(batch), &xs, |b, xs| {
            b.iter(|| net.predict_proba(black_box(xs)).unwrap())
        });
    }
    g.finish();
}

fn quantized_inference(c: &mut Criterion) {
    let set = windows(Scheme::Win11, 240.0);
    let net = build(&TopologyConfig::default(), 1).unwrap();
    let xs: Vec<&[f32]> = set.windows.iter().map(|w| w.samples.as_slice()).collect();
    let q = quantize(&net, &calibrate(&net, &xs[..64]).unwrap()).unwrap();
    c.bench_function("int8_inference", |b| b.iter(|| q.infer(black_box(xs[0])).unwrap()));
}

fn hrv_features(c: &mut Criterion) {
    let set = windows(Scheme::Win61, 240.0);
    let mut g = c.benchmark_group("hrv_features");
    g.sample_size(20);
    g.bench_function("win61_window", |b| b.iter(|| window_features(black_box(&set.windows[0]))));
    g.finish();
}

fn r_peaks(c: &mut Criterion) {
    let set = windows(Scheme::Win61, 240.0);
    let ecg: Vec<f64> = set.windows[0].samples.iter().map(|&v| v as f64).collect();
    c.bench_function("r_peak_detection_61s", |b| {
        b.iter(|| detect_r_peaks(black_box(&ecg), 128.0).unwrap())
    });
}

criterion_group!(benches, conv_forward, quantized_inference, hrv_features, r_peaks);
criterion_main!(benches);
