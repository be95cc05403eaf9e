use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shiftform_core::geometry::{ball_volume, kak_decompose, sample_ball, BallSpec};
use shiftform_core::lattice::enumerate_gamma;
use shiftform_core::search::min_gap;
use shiftform_core::{seeds, QuadraticForm, SearchProblem, Signature};

fn search(c: &mut Criterion) {
    let q1 = QuadraticForm::determinant_form();
    let mut group = c.benchmark_group("min_gap_q1");
    for t in [16.0, 64.0, 256.0] {
        let prob = SearchProblem::new(
            q1.clone(),
            vec![0.1234, 0.5678, 0.9012, 0.3456],
            2f64.sqrt(),
            t,
        );
        group.bench_with_input(BenchmarkId::from_parameter(t), &prob, |b, p| {
            b.iter(|| min_gap(p).unwrap())
        });
    }
    group.finish();
}

fn lattice(c: &mut Criterion) {
    let form = QuadraticForm::standard(Signature::new(2, 1)).unwrap();
    let mut group = c.benchmark_group("enumerate_gamma_2_1");
    group.sample_size(10);
    for t in [4.0, 8.0, 16.0] {
        group.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| enumerate_gamma(&form, t).unwrap())
        });
    }
    group.finish();
}

fn geometry(c: &mut Criterion) {
    let sig = Signature::new(3, 2);
    let spec = BallSpec::new(sig, 50.0).unwrap();
    let mut rng = seeds::stream(1, "bench", 0);
    let samples: Vec<_> = (0..64)
        .map(|_| sample_ball(&spec, &mut rng).unwrap())
        .collect();
    c.bench_function("kak_decompose_3_2", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % samples.len();
            kak_decompose(sig, &samples[i]).unwrap()
        })
    });
    c.bench_function("sample_ball_3_2", |b| {
        b.iter(|| sample_ball(&spec, &mut rng).unwrap())
    });
    for sig in [
        Signature::new(2, 1),
        Signature::new(4, 2),
        Signature::new(3, 3),
    ] {
        let spec = BallSpec::new(sig, 1e3).unwrap();
        c.bench_function(&format!("ball_volume_{}_{}", sig.p, sig.q), |b| {
            b.iter(|| ball_volume(&spec).unwrap())
        });
    }
}

criterion_group!(benches, search, lattice, geometry);
criterion_main!(benches);
