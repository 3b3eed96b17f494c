use criterion::{black_box, criterion_group, criterion_main, Criterion};
use loopsoup::green::green_column;
use loopsoup::lattice::{LatticeSpec, RngStream, Site, StepOutcome, Walker};
use loopsoup::sampler::sample_soup;
use loopsoup_bench::soup_params;

fn walk_steps(c: &mut Criterion) {
    let spec = LatticeSpec::new(5, 20, 0.0).unwrap();
    let mut rng = RngStream::new(3, 0).rng();
    c.bench_function("walker 10k steps d=5", |b| {
        b.iter(|| {
            let mut w = Walker::new(&spec);
            w.place(spec.center_index());
            for _ in 0..10_000 {
                if w.step(&mut rng) != StepOutcome::Moved {
                    w.place(spec.center_index());
                }
            }
            black_box(w.index())
        })
    });
}

fn soups(c: &mut Criterion) {
    let p = soup_params(3, 4, 1.0);
    c.bench_function("sample_soup d=3 R=4", |b| b.iter(|| black_box(sample_soup(&p).unwrap().loops.len())));
}

fn green_cg(c: &mut Criterion) {
    let spec = LatticeSpec::new(3, 10, 0.0).unwrap();
    let o = Site::origin(3);
    c.bench_function("green column d=3 R=10", |b| b.iter(|| black_box(green_column(&spec, &[], &o).unwrap()[0])));
}

criterion_group!(benches, walk_steps, soups, green_cg);
criterion_main!(benches);
