use std::hint::black_box;

use criterion::{Criterion, criterion_group, criterion_main};
use tilt_bench::{params, tilted_background};
use tilt_core::background::{AsymptoticData, build_initial_state, rhs_background};
use tilt_core::background::{FlrwKind, flrw};
use tilt_core::einstein_euler::{CoupledSystem, InitialDataKind, build_initial_data};
use tilt_core::euler_flrw::{EulerFlrw, perturb_background};
use tilt_core::s3_frame::{ModeSpec, S3Spectral};

fn transforms(c: &mut Criterion) {
    for l in [4, 8] {
        let sp = S3Spectral::new(l).unwrap();
        let modes = ModeSpec { degrees: (0..=l).collect(), seed: 1 };
        let f = sp.random_band_field(&modes, 0);
        let vals = sp.synthesize(&f).unwrap();
        c.bench_function(&format!("synthesize L={l}"), |b| b.iter(|| sp.synthesize(black_box(&f)).unwrap()));
        c.bench_function(&format!("analyze L={l}"), |b| b.iter(|| sp.analyze(black_box(&vals)).unwrap()));
        c.bench_function(&format!("apply_y L={l}"), |b| b.iter(|| sp.apply_y(2, black_box(&f)).unwrap()));
    }
}

fn background_rhs(c: &mut Criterion) {
    let p = params();
    let data = AsymptoticData { k3: [0.0; 3], k3_23: 0.0, g_inf: [1.0, 1.2, 0.8], v1_inf: 1.0, p_inf: 0.1 };
    let s = build_initial_state(&data, &p, 10.0).unwrap();
    c.bench_function("background rhs", |b| b.iter(|| rhs_background(10.0, black_box(&s), &p).unwrap()));
}

fn euler_rhs(c: &mut Criterion) {
    let p = params();
    let sp = S3Spectral::new(4).unwrap();
    let sys = EulerFlrw::new(&sp, p, flrw(&p, FlrwKind::ClosedDeSitter));
    let st = perturb_background(&sp, 1.0, 0.3, 0.2, 1e-3, &ModeSpec { degrees: vec![1, 2, 3], seed: 1 }).unwrap();
    c.bench_function("euler rhs L=4", |b| b.iter(|| sys.rhs(1.0, black_box(st.coeffs.view())).unwrap()));
}

fn coupled_rhs(c: &mut Criterion) {
    let p = params();
    let tr = tilted_background(&p);
    let mut g = c.benchmark_group("coupled");
    g.sample_size(20);
    for l in [2, 4] {
        let sp = S3Spectral::new(l).unwrap();
        let modes = ModeSpec { degrees: vec![1, 2], seed: 1 };
        let st = build_initial_data(&sp, &tr, 2.0, InitialDataKind::InhomogeneousFree, 1e-4, &modes).unwrap();
        let sys = CoupledSystem::new(&sp, &tr);
        g.bench_function(format!("rhs L={l}"), |b| b.iter(|| sys.rhs(2.0, black_box(st.coeffs.view())).unwrap()));
        g.bench_function(format!("constraints L={l}"), |b| b.iter(|| sys.constraint_residuals(black_box(&st)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, transforms, background_rhs, euler_rhs, coupled_rhs);
criterion_main!(benches);
