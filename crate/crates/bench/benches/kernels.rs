use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use shelab::grid::SpectralFilter;
use shelab::reaction::RESOLVENT_TOL;
use shelab::{resolvent, MapSolver, PicardOptions, PicardSolver, RandomField};
use shelab_bench::{desk_grid, multiplicative_problem};

fn semigroup(c: &mut Criterion) {
    let mut group = c.benchmark_group("semigroup");
    for n_x in [256, 1024, 4096] {
        let grid = desk_grid(512, n_x);
        let input: Vec<f64> = grid.xs().iter().map(|x| (-x * x).exp()).collect();
        let mut out = vec![0.0; n_x];
        let mut filter = SpectralFilter::heat(&grid, grid.dt());
        group.bench_with_input(BenchmarkId::from_parameter(n_x), &n_x, |b, _| {
            b.iter(|| filter.apply(black_box(&input), &mut out))
        });
    }
    group.finish();
}

fn resolvents(c: &mut Criterion) {
    let phi = shelab::ReactionFn::cubic().decompose();
    let us: Vec<f64> = (0..1000).map(|j| -10.0 + 0.02 * j as f64).collect();
    c.bench_function("resolvent/cubic_1000", |b| {
        b.iter(|| {
            us.iter()
                .map(|&u| resolvent(&phi, black_box(1.0 / 512.0), u, RESOLVENT_TOL).unwrap())
                .sum::<f64>()
        })
    });
}

fn map_solve(c: &mut Criterion) {
    let grid = desk_grid(512, 256);
    let f = shelab::ReactionFn::cubic();
    let z = RandomField::from_fn(&grid, |t, x| (x + t).sin());
    let mut solver = MapSolver::new(&grid, &f);
    let mut out = RandomField::zeros(&grid);
    c.bench_function("map/semi_implicit_512x256", |b| {
        b.iter(|| solver.solve_into(black_box(&z), &mut out, false).unwrap())
    });
}

fn picard(c: &mut Criterion) {
    let problem = multiplicative_problem(512, 256);
    let mut solver = PicardSolver::new(&problem, PicardOptions::default()).unwrap();
    let path = problem.noise.sample(7);
    let mut group = c.benchmark_group("picard");
    group.sample_size(10);
    group.bench_function("multiplicative_512x256", |b| b.iter(|| solver.solve(black_box(&path)).unwrap()));
    group.finish();
}

criterion_group!(benches, semigroup, resolvents, map_solve, picard);
criterion_main!(benches);
