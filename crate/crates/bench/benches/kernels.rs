use convflow::solver::pcg;
use convflow::*;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn problem(name: &str) -> (ScalarField, FlowParams) {
    (scenario(name).unwrap().sequence, FlowParams::traffic())
}

fn assembly(c: &mut Criterion) {
    let (seq, params) = problem("converging_pair");
    let rule = QuadratureRule::default();
    let d = project_derivatives(&seq, &rule).unwrap();
    let lambda = compute_weight(&d, params.epsilon).unwrap();
    let w = VectorField::constant(*seq.grid(), [0.5, -0.25]);
    let weights = ModelWeights::new(params.alpha1, params.beta1);
    c.bench_function("project_derivatives", |b| b.iter(|| project_derivatives(&seq, &rule).unwrap()));
    c.bench_function("assemble_system", |b| b.iter(|| assemble_system(&d, &lambda, &w, &weights, &rule).unwrap()));
}

fn solve(c: &mut Criterion) {
    let (seq, params) = problem("translating_square");
    let problem = FlowProblem::new(&seq, &params).unwrap();
    let zero = VectorField::zeros(*problem.grid());
    let system = problem.system(&zero, &params.init_weights()).unwrap();
    let rhs = system.rhs_stacked();
    let x = vec![1.0; rhs.len()];
    c.bench_function("matvec", |b| b.iter(|| matvec(&system, &x).unwrap()));

    let mut group = c.benchmark_group("pcg");
    group.sample_size(10);
    for pre in [Preconditioner::Jacobi, Preconditioner::TimeLine] {
        let cfg = SolverConfig { preconditioner: pre, ..Default::default() };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{pre:?}")), &cfg, |b, cfg| {
            b.iter(|| pcg(&system, &rhs, vec![0.0; rhs.len()], cfg).unwrap())
        });
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let (seq, params) = problem("translating_square");
    let params = FlowParams { max_outer_iterations: 2, ..params };
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("translating_square_2_iterations", |b| {
        b.iter(|| FlowProblem::new(&seq, &params).unwrap().run().unwrap())
    });
    group.finish();
}

criterion_group!(benches, assembly, solve, pipeline);
criterion_main!(benches);
