use criterion::{criterion_group, criterion_main, Criterion};
use portalsim::netsim::DEFAULT_BUDGET;
use portalsim::scenario::{bundled, parse_scenario};

fn run_bundled(c: &mut Criterion) {
    for name in ["fig2_dns_spoofing", "ip_forgery_redirect", "wrong_password"] {
        let sc = parse_scenario(bundled(name).unwrap()).unwrap();
        c.bench_function(name, |b| b.iter(|| sc.run(DEFAULT_BUDGET).map_err(|e| e.0).unwrap().counters()));
    }
}

criterion_group!(benches, run_bundled);
criterion_main!(benches);
