use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use schemind_core::evidence::{check_segment_map, check_support, find_verbatim};
use schemind_core::refinement::fallback_alignment;
use schemind_core::{
    check_partition, Cluster, ClusterId, Clustering, EvidenceCell, ExampleId, Judgment, NormalizationPolicy,
};

fn abstract_text(sentences: usize) -> String {
    (0..sentences)
        .map(|i| {
            format!(
                "In study {i} we observed how \u{201c}workarounds\u{201d} spread  among nurses\nacross {} wards. ",
                i % 7 + 2
            )
        })
        .collect()
}

fn verbatim(c: &mut Criterion) {
    let policy = NormalizationPolicy::default();
    let mut group = c.benchmark_group("find_verbatim");
    for sentences in [5, 50, 200] {
        let source = abstract_text(sentences);
        let last = sentences - 1;
        let snippet = format!("In study {last} we observed how \"workarounds\" spread among nurses");
        group.bench_with_input(BenchmarkId::new("hit_at_end", sentences), &source, |b, s| {
            b.iter(|| find_verbatim(black_box(&snippet), black_box(s), &policy))
        });
        group.bench_with_input(BenchmarkId::new("miss", sentences), &source, |b, s| {
            b.iter(|| find_verbatim(black_box("an absent phrase about policy"), black_box(s), &policy))
        });
    }
    group.finish();
}

fn partition(c: &mut Criterion) {
    let ids: Vec<ExampleId> = (1..=200).map(|i| ExampleId::new(format!("e{i}"))).collect();
    let clustering = Clustering {
        clusters: ids
            .chunks(20)
            .enumerate()
            .map(|(i, chunk)| Cluster {
                id: ClusterId::new(format!("c{}", i + 1)),
                name: format!("Cluster {}", i + 1),
                common_features: Vec::new(),
                member_ids: chunk.to_vec(),
                feature_matrix: None,
            })
            .collect(),
        over: ids.clone(),
    };
    c.bench_function("check_partition/200", |b| {
        b.iter(|| check_partition(black_box(&clustering), &ids))
    });
}

fn support(c: &mut Criterion) {
    let cells: Vec<EvidenceCell> = (0..100)
        .map(|i| EvidenceCell::judged([Judgment::Yes, Judgment::Partial, Judgment::No][i % 3], "", None))
        .collect();
    let refs: Vec<&EvidenceCell> = cells.iter().collect();
    c.bench_function("check_support/100", |b| b.iter(|| check_support(black_box(&refs), 0.5)));
}

fn segments(c: &mut Criterion) {
    let (generated, gold) = (abstract_text(40), abstract_text(45));
    let map = fallback_alignment(&generated, &gold);
    c.bench_function("fallback_alignment/40x45", |b| {
        b.iter(|| fallback_alignment(black_box(&generated), black_box(&gold)))
    });
    c.bench_function("check_segment_map/40x45", |b| {
        b.iter(|| check_segment_map(black_box(&map), &generated, &gold, &[]))
    });
}

criterion_group!(benches, verbatim, partition, support, segments);
criterion_main!(benches);
