use criterion::{black_box, criterion_group, criterion_main, Criterion, Throughput};
use pulsemon_bench::device_frames;
use pulsemon_core::{decode_frame, encode_frame};

fn codec(c: &mut Criterion) {
    let frames = device_frames(60.0);
    let lines: Vec<String> = frames.iter().map(|f| encode_frame(f).unwrap()).collect();
    let bytes: usize = lines.iter().map(String::len).sum();

    let mut group = c.benchmark_group("wire");
    group.throughput(Throughput::Bytes(bytes as u64));
    group.bench_function("encode_60s_device", |b| {
        b.iter(|| {
            frames
                .iter()
                .map(|f| encode_frame(black_box(f)).unwrap().len())
                .sum::<usize>()
        })
    });
    group.bench_function("decode_60s_device", |b| {
        b.iter(|| {
            lines
                .iter()
                .map(|l| decode_frame(black_box(l.as_bytes())).unwrap().seq)
                .sum::<u64>()
        })
    });
    group.finish();
}

criterion_group!(benches, codec);
criterion_main!(benches);
