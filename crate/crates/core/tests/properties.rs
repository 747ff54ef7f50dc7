use std::collections::BTreeMap;
use std::io::Cursor;

use proptest::prelude::*;
use serde_json::{Map, Value};

use grouper::fedsim::{aggregate, lr_schedule, pack_sequences, ClientUpdate, ScheduleKind, ScheduleSpec, PAD};
use grouper::group_stream::{build_group_stream, take_repeat, GroupDataset};
use grouper::partition::{partition_examples, Example, PartitionConfig, PartitionedDataset, Strategy, StrategyKeyFn};
use grouper::record_format::{RecordReader, RecordWriter};

fn partition(
    dir: &std::path::Path,
    rows: &[(u8, Vec<u8>)],
    shards: usize,
    workers: usize,
) -> PartitionedDataset {
    let examples = rows.iter().enumerate().map(|(i, (k, p))| {
        let mut fields = Map::new();
        fields.insert("k".into(), Value::from(*k));
        Ok(Example {
            index: i as u64,
            fields,
            payload: p.clone(),
        })
    });
    let strategy = Strategy::ByFeature { feature: "k".into() };
    let config = PartitionConfig {
        workers,
        ..PartitionConfig::new(strategy.clone(), shards)
    };
    partition_examples(examples, &StrategyKeyFn::new(strategy, 0), &config, dir, Some(dir.parent().unwrap()), None)
        .unwrap()
}

fn stream_contents(ds: &PartitionedDataset, cycle: usize, shuffle: usize, seed: u64) -> Vec<(Vec<u8>, Vec<Vec<u8>>)> {
    build_group_stream(ds, cycle, shuffle, seed)
        .unwrap()
        .map(|g| {
            let g = g.unwrap();
            (g.key().to_vec(), g.examples().map(|p| p.unwrap()).collect())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn records_roundtrip(payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..300), 0..40)) {
        let mut w = RecordWriter::new(Vec::new());
        for p in &payloads {
            w.write_record(p).unwrap();
        }
        let mut r = RecordReader::new(Cursor::new(w.into_inner()));
        let mut buf = Vec::new();
        let mut got = Vec::new();
        while r.read_record(&mut buf).unwrap() {
            got.push(buf.clone());
        }
        prop_assert_eq!(got, payloads);
    }

    /// Every group comes out exactly once with its examples in input order,
    /// whatever the interleave cycle, shuffle buffer or worker count.
    #[test]
    fn partition_then_stream_preserves_groups(
        rows in prop::collection::vec((0u8..20, prop::collection::vec(any::<u8>(), 0..16)), 1..120),
        shards in 1usize..6,
        workers in 1usize..5,
        cycle in 1usize..5,
        shuffle in 0usize..30,
        seed in any::<u64>(),
    ) {
        let tmp = tempfile::tempdir().unwrap();
        let ds = partition(&tmp.path().join("a"), &rows, shards, workers);
        let serial = partition(&tmp.path().join("b"), &rows, shards, 1);
        for s in 0..shards {
            prop_assert_eq!(std::fs::read(ds.shard_path(s)).unwrap(), std::fs::read(serial.shard_path(s)).unwrap());
        }
        let mut want: BTreeMap<Vec<u8>, Vec<Vec<u8>>> = BTreeMap::new();
        for (k, p) in &rows {
            want.entry(k.to_string().into_bytes()).or_default().push(p.clone());
        }
        let got = stream_contents(&ds, cycle, shuffle, seed);
        prop_assert_eq!(got.len(), want.len());
        let got: BTreeMap<_, _> = got.into_iter().collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(stream_contents(&ds, cycle, shuffle, seed), stream_contents(&ds, cycle, shuffle, seed));
    }

    #[test]
    fn take_repeat_cycles(payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..8), 1..10), n in 0usize..50) {
        let g = GroupDataset::from_payloads("k", payloads.clone());
        let got: Vec<Vec<u8>> = take_repeat(&g, n).unwrap().map(|p| p.unwrap()).collect();
        let want: Vec<Vec<u8>> = payloads.iter().cycle().take(n).cloned().collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn packed_sequences_keep_every_token(tokens in prop::collection::vec(1u32..50, 0..200), seq_len in 2usize..20) {
        let seqs = pack_sequences(&tokens, seq_len);
        prop_assert!(seqs.iter().all(|s| s.len() == seq_len));
        let flat: Vec<u32> = seqs.concat().into_iter().filter(|&t| t != PAD).collect();
        prop_assert_eq!(flat, tokens);
    }

    #[test]
    fn aggregate_ignores_arrival_order(
        deltas in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..12),
        rotate in 0usize..12,
    ) {
        let updates: Vec<ClientUpdate> = deltas
            .iter()
            .enumerate()
            .map(|(i, d)| ClientUpdate { client_key: format!("c{i:03}").into_bytes(), delta: d.clone(), mean_loss: 0.0, num_batches: 1 })
            .collect();
        let mut moved = updates.clone();
        moved.rotate_left(rotate % updates.len());
        let a = aggregate(&updates).unwrap();
        let b = aggregate(&moved).unwrap();
        prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn schedules_stay_in_range(total in 1usize..500, warmup in 0.0f64..=1.0, eta in 1e-6f64..10.0) {
        for kind in [ScheduleKind::Constant, ScheduleKind::WarmupCosine, ScheduleKind::WarmupExponential] {
            let spec = ScheduleSpec { warmup_fraction: warmup, ..ScheduleSpec::new(kind, eta, total) };
            for r in 0..total {
                let lr = lr_schedule(&spec, r).unwrap();
                prop_assert!((0.0..=eta * (1.0 + 1e-12)).contains(&lr), "{kind:?} round {r}: {lr}");
            }
        }
    }
}
