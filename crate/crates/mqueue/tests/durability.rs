use std::collections::HashMap;
use std::sync::Arc;

use miniops_mqueue::frame;
use miniops_mqueue::{Broker, QueueConfig, StartPosition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn small(dir: &std::path::Path) -> Broker {
    Broker::open(
        dir,
        QueueConfig {
            segment_bytes: 16 * frame::frame_len(8) as u64,
            ..QueueConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn publish_crash_restart_reads_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let payloads: Vec<Vec<u8>> = (0..200)
        .map(|_| {
            let n = rng.gen_range(0..300);
            (0..n).map(|_| rng.gen()).collect()
        })
        .collect();
    {
        let b = small(dir.path());
        for p in &payloads {
            b.publish("crash", p).unwrap();
        }
        // No graceful shutdown path exists; forgetting skips every destructor.
        std::mem::forget(b);
    }
    let b = small(dir.path());
    let got = b.read_from("crash", 0, 1000).unwrap();
    assert_eq!(got.len(), payloads.len());
    for (m, p) in got.iter().zip(&payloads) {
        assert_eq!(&m.payload, p);
        assert!(m.crc_valid());
    }
}

#[test]
fn interleaved_groups_resume_at_their_own_commit_after_crash() {
    let dir = tempfile::tempdir().unwrap();
    let mut expected = HashMap::new();
    {
        let b = small(dir.path());
        b.register_group("a", "t", StartPosition::Earliest).unwrap();
        b.register_group("b", "t", StartPosition::Earliest).unwrap();
        for i in 0..50u64 {
            b.publish("t", &i.to_le_bytes()).unwrap();
            if i % 7 == 0 {
                let polled = b.poll("a", "t", 3).unwrap();
                if let Some(last) = polled.last() {
                    b.commit("a", "t", last.offset + 1).unwrap();
                }
            }
            if i % 11 == 0 {
                let polled = b.poll("b", "t", 5).unwrap();
                if let Some(last) = polled.last() {
                    b.commit("b", "t", last.offset + 1).unwrap();
                }
            }
        }
        expected.insert("a", b.committed("a", "t").unwrap());
        expected.insert("b", b.committed("b", "t").unwrap());
        std::mem::forget(b);
    }
    let b = small(dir.path());
    for g in ["a", "b"] {
        let first = b.poll(g, "t", 1).unwrap();
        assert_eq!(first[0].offset, expected[g], "group {g}");
        let all = b.poll(g, "t", 1000).unwrap();
        let offsets: Vec<u64> = all.iter().map(|m| m.offset).collect();
        let want: Vec<u64> = (expected[g]..50).collect();
        assert_eq!(offsets, want);
    }
}

#[test]
fn concurrent_publishers_and_pollers() {
    let dir = tempfile::tempdir().unwrap();
    let b = Arc::new(small(dir.path()));
    b.register_group("g", "t", StartPosition::Earliest).unwrap();
    let writers: Vec<_> = (0..4u8)
        .map(|w| {
            let b = b.clone();
            std::thread::spawn(move || {
                for i in 0..100u8 {
                    b.publish("t", &[w, i]).unwrap();
                }
            })
        })
        .collect();
    let reader = {
        let b = b.clone();
        std::thread::spawn(move || {
            let mut seen = 0u64;
            while seen < 400 {
                let msgs = b.poll("g", "t", 50).unwrap();
                for m in &msgs {
                    assert_eq!(m.offset, seen);
                    seen += 1;
                }
                if let Some(last) = msgs.last() {
                    b.commit("g", "t", last.offset + 1).unwrap();
                }
            }
            seen
        })
    };
    for w in writers {
        w.join().unwrap();
    }
    assert_eq!(reader.join().unwrap(), 400);
    // Per-writer order is preserved.
    let all = b.read_from("t", 0, 1000).unwrap();
    for w in 0..4u8 {
        let seq: Vec<u8> = all.iter().filter(|m| m.payload[0] == w).map(|m| m.payload[1]).collect();
        assert_eq!(seq, (0..100).collect::<Vec<u8>>());
    }
}

#[derive(Debug, Clone)]
enum Step {
    Publish(u8),
    Commit(usize, u8),
    Trim,
    Restart,
    Poll(usize),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        4 => (1u8..10).prop_map(Step::Publish),
        2 => (0usize..2, 0u8..20).prop_map(|(g, n)| Step::Commit(g, n)),
        1 => Just(Step::Trim),
        1 => Just(Step::Restart),
        2 => (0usize..2).prop_map(Step::Poll),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// No poll ever observes a gap, and trim never removes data a group still needs.
    #[test]
    fn random_schedule_never_exposes_gaps(steps in proptest::collection::vec(step(), 1..60)) {
        let dir = tempfile::tempdir().unwrap();
        let groups = ["g0", "g1"];
        let mut b = small(dir.path());
        for g in groups {
            b.register_group(g, "t", StartPosition::Earliest).unwrap();
        }
        let mut head = 0u64;
        for s in steps {
            match s {
                Step::Publish(n) => {
                    for _ in 0..n {
                        let off = b.publish("t", &head.to_le_bytes()).unwrap();
                        prop_assert_eq!(off, head);
                        head += 1;
                    }
                }
                Step::Commit(g, n) => {
                    let c = b.committed(groups[g], "t").unwrap();
                    let target = (c + u64::from(n)).min(head);
                    b.commit(groups[g], "t", target).unwrap();
                }
                Step::Trim => {
                    b.trim("t").unwrap();
                    let min = groups.iter().map(|g| b.committed(g, "t").unwrap()).min().unwrap();
                    prop_assert!(b.start("t") <= min);
                }
                Step::Restart => {
                    drop(b);
                    b = small(dir.path());
                    prop_assert_eq!(b.head("t"), head);
                }
                Step::Poll(g) => {
                    let c = b.committed(groups[g], "t").unwrap();
                    let msgs = b.poll(groups[g], "t", 1000).unwrap();
                    prop_assert_eq!(msgs.len() as u64, head - c);
                    for (i, m) in msgs.iter().enumerate() {
                        prop_assert_eq!(m.offset, c + i as u64);
                        prop_assert_eq!(&m.payload[..], &m.offset.to_le_bytes()[..]);
                        prop_assert!(m.crc_valid());
                    }
                }
            }
        }
    }
}
