mod common;

use std::time::Duration;

use common::{broadcast_once, ceil_log2, fan_out_wall_ms, reduce_replicas};

#[test]
fn broadcast_message_count_and_depth() {
    for k in [1usize, 2, 3, 8] {
        let consumers: Vec<usize> = (1..=k).collect();
        let (msgs, depth) = broadcast_once(k + 1, 0, &consumers).unwrap();
        assert_eq!(msgs, k, "k={k}");
        assert!(depth <= ceil_log2(k) + 1, "k={k} depth={depth}");
    }
}

#[test]
fn source_among_consumers_is_not_sent_to() {
    for k in [1usize, 2, 3, 8] {
        let consumers: Vec<usize> = (0..k).collect();
        let (msgs, depth) = broadcast_once(k, 0, &consumers).unwrap();
        assert_eq!(msgs, k - 1, "k={k}");
        assert!(depth <= ceil_log2(k) + 1);
    }
}

#[test]
fn reductions_match_left_fold() {
    for n in [1usize, 2, 4, 5, 16] {
        for ranks in [1, 3] {
            let r = reduce_replicas(n, ranks).unwrap();
            assert_eq!(r.combines, n - 1);
            assert_eq!(r.recorded, n - 1);
            assert_eq!(r.levels, ceil_log2(n));
            assert_eq!(r.result, r.left_fold, "n={n} ranks={ranks}");
        }
    }
}

#[test]
fn independent_transfers_overlap() {
    let latency = Duration::from_millis(50);
    let compute = fan_out_wall_ms(4, Duration::ZERO).unwrap();
    let wall = fan_out_wall_ms(4, latency).unwrap();
    assert!(wall >= 50.0, "latency was not applied: {wall} ms");
    assert!(wall < 2.0 * 50.0 + compute, "wall {wall} ms, compute {compute} ms");
}
