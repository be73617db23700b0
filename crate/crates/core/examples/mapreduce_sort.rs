//! Key-value map, shuffle and reduce across three ranks, then the bucketed
//! integer sort built on the same pieces.

use dagflow::inputs::random_integers;
use dagflow::mapreduce::{sort_integers, KvStore, SortConfig};
use dagflow::Runtime;

fn main() -> dagflow::Result<()> {
    let words = "the quick brown fox jumps over the lazy dog the end";
    let out = Runtime::simulated(3).run(|ctx| {
        let docs = KvStore::<u64, Vec<u32>>::from_pairs(
            ctx,
            words.split(' ').enumerate().map(|(i, w)| (i as u64, w.chars().map(|c| c as u32).collect())),
        )?;
        let lengths = docs.map(ctx, |_, ws| ws.into_iter().map(|w| (w.len() as u64, 1u64)).collect())?;
        let counts = lengths.reduce(ctx, |k, ones| vec![(*k, ones.len() as u64)])?;
        counts.collect(ctx, Some(0))
    })?;
    let mut hist = out.values[0].clone().expect("rank 0 collects");
    hist.sort();
    println!("word length histogram {hist:?}");

    let values = random_integers(100_000, 7);
    let out = Runtime::simulated(3).workers(2).run(|ctx| {
        sort_integers(ctx, &values, SortConfig { log_bins: 6, chunk: 1000 })
    })?;
    let sorted = out.values[0].as_ref().expect("rank 0 holds the result");
    let mut want = values.clone();
    want.sort_unstable();
    println!("sorted {} integers, matches: {}", sorted.len(), *sorted == want);
    Ok(())
}
