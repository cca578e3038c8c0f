// Inter-annotator agreement and label balance for a small annotated sample.

use cityadapt::data::{AnnotationTable, SentimentLabel};
use cityadapt::metrics::{evaluate_labels, krippendorff_alpha, label_shares};

pub fn run() -> cityadapt::Result<()> {
    let raw = [(1, 1), (1, 1), (-1, -1), (0, 0), (0, 1), (-1, -1), (1, 0), (0, 0), (-1, 0), (1, 1), (-1, -1), (0, 0)];
    let pairs = raw
        .iter()
        .map(|&(a, b)| Ok([SentimentLabel::new(a)?, SentimentLabel::new(b)?]))
        .collect::<cityadapt::Result<Vec<_>>>()?;
    let table = AnnotationTable::from_pairs(pairs.clone())?;
    println!("Krippendorff alpha {:.3}", krippendorff_alpha(&table)?);

    let first: Vec<_> = pairs.iter().map(|p| p[0]).collect();
    let second: Vec<_> = pairs.iter().map(|p| p[1]).collect();
    let m = evaluate_labels(&first, &second)?;
    println!("coder 2 against coder 1: accuracy {:.3}, macro-F1 {:.3}", m.accuracy, m.macro_f1);

    let shares = label_shares(first.iter().map(|l| (*l, 1.0))).unwrap();
    println!("coder 1 shares: pos {:.1}%  neg {:.1}%  neu {:.1}%", shares.pos, shares.neg, shares.neu);
    Ok(())
}

#[allow(dead_code)]
fn main() -> cityadapt::Result<()> {
    run()
}
