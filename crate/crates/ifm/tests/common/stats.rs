use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper-tail p-value of Pearson's independence test on a contingency table.
pub fn independence_p(table: &[Vec<u64>]) -> f64 {
    let rows = table.len();
    let cols = table[0].len();
    let n: f64 = table.iter().flatten().sum::<u64>() as f64;
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_sums: Vec<f64> = (0..cols).map(|c| table.iter().map(|r| r[c]).sum::<u64>() as f64).collect();
    let mut stat = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &o) in row.iter().enumerate() {
            let e = row_sums[r] * col_sums[c] / n;
            stat += (o as f64 - e).powi(2) / e;
        }
    }
    let df = ((rows - 1) * (cols - 1)) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

/// Upper-tail p-value of Pearson's goodness-of-fit test against equal cell
/// probabilities.
pub fn uniformity_p(counts: &[u64]) -> f64 {
    let n: f64 = counts.iter().sum::<u64>() as f64;
    let e = n / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

pub fn contingency(pairs: impl Iterator<Item = (u8, u8)>) -> Vec<Vec<u64>> {
    let mut t = vec![vec![0u64; 10]; 10];
    for (a, b) in pairs {
        t[a as usize][b as usize] += 1;
    }
    t
}
