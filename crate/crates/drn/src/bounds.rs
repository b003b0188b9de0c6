//! Generalization-bound machinery for dual hypothesis sets: empirical
//! error, the finite-hypothesis deviation bound, Rademacher-complexity
//! bounds, and an empirical Rademacher estimator (exhaustive or
//! Monte-Carlo) for small finite loss tables.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::stream_rng;

const SIGMA_SALT: u64 = 0x5349_474d; // "SIGM"

/// Composite losses of finitely many hypotheses on m samples.
/// Row h, column i holds the loss of hypothesis h on sample i; every entry
/// lies in [0, M].
#[derive(Clone, Debug)]
pub struct LossTable {
    rows: Vec<Vec<f64>>,
    m: usize,
    bound: f64,
}

impl LossTable {
    pub fn new(rows: Vec<Vec<f64>>, bound: f64) -> Result<Self> {
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(Error::Contract(format!(
                "loss bound M must be finite and positive, got {bound}"
            )));
        }
        let m = match rows.first() {
            None => return Err(Error::Contract("loss table needs at least one row".into())),
            Some(r) if r.is_empty() => {
                return Err(Error::Contract("loss table needs at least one sample".into()))
            }
            Some(r) => r.len(),
        };
        for (h, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Contract(format!(
                    "row {h} has {} entries, expected {m}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=bound).contains(*v)) {
                return Err(Error::Contract(format!(
                    "row {h} entry {v} outside [0, {bound}]"
                )));
            }
        }
        Ok(LossTable { rows, m, bound })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Parse the text form: first line `m M`, then one whitespace-separated
    /// hypothesis row per line. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut offset = 0usize;
        let mut header: Option<(usize, f64)> = None;
        let mut rows = Vec::new();
        for line in text.split_inclusive('\n') {
            let line_at = offset;
            offset += line.len();
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            match header {
                None => {
                    if toks.len() != 2 {
                        return Err(Error::Format {
                            offset: line_at,
                            message: format!(
                                "first line must be `m M`, got {} tokens",
                                toks.len()
                            ),
                        });
                    }
                    let m: usize = toks[0].parse().map_err(|_| Error::Format {
                        offset: line_at,
                        message: format!("bad sample count {:?}", toks[0]),
                    })?;
                    let bound: f64 = toks[1].parse().map_err(|_| Error::Format {
                        offset: line_at,
                        message: format!("bad loss bound {:?}", toks[1]),
                    })?;
                    header = Some((m, bound));
                }
                Some((m, _)) => {
                    if toks.len() != m {
                        return Err(Error::Format {
                            offset: line_at,
                            message: format!("row has {} entries, expected {m}", toks.len()),
                        });
                    }
                    let row = toks
                        .iter()
                        .map(|t| {
                            t.parse::<f64>().map_err(|_| Error::Format {
                                offset: line_at,
                                message: format!("bad loss value {t:?}"),
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    rows.push(row);
                }
            }
        }
        let (_, bound) = header.ok_or(Error::Format {
            offset: 0,
            message: "empty loss table".into(),
        })?;
        LossTable::new(rows, bound).map_err(|e| Error::Format {
            offset,
            message: e.to_string(),
        })
    }
}

/// Mean loss of one hypothesis row.
pub fn empirical_error(row: &[f64]) -> Result<f64> {
    if row.is_empty() {
        return Err(Error::Contract("empirical error of an empty row".into()));
    }
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

fn check_domain(bound: f64, m: usize, delta: f64) -> Result<()> {
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(Error::Contract(format!("M must be positive, got {bound}")));
    }
    if m == 0 {
        return Err(Error::Contract("m must be at least 1".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Contract(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    Ok(())
}

/// Uniform deviation bound for a finite hypothesis set:
/// M · sqrt((ln|H| + ln(1/δ)) / (2m)).
pub fn bound_finite(card_h: usize, bound: f64, m: usize, delta: f64) -> Result<f64> {
    if card_h == 0 {
        return Err(Error::Contract("hypothesis set must be non-empty".into()));
    }
    check_domain(bound, m, delta)?;
    let num = (card_h as f64).ln() + (1.0 / delta).ln();
    Ok(bound * (num / (2.0 * m as f64)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundVariant {
    /// Uses the population Rademacher complexity: Ê + 2R + M·sqrt(ln(1/δ)/(2m)).
    Population,
    /// Uses the empirical complexity with its wider tail: Ê + 2R̂ + 3M·sqrt(ln(1/δ)/(2m)).
    Empirical,
}

/// Rademacher generalization bound on the true error of a dual hypothesis.
pub fn bound_rademacher(
    empirical: f64,
    rademacher: f64,
    bound: f64,
    m: usize,
    delta: f64,
    variant: BoundVariant,
) -> Result<f64> {
    check_domain(bound, m, delta)?;
    if !(rademacher >= 0.0) {
        return Err(Error::Contract(format!(
            "Rademacher complexity must be >= 0, got {rademacher}"
        )));
    }
    let tail = ((1.0 / delta).ln() / (2.0 * m as f64)).sqrt();
    let coeff = match variant {
        BoundVariant::Population => 1.0,
        BoundVariant::Empirical => 3.0,
    };
    Ok(empirical + 2.0 * rademacher + coeff * bound * tail)
}

#[derive(Clone, Copy, Debug)]
pub enum RademacherMode {
    /// Averages all 2^m sign vectors; requires m ≤ 20.
    Exhaustive,
    /// Averages `draws` seeded sign vectors.
    MonteCarlo { draws: usize, seed: u64 },
}

fn sup_over_rows(table: &LossTable, sigma_bits: u64) -> f64 {
    let m = table.m;
    let mut best = f64::NEG_INFINITY;
    for row in &table.rows {
        let mut acc = 0.0;
        for (i, &v) in row.iter().enumerate() {
            if sigma_bits >> i & 1 == 1 {
                acc += v;
            } else {
                acc -= v;
            }
        }
        best = best.max(acc / m as f64);
    }
    best
}

/// Empirical Rademacher complexity of the table:
/// E_σ[ sup_h (1/m) Σ_i σ_i · loss_{h,i} ] with σ_i uniform in {−1, +1}.
pub fn empirical_rademacher(table: &LossTable, mode: RademacherMode) -> Result<f64> {
    match mode {
        RademacherMode::Exhaustive => {
            if table.m > 20 {
                return Err(Error::Resource(format!(
                    "exhaustive enumeration of 2^{} sign vectors; use monte_carlo above m = 20",
                    table.m
                )));
            }
            let total = 1u64 << table.m;
            let mut acc = 0.0;
            for bits in 0..total {
                acc += sup_over_rows(table, bits);
            }
            Ok(acc / total as f64)
        }
        RademacherMode::MonteCarlo { draws, seed } => {
            Ok(monte_carlo_with_stderr(table, draws, seed)?.0)
        }
    }
}

/// Monte-Carlo estimate plus the standard error of the mean.
pub fn monte_carlo_with_stderr(table: &LossTable, draws: usize, seed: u64) -> Result<(f64, f64)> {
    if draws == 0 {
        return Err(Error::Contract("monte_carlo needs at least one draw".into()));
    }
    let mut rng = stream_rng(seed, SIGMA_SALT);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..draws {
        let bits: u64 = rng.random();
        let s = sup_over_rows(table, bits);
        sum += s;
        sumsq += s * s;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sumsq / n - mean * mean).max(0.0);
    let se = (var / n).sqrt();
    Ok((mean, se))
}

/// Side-by-side complexity of a single-task table and the dual table built
/// over the product hypothesis set (every primal row combined with every
/// dual-loss row). Reported for comparison; no ordering is guaranteed.
#[derive(Clone, Copy, Debug)]
pub struct SingleVsDual {
    pub r_single: f64,
    pub r_dual: f64,
}

/// Build the dual product table: row (p, d) holds l1[p][i] + l2[d][i].
pub fn dual_product_table(l1: &LossTable, l2: &LossTable) -> Result<LossTable> {
    if l1.m != l2.m {
        return Err(Error::Contract(format!(
            "tables disagree on sample count: {} vs {}",
            l1.m, l2.m
        )));
    }
    let mut rows = Vec::with_capacity(l1.rows.len() * l2.rows.len());
    for rp in &l1.rows {
        for rd in &l2.rows {
            rows.push(rp.iter().zip(rd).map(|(&a, &b)| a + b).collect());
        }
    }
    LossTable::new(rows, l1.bound + l2.bound)
}

pub fn single_vs_dual(
    l1: &LossTable,
    l2: &LossTable,
    mode: RademacherMode,
) -> Result<SingleVsDual> {
    let dual = dual_product_table(l1, l2)?;
    Ok(SingleVsDual {
        r_single: empirical_rademacher(l1, mode)?,
        r_dual: empirical_rademacher(&dual, mode)?,
    })
}
