//! Compare the frequentist i-ratio baseline with the Bayesian
//! difference-in-proportions test on a hand-built pair of groups.

use fleet_prism::prism::{bdpt, dsm_baseline, BdptConfig};

fn seqs(raw: &[&str]) -> Vec<Vec<String>> {
    raw.iter().map(|s| s.split_whitespace().map(String::from).collect()).collect()
}

fn main() -> fleet_prism::Result<()> {
    let in_group = seqs(&["08 12 08 12 30", "08 12 44", "30 08 12 08", "12 08 12"]);
    let out_group = seqs(&["30 44 30", "08 44 30 30", "44 30 12", "30 30 44 08", "12 44"]);

    let mut rows = dsm_baseline(&in_group, &out_group, 2)?;
    rows.sort_by(|a, b| b.i_ratio.total_cmp(&a.i_ratio).then(a.ngram.cmp(&b.ngram)));
    println!("{:<8} {:>8} {:>8} {:>8} {:>8}", "ngram", "i-ratio", "t", "p", "bdpt");
    for r in &rows {
        let len = r.ngram.len() as u64;
        let total = |g: &[Vec<String>]| g.iter().map(|s| (s.len() as u64 + 1).saturating_sub(len)).sum::<u64>();
        let b = bdpt(r.in_support, total(&in_group), r.out_support, total(&out_group), &BdptConfig::default())?;
        println!(
            "{:<8} {:>8.3} {:>8.3} {:>8.4} {:>8.3}",
            r.ngram.join(" "),
            r.i_ratio,
            r.t_statistic,
            r.p_value,
            b.p_outside_rope
        );
    }
    Ok(())
}
