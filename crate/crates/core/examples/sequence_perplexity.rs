//! Next-job models on a corpus drawn from a second-order Markov source:
//! uniform, frequency-matched and Markov models of increasing order,
//! scored by held-out perplexity.

use fleet_prism::forecast::{fit_sequence_model, perplexity, SequenceVariant};
use fleet_prism::synthgen::generate_markov_corpus;

fn main() -> fleet_prism::Result<()> {
    let corpus = generate_markov_corpus(12, 2, 400, 20, 0.3, 5)?;
    let (train, test) = corpus.split_at(300);
    let vocab: Vec<String> = (0..12).map(|i| format!("s{i:02}")).collect();

    let variants = [
        SequenceVariant::Uniform,
        SequenceVariant::FrequencyMatched { alpha: 0.1 },
        SequenceVariant::Markov { order: 1, alpha: 0.1 },
        SequenceVariant::Markov { order: 2, alpha: 0.1 },
        SequenceVariant::Markov { order: 3, alpha: 0.1 },
    ];
    for v in variants {
        let model = fit_sequence_model(train, v, &vocab)?;
        println!("{:<48} perplexity {:.3}", format!("{v:?}"), perplexity(&model, test)?);
    }
    Ok(())
}
