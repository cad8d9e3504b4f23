//! Replaces real explanations with random words under each of the five
//! sampling schemes.

use expltune::augment::{build_vocab_profile, substitute_explanations, LengthPolicy, RandomMode};
use expltune::corpus::{synth_fixture, Dimension, SynthConfig};
use expltune::text::{WordList, WordSet};

fn main() -> expltune::Result<()> {
    let corpus = synth_fixture(&SynthConfig::new(5, 300));
    let dim = Dimension::Comprehensiveness;
    let profile = build_vocab_profile(&corpus, dim, &WordSet::stopwords_v1())?;
    let dictionary = WordList::dictionary_v1();
    println!(
        "{} distinct content words, {} score levels",
        profile.global.len(),
        profile.per_score.len()
    );

    let record = corpus.iter().next().unwrap();
    println!("\noriginal ({:?}): {}", record.scores.get(dim), record.assessment(dim));
    for mode in RandomMode::ALL {
        let out = substitute_explanations(&corpus, dim, mode, &profile, &dictionary, LengthPolicy::Fixed(14), 0)?;
        println!("{:<13} {}", mode.tag(), out.get(&record.id).unwrap().assessment(dim));
    }
    Ok(())
}
