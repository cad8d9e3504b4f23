//! Builds a fixture corpus and prints its basic statistics.

use expltune::corpus::{nonstopword_profile, score_distribution, synth_fixture, Dimension, Source, SynthConfig};
use expltune::text::WordSet;

fn main() -> expltune::Result<()> {
    let mut cfg = SynthConfig::new(7, 200);
    cfg.source = Source::CoQa;
    cfg.min_assessment_words = 150;
    let corpus = synth_fixture(&cfg);
    println!(
        "{} records, content hash {}",
        corpus.len(),
        &corpus.content_hash()[..12]
    );

    let first = corpus.iter().next().expect("non-empty");
    println!("\nresponse: {}", first.conversation().response());
    for dim in Dimension::ALL {
        let words: Vec<&str> = first.assessment(dim).split_whitespace().take(12).collect();
        println!("  {dim:<18} {:?}  {} ...", first.scores.get(dim), words.join(" "));
    }

    println!("\nscore distribution ({}):", Dimension::Comprehensiveness);
    for (score, count) in score_distribution(&corpus, Dimension::Comprehensiveness) {
        println!("  {score:.2}  {count}");
    }

    let profile = nonstopword_profile(&corpus, Dimension::Comprehensiveness, &WordSet::stopwords_v1(), 10)?;
    println!(
        "\nP(non-stopword) by position: {:?}",
        profile
            .iter()
            .map(|p| p.map_or("-".into(), |p| format!("{p:.2}")))
            .collect::<Vec<_>>()
    );
    Ok(())
}
