//! Prints encouraging and discouraging completions of the bundled stems.

use gtl_core::commentary::{complete_stem, ScorerWeights};
use gtl_core::Commentator;

fn main() {
    let c = Commentator::bundled();
    for stem in &c.stems {
        for sign in [1, -1] {
            let w = ScorerWeights::new(c.z, sign).unwrap();
            let u = complete_stem(&c.counts, &c.lexicon, &w, stem).unwrap();
            let valence: i32 = u.chosen_words.iter().map(|w| c.lexicon.valence(w)).sum();
            println!("{sign:+} [{valence:+}] {}", u.text);
        }
    }
}
