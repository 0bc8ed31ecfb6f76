//! In-repo toy caption corpus: deterministic synthetic scenes with their
//! captions, so pretraining runs offline.

use crate::data::synth::synth_captioned_scene;
use crate::data::ImagePlane;

use super::Tokenizer;

/// Deterministic (image, caption) pairs.
pub fn toy_corpus(pairs: usize, side: usize) -> Vec<(ImagePlane, String)> {
    (0..pairs as u64)
        .map(|i| synth_captioned_scene(1000 + 17 * i, side, side))
        .collect()
}

/// Tokenizer fitted on the toy captions (no frequency cut at this scale).
pub fn toy_tokenizer(corpus: &[(ImagePlane, String)]) -> Tokenizer {
    Tokenizer::fit(corpus.iter().map(|(_, c)| c.as_str()), 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_has_enough_distinct_pairs() {
        let corpus = toy_corpus(6, 64);
        assert!(corpus.len() >= 5);
        let captions: std::collections::BTreeSet<&String> =
            corpus.iter().map(|(_, c)| c).collect();
        assert!(captions.len() >= 2, "captions should vary across the corpus");
        let tok = toy_tokenizer(&corpus);
        assert!(tok.vocab_size() > 6);
    }
}
