pub mod corpus;
pub mod labels;
pub mod transcript;
pub mod sequence;
pub mod sim;
pub mod tiers;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/labels.md")]
    struct Labels;
    #[doc = include_str!("../../../book/src/transcripts.md")]
    struct Transcripts;
    #[doc = include_str!("../../../book/src/tiers.md")]
    struct Tiers;
    #[doc = include_str!("../../../book/src/sequences.md")]
    struct Sequences;
    #[doc = include_str!("../../../book/src/corpus.md")]
    struct Corpus;
    #[doc = include_str!("../../../book/src/simulator.md")]
    struct Simulator;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
