//! Regenerates `data/toy_corpus.txt`.

use semcom::textpipe::toy;

fn main() -> std::io::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_corpus.txt");
    std::fs::write(path, toy::generate(toy::BUNDLED_LINES, toy::BUNDLED_SEED))
}
