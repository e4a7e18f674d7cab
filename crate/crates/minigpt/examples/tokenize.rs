//! Builds the character vocabulary of a corpus and round-trips some text.
//!
//! ```text
//! cargo run --example tokenize -- [PATH]
//! ```

use std::path::{Path, PathBuf};

use minigpt::dataset::{find_corpus, load_corpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize()?;
    let path = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => find_corpus(&root).ok_or("no corpus: pass a path or run scripts/fetch_tinyshakespeare.sh")?.0,
    };
    let (vocab, ids) = load_corpus(&path)?;
    println!("{}: {} characters, vocabulary of {}", path.display(), ids.len(), vocab.size());
    println!("symbols in id order: {:?}", vocab.chars_string());

    let text = "First Citizen:\nBefore we proceed";
    let encoded = vocab.encode(text)?;
    println!("{text:?} -> {encoded:?}");
    assert_eq!(vocab.decode(&encoded)?, text);
    println!("decode(encode(text)) == text");
    Ok(())
}
