//! Builds a vocabulary from a few turns, serializes them with role tokens
//! after each turn, and parses the token stream back into role-decorated
//! words.
//!
//! ```text
//! cargo run --example tokenize_roles
//! ```

use rnnt_diar::vocab::{build_vocab, default_roles, parse_decorated, tokenize_turns, tokenize_words, Role, Turn};

fn main() -> anyhow::Result<()> {
    let turns = vec![
        Turn::new(Role::physician(), "how are you feeling today"),
        Turn::new(Role::patient(), "my knee hurts when i walk"),
        Turn::new(Role::physician(), "how long has it hurt"),
    ];
    let vocab = build_vocab(&turns, &default_roles(), 12)?;
    println!("vocabulary ({} tokens): {}", vocab.len(), vocab.tokens().join(" "));

    let ids = tokenize_turns(&turns, &vocab)?;
    let shown: Vec<&str> = ids.iter().map(|&i| vocab.token(i).unwrap_or("?")).collect();
    println!("decorated: {}", shown.join(" "));
    println!("words only: {:?}", tokenize_words(&turns, &vocab));

    let parsed = parse_decorated(&ids, &vocab)?;
    for w in &parsed.words {
        print!("{}/{} ", w.word, w.role);
    }
    println!();

    // a stream cut before its last role token leaves trailing words on the last role seen
    let cut = parse_decorated(&ids[..ids.len() - 1], &vocab)?;
    println!("truncated stream ends with role {}", cut.words.last().map_or("-".into(), |w| w.role.to_string()));
    Ok(())
}
