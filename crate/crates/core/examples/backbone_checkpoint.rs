//! Builds a mini backbone, saves it as a checkpoint, reloads it and checks
//! that the fingerprint and forward pass survive the round trip.

use tsalign::backbone::{BackboneDims, FrozenBackbone};

fn main() -> tsalign::Result<()> {
    let dims = BackboneDims {
        vocab_size: 128,
        d_model: 32,
        max_positions: 64,
        heads: 4,
    };
    let backbone = FrozenBackbone::init_mini(42, dims)?;
    println!("fingerprint {}", backbone.fingerprint());
    for (name, t) in backbone.named_tensors().iter().take(6) {
        println!("  {name:<24} {:?}", t.dim());
    }

    let dir = std::env::temp_dir().join("tsalign-backbone-example");
    std::fs::create_dir_all(&dir).map_err(|e| tsalign::Error::io(&dir, e))?;
    let path = dir.join("mini.ckpt");
    backbone.save(&path)?;
    let loaded = FrozenBackbone::load_checkpoint(&path, dims)?;
    println!("reloaded fingerprint matches: {}", loaded.fingerprint() == backbone.fingerprint());

    let tokens = loaded.tokenizer().encode("the series rises then falls");
    let hidden = loaded.forward(&loaded.embed_tokens(&tokens))?;
    let same = backbone.forward(&backbone.embed_tokens(&tokens))? == hidden;
    println!("{} tokens → hidden {:?}, identical forward: {same}", tokens.len(), hidden.dim());
    Ok(())
}
