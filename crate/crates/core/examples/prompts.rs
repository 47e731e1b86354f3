//! Renders and embeds the component-specific prefix prompts for one window.

use tsalign::backbone::{BackboneDims, FrozenBackbone};
use tsalign::decompose::{additive_decompose, DecompConfig};
use tsalign::prompt::{component_stats, embed_prompt, render_prompt, PromptTemplate};
use tsalign::synthetic::{generate, SyntheticSpec};
use tsalign::Component;

fn main() -> tsalign::Result<()> {
    let ds = generate(&SyntheticSpec {
        len: 96,
        channels: 1,
        ..SyntheticSpec::default()
    });
    let x: Vec<f64> = ds.values.column(0).to_vec();
    let parts = additive_decompose(&x, &DecompConfig::default())?;
    let backbone = FrozenBackbone::init_mini(0, BackboneDims::default())?;
    let template = PromptTemplate {
        dataset_context: "hourly synthetic load with a daily cycle".into(),
        ..PromptTemplate::default()
    };
    for (c, values) in Component::ALL.into_iter().zip([&parts.trend, &parts.seasonal, &parts.residual]) {
        let text = render_prompt(&template, c, &component_stats(values), 96, 24);
        let emb = embed_prompt(&text, &backbone, 64);
        println!("{c:<9} {} tokens: {text}", emb.len());
    }
    Ok(())
}
