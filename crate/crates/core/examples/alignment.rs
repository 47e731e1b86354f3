//! Cross-attention of patch embeddings over anchor words and text prototypes.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tsalign::alignment::{
    align_component, default_anchor_words, resolve_anchor_embeddings, AlignmentContext, CrossAttentionBlock,
    PrototypeBank,
};
use tsalign::backbone::{BackboneDims, FrozenBackbone};
use tsalign::Component;

fn random(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let d = Normal::new(0.0, std).unwrap();
    Array2::from_shape_fn((rows, cols), |_| d.sample(rng))
}

fn main() -> tsalign::Result<()> {
    let backbone = FrozenBackbone::init_mini(0, BackboneDims::default())?;
    let d = backbone.d_model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let block = CrossAttentionBlock {
        w_q: random(d, d, 0.2, &mut rng),
        w_k: random(d, d, 0.2, &mut rng),
        w_v: random(d, d, 0.2, &mut rng),
        heads: 4,
    };
    let patches = random(6, d, 1.0, &mut rng);

    let anchors = resolve_anchor_embeddings(&default_anchor_words(), &backbone)?;
    let trend = align_component(Component::Trend, &patches, &block, AlignmentContext::Anchors(&anchors))?;
    let avg = trend.weights.mean_axis(ndarray::Axis(0)).unwrap();
    println!("trend: {} patches × {} anchors", avg.nrows(), avg.ncols());
    for (k, row) in avg.rows().into_iter().enumerate() {
        let best = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        println!("  patch {k}: {:<12} {:.3}  (row sum {:.6})", anchors.words[best.0], best.1, row.sum());
    }

    let bank = PrototypeBank {
        component: Component::Seasonal,
        probe: random(24, backbone.dims().vocab_size, 0.06, &mut rng),
    };
    let ctx = AlignmentContext::Prototypes {
        bank: &bank,
        vocab: backbone.vocab_table(),
    };
    let seasonal = align_component(Component::Seasonal, &patches, &block, ctx)?;
    println!("seasonal: output {:?}, weights {:?}", seasonal.output.dim(), seasonal.weights.dim());
    Ok(())
}
