//! Refinement targets on a reflection clip: a motion-style mask that also
//! covers the reflection is cleaned by the CRF and the semantic constraint.

use motionseg::appearance::{crf_refine, semantic_constraint, apply_constraint, ConstraintParams, CrfParams};
use motionseg::net::{align_features, AuxFeatureProvider, ColorStatistics};
use motionseg::synth::{generate_dataset, DatasetKind, DatasetSpec};
use ndarray::Array2;

fn covered(mask: &Array2<f64>, region: &Array2<u8>) -> f64 {
    let n = region.iter().filter(|&&v| v != 0).count().max(1);
    mask.iter().zip(region).filter(|(_, &r)| r != 0).map(|(p, _)| p).sum::<f64>() / n as f64
}

fn main() -> motionseg::Result<()> {
    let clip = generate_dataset(&DatasetSpec::new(DatasetKind::Reflection, 1), 3)?.remove(0);
    let frame = &clip.frames[0];
    let (sprite, reflection) = (&clip.gt_masks[0], &clip.confounder_masks[0]);
    // What a motion-only model tends to predict: sprite and reflection alike.
    let soft = Array2::from_shape_fn(sprite.dim(), |(y, x)| {
        if sprite[[y, x]] != 0 || reflection[[y, x]] != 0 { 0.8 } else { 0.1 }
    });
    let refined = crf_refine(soft.view(), frame.view(), &CrfParams::default(), 1.0)?;
    let (h, w) = soft.dim();
    let aux = align_features(&ColorStatistics::default().features(frame), h, w)?;
    let s = semantic_constraint(&refined, &aux, &ConstraintParams::default())?;
    let target = apply_constraint(&refined, &s)?;
    println!("{:<22} {:>8} {:>11}", "", "sprite", "reflection");
    for (name, m) in [("motion mask", &soft), ("after CRF", &refined.probs), ("after constraint", &target.probs)] {
        println!("{name:<22} {:>8.3} {:>11.3}", covered(m, sprite), covered(m, reflection));
    }
    println!("constraint disabled: {}", s.disabled);
    Ok(())
}
