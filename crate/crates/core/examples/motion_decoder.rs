//! Reconstructs a flow field from soft masks with the piecewise-constant
//! pathway alone and with a bounded per-pixel residual, using identity
//! pooling maps.

use motionseg::motion::{broadcast_flows, compose_residual, motion_loss, pool_channel_flows};
use motionseg::net::ResidualFlowStack;
use ndarray::{Array3, Array4};

fn main() -> motionseg::Result<()> {
    let (h, w) = (16, 16);
    // A square translating by (1, 0.5) whose right half also spins a little.
    let inside = |y: usize, x: usize| (4..12).contains(&y) && (4..12).contains(&x);
    let flow = Array3::from_shape_fn((2, h, w), |(k, y, x)| {
        if !inside(y, x) {
            return 0.0;
        }
        let base = [1.0, 0.5][k];
        let spin = if x >= 8 { [0.0, 0.1 * (x as f64 - 8.0)][k] } else { 0.0 };
        base + spin
    });
    let masks = Array3::from_shape_fn((2, h, w), |(c, y, x)| {
        let fg = if inside(y, x) { 0.95 } else { 0.05 };
        if c == 0 { fg } else { 1.0 - fg }
    });
    let pooled = pool_channel_flows(flow.view(), masks.view(), |r| r.clone(), |r| r.clone())?;
    println!("pooled vectors per channel:\n{:.3}", pooled.per_channel);
    let piecewise = broadcast_flows(&pooled.per_channel, masks.view())?;
    println!("piecewise-only loss: {:.4}", motion_loss(piecewise.view(), flow.view())?);

    // Ideal residual for the object channel, clipped to the bound.
    let bound = 1.0;
    let mut values = Array4::zeros((2, 2, h, w));
    for k in 0..2 {
        for y in 0..h {
            for x in 0..w {
                let r = (flow[[k, y, x]] - piecewise[[k, y, x]]) / masks[[0, y, x]];
                values[[0, k, y, x]] = r.clamp(-0.999 * bound, 0.999 * bound);
            }
        }
    }
    let stack = ResidualFlowStack { values, bound };
    let residual = compose_residual(&stack, masks.view())?;
    let total = &piecewise + &residual;
    println!("with residual loss:  {:.4}", motion_loss(total.view(), flow.view())?);
    Ok(())
}
