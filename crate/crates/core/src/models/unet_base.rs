//! Classic U-Net: double-conv blocks, max-pool down, transposed-conv up.

use super::{Layout, ModelSpec, Net};
use crate::conditioning::head_layout;
use crate::error::Result;
use crate::tensor::{Real, Var};

/// Channel widths `[c0, …, c_levels]`; the last one is the bottleneck.
fn widths(spec: &ModelSpec) -> Vec<usize> {
    let mut c = vec![spec.hidden_channels];
    for m in spec.multipliers() {
        c.push(c.last().unwrap() * m);
    }
    c
}

fn block_layout(spec: &ModelSpec, l: &mut Layout, name: &str, cin: usize, cout: usize) {
    l.conv(&format!("{name}.conv1"), cin, cout, 3, false);
    l.norm(&format!("{name}.norm1"), cout);
    l.conv(&format!("{name}.conv2"), cout, cout, 3, false);
    l.norm(&format!("{name}.norm2"), cout);
    head_layout(l, name, spec.cond_width(), cout, spec.conditioning);
}

pub(super) fn layout(spec: &ModelSpec, l: &mut Layout) {
    let c = widths(spec);
    let levels = c.len() - 1;
    let mut cin = spec.input_channels();
    for (i, &ci) in c[..levels].iter().enumerate() {
        block_layout(spec, l, &format!("enc{i}"), cin, ci);
        cin = ci;
    }
    block_layout(spec, l, "mid", cin, c[levels]);
    for i in (0..levels).rev() {
        l.conv_transpose(&format!("up{i}"), c[i + 1], c[i]);
        block_layout(spec, l, &format!("dec{i}"), 2 * c[i], c[i]);
    }
    l.conv("final", c[0], spec.out_fields, 1, false);
}

fn block<'g, T: Real>(net: &Net<'_, 'g, T>, name: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let mut h = net.conv(&format!("{name}.conv1"), x, 1)?;
    h = net.inj.add(name, h)?;
    h = net.inj.norm(name, &net.norm(&format!("{name}.norm1"), 1), h)?.gelu();
    h = net.conv(&format!("{name}.conv2"), h, 1)?;
    Ok(net.norm(&format!("{name}.norm2"), 1).apply(h)?.gelu())
}

pub(super) fn forward<'g, T: Real>(spec: &ModelSpec, net: &Net<'_, 'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let levels = spec.multipliers().len();
    let mut skips = Vec::with_capacity(levels);
    let mut x = x;
    for i in 0..levels {
        let h = block(net, &format!("enc{i}"), x)?;
        skips.push(h);
        x = h.max_pool2d(2)?;
    }
    x = block(net, "mid", x)?;
    for i in (0..levels).rev() {
        let up = net.p.get(&format!("up{i}.w"));
        let up_b = net.p.get(&format!("up{i}.b"));
        let u = x.conv_transpose2x2(up, Some(up_b))?;
        let s = skips.pop().expect("one skip per level");
        x = block(net, &format!("dec{i}"), Var::concat_channels(&[u, s])?)?;
    }
    net.conv("final", x, 1)
}
