//! Dilation-free ResNet: pointwise embedding, residual 3 × 3 blocks, pointwise decoder.

use super::{Layout, ModelSpec, Net};
use crate::conditioning::head_layout;
use crate::error::Result;
use crate::tensor::{Real, Var};

pub(super) fn layout(spec: &ModelSpec, l: &mut Layout) {
    let h = spec.hidden_channels;
    l.conv("in1", spec.input_channels(), h, 1, false);
    l.conv("in2", h, h, 1, false);
    for i in 0..spec.layers {
        let name = format!("block{i}");
        l.conv(&format!("{name}.conv1"), h, h, 3, false);
        l.norm(&format!("{name}.norm1"), h);
        l.conv(&format!("{name}.conv2"), h, h, 3, false);
        l.norm(&format!("{name}.norm2"), h);
        head_layout(l, &name, spec.cond_width(), h, spec.conditioning);
    }
    l.conv("out1", h, h, 1, false);
    l.conv("out2", h, spec.out_fields, 1, false);
}

pub(super) fn forward<'g, T: Real>(spec: &ModelSpec, net: &Net<'_, 'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let mut x = net.conv("in1", x, 1)?.gelu();
    x = net.conv("in2", x, 1)?.gelu();
    for i in 0..spec.layers {
        let name = format!("block{i}");
        let mut h = net.conv(&format!("{name}.conv1"), x, 1)?;
        h = net.inj.add(&name, h)?;
        h = net.inj.norm(&name, &net.norm(&format!("{name}.norm1"), 1), h)?.gelu();
        h = net.conv(&format!("{name}.conv2"), h, 1)?;
        h = net.norm(&format!("{name}.norm2"), 1).apply(h)?;
        x = h.add(x)?.gelu();
    }
    let x = net.conv("out1", x, 1)?.gelu();
    net.conv("out2", x, 1)
}
