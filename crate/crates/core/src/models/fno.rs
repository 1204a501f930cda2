//! Fourier neural operator: pointwise lift, spectral layers, pointwise projection.

use super::{Layout, ModelSpec, Net};
use crate::conditioning::head_layout;
use crate::error::Result;
use crate::tensor::{Real, Var};

pub(super) fn layout(spec: &ModelSpec, l: &mut Layout) {
    let h = spec.hidden_channels;
    l.conv("in1", spec.input_channels(), h, 1, false);
    l.conv("in2", h, h, 1, false);
    for i in 0..spec.layers {
        let name = format!("layer{i}");
        l.spectral(&format!("{name}.spectral"), h, h, spec.fno_modes);
        l.conv(&format!("{name}.conv"), h, h, 1, false);
        head_layout(l, &name, spec.cond_width(), h, spec.conditioning);
    }
    l.conv("out1", h, h, 1, false);
    l.conv("out2", h, spec.out_fields, 1, false);
}

pub(super) fn forward<'g, T: Real>(spec: &ModelSpec, net: &Net<'_, 'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let mut x = net.conv("in1", x, 1)?.gelu();
    x = net.conv("in2", x, 1)?.gelu();
    for i in 0..spec.layers {
        let name = format!("layer{i}");
        let s = net.spectral(&format!("{name}.spectral"), x)?;
        let h = s.add(net.conv(&format!("{name}.conv"), x, 1)?)?;
        x = net.inj.add(&name, h)?.gelu();
    }
    let x = net.conv("out1", x, 1)?.gelu();
    net.conv("out2", x, 1)
}
