//! Modern U-Net with pre-norm residual blocks, optional mid-level attention,
//! and optional Fourier blocks at the finest levels (U-FNet).

use super::{Family, Layout, ModelSpec, Net};
use crate::conditioning::head_layout;
use crate::error::Result;
use crate::tensor::{spatial_attention, AttentionWeights, Real, Var};

/// Output groups are capped at 8 and must divide the width.
fn final_groups(c: usize) -> usize {
    let (mut a, mut b) = (8, c);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Clone, Copy)]
pub(super) enum Kind {
    Residual,
    Fourier([usize; 2]),
}

fn kind(spec: &ModelSpec, level: usize) -> Kind {
    if spec.family == Family::Ufnet && level < spec.ufnet_blocks {
        Kind::Fourier(spec.fourier_modes()[level])
    } else {
        Kind::Residual
    }
}

fn block_layout(spec: &ModelSpec, l: &mut Layout, name: &str, kind: Kind, cin: usize, cout: usize) {
    l.norm(&format!("{name}.norm1"), cin);
    match kind {
        Kind::Residual => l.conv(&format!("{name}.conv1"), cin, cout, 3, false),
        Kind::Fourier(modes) => {
            l.spectral(&format!("{name}.spec1"), cin, cout, modes);
            l.conv(&format!("{name}.conv1"), cin, cout, 1, false);
        }
    }
    head_layout(l, name, spec.cond_width(), cout, spec.conditioning);
    l.norm(&format!("{name}.norm2"), cout);
    match kind {
        Kind::Residual => l.conv(&format!("{name}.conv2"), cout, cout, 3, true),
        Kind::Fourier(modes) => {
            l.spectral(&format!("{name}.spec2"), cout, cout, modes);
            l.conv(&format!("{name}.conv2"), cout, cout, 1, false);
        }
    }
    if cin != cout {
        l.conv(&format!("{name}.skip"), cin, cout, 1, false);
    }
}

pub(super) fn block<'g, T: Real>(net: &Net<'_, 'g, T>, name: &str, kind: Kind, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let h = net.norm(&format!("{name}.norm1"), 1).apply(x)?.gelu();
    let h = match kind {
        Kind::Residual => net.conv(&format!("{name}.conv1"), h, 1)?,
        Kind::Fourier(_) => net.spectral(&format!("{name}.spec1"), h)?.add(net.conv(&format!("{name}.conv1"), h, 1)?)?,
    };
    let h = net.inj.add(name, h)?;
    let h = net.inj.norm(name, &net.norm(&format!("{name}.norm2"), 1), h)?.gelu();
    let h = match kind {
        Kind::Residual => net.conv(&format!("{name}.conv2"), h, 1)?,
        Kind::Fourier(_) => net.spectral(&format!("{name}.spec2"), h)?.add(net.conv(&format!("{name}.conv2"), h, 1)?)?,
    };
    let shortcut = if net.p.has(&format!("{name}.skip.w")) { net.conv(&format!("{name}.skip"), x, 1)? } else { x };
    h.add(shortcut)
}

/// Widths after each level, starting from the embedding width.
fn widths(spec: &ModelSpec) -> Vec<usize> {
    let mut c = vec![spec.hidden_channels];
    for m in spec.multipliers() {
        c.push(c.last().unwrap() * m);
    }
    c
}

pub(super) fn layout(spec: &ModelSpec, l: &mut Layout) {
    let c = widths(spec);
    let levels = c.len() - 1;
    let k = spec.kernel_size;
    l.conv("proj", spec.input_channels(), c[0], k, false);
    for i in 0..levels {
        let mut cin = c[i];
        for j in 0..spec.blocks_per_level {
            block_layout(spec, l, &format!("down{i}.{j}"), kind(spec, i), cin, c[i + 1]);
            cin = c[i + 1];
        }
        if i + 1 < levels {
            l.conv(&format!("down{i}.sample"), c[i + 1], c[i + 1], 3, false);
        }
    }
    let mid = c[levels];
    block_layout(spec, l, "mid.0", Kind::Residual, mid, mid);
    if spec.family == Family::UnetAtt {
        l.norm("mid.attn.norm", mid);
        for p in ["q", "k", "v", "o"] {
            l.linear(&format!("mid.attn.{p}"), mid, mid);
        }
    }
    block_layout(spec, l, "mid.1", Kind::Residual, mid, mid);
    for i in (0..levels).rev() {
        let width = c[i + 1];
        for j in 0..spec.blocks_per_level {
            block_layout(spec, l, &format!("up{i}.{j}"), kind(spec, i), 2 * width, width);
        }
        block_layout(spec, l, &format!("up{i}.{}", spec.blocks_per_level), kind(spec, i), width + c[i], c[i]);
        if i > 0 {
            l.conv(&format!("up{i}.sample"), c[i], c[i], 3, false);
        }
    }
    l.norm("final.norm", c[0]);
    l.conv("final", c[0], spec.out_fields, k, false);
}

pub(super) fn forward<'g, T: Real>(spec: &ModelSpec, net: &Net<'_, 'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let levels = spec.multipliers().len();
    let n = spec.blocks_per_level;
    let mut x = net.conv("proj", x, 1)?;
    let mut skips = vec![x];
    for i in 0..levels {
        for j in 0..n {
            x = block(net, &format!("down{i}.{j}"), kind(spec, i), x)?;
            skips.push(x);
        }
        if i + 1 < levels {
            x = net.conv(&format!("down{i}.sample"), x, 2)?;
            skips.push(x);
        }
    }
    x = block(net, "mid.0", Kind::Residual, x)?;
    if spec.family == Family::UnetAtt {
        let p = |s: &str| net.p.get(&format!("mid.attn.{s}"));
        let weights = AttentionWeights {
            wq: p("q.w"),
            bq: p("q.b"),
            wk: p("k.w"),
            bk: p("k.b"),
            wv: p("v.w"),
            bv: p("v.b"),
            wo: p("o.w"),
            bo: p("o.b"),
        };
        let normed = net.norm("mid.attn.norm", 1).apply(x)?;
        x = x.add(spatial_attention(normed, &weights)?)?;
    }
    x = block(net, "mid.1", Kind::Residual, x)?;
    for i in (0..levels).rev() {
        for j in 0..=n {
            let s = skips.pop().expect("one skip per up block");
            x = block(net, &format!("up{i}.{j}"), kind(spec, i), Var::concat_channels(&[x, s])?)?;
        }
        if i > 0 {
            x = net.conv(&format!("up{i}.sample"), x.upsample_nearest(2)?, 1)?;
        }
    }
    let x = net.norm("final.norm", final_groups(spec.hidden_channels)).apply(x)?.gelu();
    net.conv("final", x, 1)
}
