use serde::{Deserialize, Serialize};

use super::params::{Bound, Initializer, ParamStore, WeightInit};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};

/// Shape of one U-net: `depth` pooling levels, `base_channels` at full
/// resolution doubling per level, and a final pointwise projection to
/// `out_channels`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl UNetConfig {
    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial size must survive `depth` halvings.
    pub fn check_tile(&self, h: usize, w: usize) -> Result<()> {
        let m = 1 << self.depth;
        if !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::Geometry(format!(
                "{h}x{w} input is not divisible by 2^{} = {m}",
                self.depth
            )));
        }
        Ok(())
    }

    pub(crate) fn init<T: Scalar>(
        &self,
        init: &mut Initializer,
        store: &mut ParamStore<T>,
        prefix: &str,
        out: WeightInit,
    ) -> Result<()> {
        let mut cin = self.in_channels;
        for l in 0..self.depth {
            let c = self.width(l);
            init.conv(
                store,
                &format!("{prefix}.down{l}.conv0"),
                c,
                cin,
                3,
                WeightInit::Relu,
            )?;
            init.conv(
                store,
                &format!("{prefix}.down{l}.conv1"),
                c,
                c,
                3,
                WeightInit::Relu,
            )?;
            cin = c;
        }
        let c = self.width(self.depth);
        init.conv(
            store,
            &format!("{prefix}.bottom.conv0"),
            c,
            cin,
            3,
            WeightInit::Relu,
        )?;
        init.conv(
            store,
            &format!("{prefix}.bottom.conv1"),
            c,
            c,
            3,
            WeightInit::Relu,
        )?;
        for l in (0..self.depth).rev() {
            let c = self.width(l);
            init.conv(
                store,
                &format!("{prefix}.up{l}.upconv"),
                c,
                2 * c,
                3,
                WeightInit::Relu,
            )?;
            init.conv(
                store,
                &format!("{prefix}.up{l}.conv0"),
                c,
                2 * c,
                3,
                WeightInit::Relu,
            )?;
            init.conv(
                store,
                &format!("{prefix}.up{l}.conv1"),
                c,
                c,
                3,
                WeightInit::Relu,
            )?;
        }
        init.conv(
            store,
            &format!("{prefix}.out"),
            self.out_channels,
            self.base_channels,
            1,
            out,
        )
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        prefix: &str,
        x: Var,
    ) -> Result<Var> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != self.in_channels {
            return Err(Error::Contract(format!(
                "{prefix}: expected {} input channels, got {c}",
                self.in_channels
            )));
        }
        self.check_tile(h, w)?;

        let mut skips = Vec::with_capacity(self.depth);
        let mut x = x;
        for l in 0..self.depth {
            let s = conv_block(tape, p, &format!("{prefix}.down{l}"), x)?;
            x = tape.max_pool2d(s, 2)?;
            skips.push(s);
        }
        x = conv_block(tape, p, &format!("{prefix}.bottom"), x)?;
        for l in (0..self.depth).rev() {
            let up = tape.upsample_nearest2x(x)?;
            let up = conv3x3_relu(tape, p, &format!("{prefix}.up{l}.upconv"), up)?;
            let cat = tape.concat_channels(&[skips[l], up])?;
            x = conv_block(tape, p, &format!("{prefix}.up{l}"), cat)?;
        }
        conv(tape, p, &format!("{prefix}.out"), x, 0)
    }
}

pub(crate) fn conv<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    name: &str,
    x: Var,
    pad: usize,
) -> Result<Var> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    tape.conv2d(x, w, b, 1, pad)
}

fn conv3x3_relu<T: Scalar>(tape: &mut Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = conv(tape, p, name, x, 1)?;
    Ok(tape.relu(y))
}

fn conv_block<T: Scalar>(tape: &mut Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = conv3x3_relu(tape, p, &format!("{name}.conv0"), x)?;
    conv3x3_relu(tape, p, &format!("{name}.conv1"), y)
}
