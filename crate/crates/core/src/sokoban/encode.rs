use std::sync::Arc;

use super::{Bitset, GridState, Layout, SokobanError};
use crate::nn::Tensor;

/// Plane order of the encoding.
pub const PLANES: [&str; 4] = ["wall", "agent", "box", "target"];

/// Binary `[4, H, W]` feature planes: wall, agent, box, target.
pub fn encode(s: &GridState) -> Tensor {
    let l = s.layout();
    let cells = l.cells();
    let mut data = vec![0.0; 4 * cells];
    for c in l.walls().ones() {
        data[c] = 1.0;
    }
    data[cells + s.agent_cell()] = 1.0;
    for c in s.boxes().ones() {
        data[2 * cells + c] = 1.0;
    }
    for c in l.targets().ones() {
        data[3 * cells + c] = 1.0;
    }
    Tensor::new(vec![4, l.height(), l.width()], data).expect("shape")
}

/// Inverse of [`encode`].
pub fn decode(t: &Tensor) -> Result<GridState, SokobanError> {
    let &[4, height, width] = t.shape() else {
        return Err(SokobanError::Invalid(format!("expected [4, H, W] planes, got {:?}", t.shape())));
    };
    let cells = height * width;
    let plane = |p: usize| -> Result<Bitset, SokobanError> {
        let mut b = Bitset::new(cells);
        for (c, &v) in t.data()[p * cells..(p + 1) * cells].iter().enumerate() {
            if v == 1.0 {
                b.set(c, true);
            } else if v != 0.0 {
                return Err(SokobanError::Invalid(format!("non-binary value {v} in {} plane", PLANES[p])));
            }
        }
        Ok(b)
    };
    let agents = plane(1)?;
    let mut agent = agents.ones();
    let (Some(agent), None) = (agent.next(), agent.next()) else {
        return Err(SokobanError::Invalid("agent plane must contain exactly one agent".into()));
    };
    let layout = Layout {
        width,
        height,
        walls: plane(0)?,
        targets: plane(3)?,
    };
    let s = GridState::from_parts(Arc::new(layout), plane(2)?, agent);
    s.validate()?;
    Ok(s)
}
