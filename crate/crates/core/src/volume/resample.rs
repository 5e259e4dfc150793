use super::{Geometry, MaskVolume, RigidTransform, Volume};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Trilinear,
    Nearest,
}

const EDGE_TOL: f64 = 1e-9;

/// Maps every output voxel centre through `t` into the moving grid and
/// returns the continuous moving index for each output voxel, in order.
fn for_each_sample(
    moving: &Geometry,
    reference: &Geometry,
    t: &RigidTransform,
    mut f: impl FnMut(usize, [f64; 3]),
) {
    let center = reference.center();
    let [nz, ny, nx] = reference.dims;
    let mut out = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = reference.physical([k as f64, j as f64, i as f64]);
                let q = t.apply(p, center);
                f(out, moving.continuous_index(q));
                out += 1;
            }
        }
    }
}

/// Linear weights along one axis; `None` when the coordinate is outside the grid.
#[inline]
fn axis_weights(c: f64, n: usize) -> Option<(usize, usize, f64)> {
    let max = (n - 1) as f64;
    if c < -EDGE_TOL || c > max + EDGE_TOL {
        return None;
    }
    let c = c.clamp(0.0, max);
    let i0 = c.floor() as usize;
    let frac = c - i0 as f64;
    let i1 = if i0 + 1 < n { i0 + 1 } else { i0 };
    Some((i0, i1, frac))
}

pub(crate) fn trilinear(data: &[f32], g: &Geometry, c: [f64; 3]) -> f64 {
    let (Some((z0, z1, fz)), Some((y0, y1, fy)), Some((x0, x1, fx))) = (
        axis_weights(c[0], g.dims[0]),
        axis_weights(c[1], g.dims[1]),
        axis_weights(c[2], g.dims[2]),
    ) else {
        return 0.0;
    };
    let at = |z, y, x| data[g.index(z, y, x)] as f64;
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
    let c00 = lerp(at(z0, y0, x0), at(z0, y0, x1), fx);
    let c01 = lerp(at(z0, y1, x0), at(z0, y1, x1), fx);
    let c10 = lerp(at(z1, y0, x0), at(z1, y0, x1), fx);
    let c11 = lerp(at(z1, y1, x0), at(z1, y1, x1), fx);
    lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz)
}

#[inline]
fn nearest_index(c: [f64; 3], g: &Geometry) -> Option<usize> {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = (c[a] + 0.5).floor();
        if r < 0.0 || r > (g.dims[a] - 1) as f64 {
            return None;
        }
        idx[a] = r as usize;
    }
    Some(g.index(idx[0], idx[1], idx[2]))
}

pub fn resample_volume(
    moving: &Volume,
    reference: &Geometry,
    t: &RigidTransform,
    interp: Interp,
) -> Result<Volume> {
    reference.validate()?;
    let mg = moving.geometry();
    let mut out = vec![0.0f32; reference.len()];
    for_each_sample(mg, reference, t, |o, c| {
        out[o] = match interp {
            Interp::Trilinear => trilinear(moving.voxels(), mg, c) as f32,
            Interp::Nearest => nearest_index(c, mg).map_or(0.0, |i| moving.voxels()[i]),
        };
    });
    Volume::new(*reference, moving.modality(), out)
}

pub fn resample_mask(
    moving: &MaskVolume,
    reference: &Geometry,
    t: &RigidTransform,
    interp: Interp,
) -> Result<MaskVolume> {
    if interp == Interp::Trilinear {
        return Err(Error::TrilinearMask);
    }
    reference.validate()?;
    let mg = moving.geometry();
    let mut out = vec![0u8; reference.len()];
    for_each_sample(mg, reference, t, |o, c| {
        out[o] = nearest_index(c, mg).map_or(0, |i| moving.voxels()[i]);
    });
    MaskVolume::new(*reference, moving.label_source(), out)
}

/// Either kind of volume, for callers that resample heterogeneous inputs.
pub trait Resample: Sized {
    fn resample(&self, reference: &Geometry, t: &RigidTransform, interp: Interp) -> Result<Self>;
}

impl Resample for Volume {
    fn resample(&self, reference: &Geometry, t: &RigidTransform, interp: Interp) -> Result<Self> {
        resample_volume(self, reference, t, interp)
    }
}

impl Resample for MaskVolume {
    fn resample(&self, reference: &Geometry, t: &RigidTransform, interp: Interp) -> Result<Self> {
        resample_mask(self, reference, t, interp)
    }
}

/// Resamples `moving` onto `reference`: output voxel `p` takes the moving
/// value at `t(p)`. Out-of-bounds samples are 0.
pub fn resample_to_reference<V: Resample>(
    moving: &V,
    reference: &Geometry,
    t: &RigidTransform,
    interp: Interp,
) -> Result<V> {
    moving.resample(reference, t, interp)
}
