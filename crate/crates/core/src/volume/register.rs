//! Translation-only alignment by exhaustive normalized cross-correlation search.

use super::resample::trilinear;
use super::{RigidTransform, Volume};
use crate::{Error, Result};

/// NCC between `moving(p)` and `fixed(p + offset)` over the voxels where
/// both samples are inside their grids. `offset` is in fixed-grid voxels.
/// Returns `None` when the overlap is empty or has zero variance.
pub fn ncc_at_offset(fixed: &Volume, moving: &Volume, offset: [f64; 3]) -> Option<f64> {
    let fg = fixed.geometry();
    let mg = moving.geometry();
    let integral = offset.iter().all(|o| o.fract() == 0.0);
    let [nz, ny, nx] = mg.dims;

    let (mut n, mut sf, mut sm, mut sff, mut smm, mut sfm) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..nz {
        let cz = k as f64 + offset[0];
        if cz < -1e-9 || cz > (fg.dims[0] - 1) as f64 + 1e-9 {
            continue;
        }
        for j in 0..ny {
            let cy = j as f64 + offset[1];
            if cy < -1e-9 || cy > (fg.dims[1] - 1) as f64 + 1e-9 {
                continue;
            }
            for i in 0..nx {
                let cx = i as f64 + offset[2];
                if cx < -1e-9 || cx > (fg.dims[2] - 1) as f64 + 1e-9 {
                    continue;
                }
                let f = if integral {
                    fixed.get(cz.round() as usize, cy.round() as usize, cx.round() as usize) as f64
                } else {
                    trilinear(fixed.voxels(), fg, [cz, cy, cx])
                };
                let m = moving.get(k, j, i) as f64;
                n += 1;
                sf += f;
                sm += m;
                sff += f * f;
                smm += m * m;
                sfm += f * m;
            }
        }
    }
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let cov = sfm - sf * sm / nf;
    let vf = sff - sf * sf / nf;
    let vm = smm - sm * sm / nf;
    let denom = (vf * vm).sqrt();
    if !(denom > 1e-12 * nf) {
        return None;
    }
    Some(cov / denom)
}

fn variance(v: &Volume) -> f64 {
    let n = v.voxels().len() as f64;
    let mean = v.voxels().iter().map(|&x| x as f64).sum::<f64>() / n;
    v.voxels().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n
}

fn better(candidate: (f64, [f64; 3]), best: (f64, [f64; 3])) -> bool {
    let norm = |o: [f64; 3]| o.iter().map(|v| v * v).sum::<f64>();
    candidate.0 > best.0 || (candidate.0 == best.0 && norm(candidate.1) < norm(best.1))
}

/// Estimates the translation `t` such that `moving ≈ resample(fixed, t)`,
/// i.e. `moving(p) ≈ fixed(p + t)`. Realign with `t.inverse()`.
///
/// Exhaustive integer search within `±search_radius_vox`, then one
/// step-halving refinement from 0.5 voxel down to `step_vox`. Ties prefer
/// the smaller shift.
pub fn estimate_translation(
    fixed: &Volume,
    moving: &Volume,
    search_radius_vox: usize,
    step_vox: f64,
) -> Result<RigidTransform> {
    if search_radius_vox < 1 {
        return Err(Error::OutOfRange("search radius must be at least 1 voxel".into()));
    }
    if fixed.geometry().spacing != moving.geometry().spacing {
        return Err(Error::GeometryMismatch("alignment requires shared spacing".into()));
    }
    if variance(fixed) <= 0.0 {
        return Err(Error::DegenerateInput("fixed volume has zero variance".into()));
    }
    if variance(moving) <= 0.0 {
        return Err(Error::DegenerateInput("moving volume has zero variance".into()));
    }
    let fg = fixed.geometry();
    let mg = moving.geometry();
    // moving index -> fixed index offset from the two origins
    let base: Vec<f64> = (0..3).map(|a| (mg.origin[a] - fg.origin[a]) / fg.spacing[a]).collect();
    let eval = |o: [f64; 3]| ncc_at_offset(fixed, moving, [base[0] + o[0], base[1] + o[1], base[2] + o[2]]);

    let r = search_radius_vox as i64;
    let mut best = (f64::NEG_INFINITY, [0.0; 3]);
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                let o = [dz as f64, dy as f64, dx as f64];
                if let Some(score) = eval(o) {
                    if better((score, o), best) {
                        best = (score, o);
                    }
                }
            }
        }
    }
    if best.0 == f64::NEG_INFINITY {
        return Err(Error::DegenerateInput("no overlap with non-zero variance".into()));
    }

    let mut step = 0.5;
    while step >= step_vox && step_vox > 0.0 {
        let center = best.1;
        for dz in [-1.0, 0.0, 1.0] {
            for dy in [-1.0, 0.0, 1.0] {
                for dx in [-1.0, 0.0, 1.0] {
                    if dz == 0.0 && dy == 0.0 && dx == 0.0 {
                        continue;
                    }
                    let o = [center[0] + dz * step, center[1] + dy * step, center[2] + dx * step];
                    if let Some(score) = eval(o) {
                        if score > best.0 {
                            best = (score, o);
                        }
                    }
                }
            }
        }
        step /= 2.0;
    }

    let t = best.1;
    Ok(RigidTransform::translation([
        t[0] * fg.spacing[0] + 0.0,
        t[1] * fg.spacing[1] + 0.0,
        t[2] * fg.spacing[2] + 0.0,
    ]))
}
