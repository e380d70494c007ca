use super::ModelError;
use crate::diffcore::Tensor;

/// Widen a patch-embedding kernel from temporal extent 3 to 7, preserving
/// pretrained weights: the new kernel is zero everywhere except temporal
/// slices {1, 3, 5}, which receive the old slices {0, 1, 2}.
pub fn inflate_patch_kernel(old: &Tensor) -> Result<Tensor, ModelError> {
    let s = old.shape();
    if s.len() != 5 || s[2] != 3 {
        return Err(ModelError::BadConfig(format!(
            "inflate_patch_kernel expects [c_out, c_in, 3, kh, kw], got {s:?}"
        )));
    }
    let (co, ci, kh, kw) = (s[0], s[1], s[3], s[4]);
    let new_shape = [co, ci, 7, kh, kw];
    let mut out = Tensor::zeros(&new_shape);
    let spatial = kh * kw;
    for o in 0..co {
        for i in 0..ci {
            for t in 0..3 {
                let src = ((o * ci + i) * 3 + t) * spatial;
                let dst = ((o * ci + i) * 7 + (2 * t + 1)) * spatial;
                let (src_slice, dst_at) = (src..src + spatial, dst);
                out.data_mut()[dst_at..dst_at + spatial]
                    .copy_from_slice(&old.data()[src_slice]);
            }
        }
    }
    Ok(out)
}
