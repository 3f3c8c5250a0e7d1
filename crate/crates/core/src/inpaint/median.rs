use crate::error::{Error, Result};
use crate::geometry::WarpedView;
use crate::image::Image;

/// Per pixel and channel, the median of the views whose mask is set (mean of
/// the two middle values for an even count). Pixels no view covers are 0 and
/// flagged in the returned hole mask.
pub fn median_fusion(views: &[WarpedView]) -> Result<(Image, Vec<bool>)> {
    let first = views
        .first()
        .ok_or_else(|| Error::InvalidArgument("median fusion needs at least one view".into()))?;
    let (c, h, w) = (first.rgb.channels, first.rgb.height, first.rgb.width);
    if views
        .iter()
        .any(|v| !v.rgb.same_dims(&first.rgb) || v.mask.len() != h * w)
    {
        return Err(Error::shape(
            "median_fusion",
            "views differ in size".to_string(),
        ));
    }
    let n = h * w;
    let mut out = Image::zeros(c, h, w);
    let mut holes = vec![false; n];
    let mut vals = Vec::with_capacity(views.len());
    for p in 0..n {
        if !views.iter().any(|v| v.mask[p]) {
            holes[p] = true;
            continue;
        }
        for ch in 0..c {
            vals.clear();
            vals.extend(
                views
                    .iter()
                    .filter(|v| v.mask[p])
                    .map(|v| v.rgb.data[ch * n + p]),
            );
            vals.sort_by(f32::total_cmp);
            let k = vals.len();
            out.data[ch * n + p] = if k % 2 == 1 {
                vals[k / 2]
            } else {
                0.5 * (vals[k / 2 - 1] + vals[k / 2])
            };
        }
    }
    Ok((out, holes))
}
