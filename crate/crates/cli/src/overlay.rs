//! Plain-PPM overlay rendering: grey base slice, red for model A, blue for
//! model B, magenta where both agree.

/// Renders an `h × w` image. `base` is expected in `[0, 1]`.
pub fn render_overlay(base: &[f32], a: &[u8], b: &[u8], h: usize, w: usize) -> Vec<[u8; 3]> {
    assert_eq!(base.len(), h * w);
    assert_eq!(a.len(), h * w);
    assert_eq!(b.len(), h * w);
    base.iter()
        .zip(a.iter().zip(b))
        .map(|(&v, (&pa, &pb))| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            let dim = g / 2;
            match (pa != 0, pb != 0) {
                (false, false) => [g, g, g],
                (true, false) => [255, dim, dim],
                (false, true) => [dim, dim, 255],
                (true, true) => [255, dim, 255],
            }
        })
        .collect()
}

/// ASCII `P3` encoding, one pixel row per line.
pub fn encode_ppm(pixels: &[[u8; 3]], h: usize, w: usize) -> String {
    let mut out = format!("P3\n{w} {h}\n255\n");
    for row in pixels.chunks(w) {
        let line: Vec<String> = row.iter().map(|[r, g, b]| format!("{r} {g} {b}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Vec<f32> {
        (0..12).map(|i| i as f32 / 11.0).collect()
    }

    #[test]
    fn empty_prediction_is_pure_grey() {
        let px = render_overlay(&base(), &[0; 12], &[0; 12], 3, 4);
        assert!(px.iter().all(|[r, g, b]| r == g && g == b));
    }

    #[test]
    fn full_prediction_tints_everything() {
        let px = render_overlay(&base(), &[1; 12], &[0; 12], 3, 4);
        assert!(px.iter().all(|p| p[0] == 255 && p[0] != p[2]));
        let px = render_overlay(&base(), &[0; 12], &[1; 12], 3, 4);
        assert!(px.iter().all(|p| p[2] == 255 && p[0] != p[2]));
    }

    #[test]
    fn single_pixel_tints_one_pixel() {
        let mut a = [0u8; 12];
        a[6] = 1;
        let px = render_overlay(&[1.0; 12], &a, &[0; 12], 3, 4);
        let tinted: Vec<usize> = (0..12).filter(|&i| px[i] != [255, 255, 255]).collect();
        assert_eq!(tinted, vec![6]);
    }

    #[test]
    fn ppm_header_and_rows() {
        let s = encode_ppm(&[[1, 2, 3], [4, 5, 6]], 1, 2);
        assert_eq!(s, "P3\n2 1\n255\n1 2 3 4 5 6\n");
    }
}
