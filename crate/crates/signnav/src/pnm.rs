//! Portable pixmap export for debugging frames.

use signnav_core::render::Image;

/// Binary P6 from a 3-channel image with values in [0, 1].
pub fn rgb_p6(img: &Image) -> Vec<u8> {
    assert_eq!(img.channels, 3, "P6 needs a 3-channel image");
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Binary 16-bit P5 of depth in millimeters (big-endian samples).
pub fn depth_p5(img: &Image) -> Vec<u8> {
    assert_eq!(img.channels, 1, "P5 needs a 1-channel image");
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    for &d in &img.data {
        let mm = (d * 1000.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&mm.to_be_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_and_sizes() {
        let mut rgb = Image::new(2, 1, 3);
        rgb.set_px(1, 0, [1.0, 0.5, 0.0]);
        let p6 = rgb_p6(&rgb);
        assert!(p6.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&p6[p6.len() - 3..], &[255, 128, 0]);
        let mut d = Image::new(2, 1, 1);
        d.set(0, 0, 0, 1.2345);
        let p5 = depth_p5(&d);
        assert!(p5.starts_with(b"P5\n2 1\n65535\n"));
        assert_eq!(p5.len(), b"P5\n2 1\n65535\n".len() + 4);
        assert_eq!(u16::from_be_bytes([p5[p5.len() - 4], p5[p5.len() - 3]]), 1235);
    }
}
