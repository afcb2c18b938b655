use image::ImageDecoder;
use plumeseg::io::{
    decode_cube, emit_image, encode_cube, encode_netpbm, encoded_cube_len, quantize, read_cube,
    write_cube,
};
use plumeseg::{CubeKind, HyperCube, Raster};
use proptest::prelude::*;

fn cube_strategy() -> impl Strategy<Value = HyperCube> {
    (1usize..4, 1usize..5, 1usize..5, 1usize..6, 0u8..3).prop_flat_map(|(t, h, w, b, kind)| {
        let n = t * h * w * b;
        (
            proptest::collection::vec(1.0f64..100.0, b),
            proptest::collection::vec(
                proptest::num::f64::NORMAL
                    | proptest::num::f64::SUBNORMAL
                    | proptest::num::f64::ZERO,
                n,
            ),
        )
            .prop_map(move |(steps, data)| {
                let mut wl = Vec::with_capacity(b);
                let mut acc = 7000.0;
                for s in steps {
                    acc += s;
                    wl.push(acc);
                }
                HyperCube::new(t, h, w, wl, CubeKind::from_code(kind).unwrap(), data).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn cube_roundtrip_is_bit_exact(cube in cube_strategy()) {
        let bytes = encode_cube(&cube).unwrap();
        prop_assert_eq!(bytes.len(), encoded_cube_len(cube.frames(), cube.height(), cube.width(), cube.bands()));
        let back = decode_cube(&bytes).unwrap();
        prop_assert_eq!(back.kind(), cube.kind());
        prop_assert_eq!(back.wavelengths(), cube.wavelengths());
        let same = back.data().iter().zip(cube.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn netpbm_decodes_with_independent_reader(
        h in 1usize..12,
        w in 1usize..12,
        color in any::<bool>(),
        vals in proptest::collection::vec(0.0f64..=1.0, 432),
    ) {
        let c = if color { 3 } else { 1 };
        let raster = Raster::new(h, w, c, vals[..h * w * c].to_vec()).unwrap();
        let bytes = encode_netpbm(&raster).unwrap();
        prop_assert_eq!(encode_netpbm(&raster).unwrap(), bytes.clone());
        let dec = image::codecs::pnm::PnmDecoder::new(std::io::Cursor::new(&bytes)).unwrap();
        prop_assert_eq!(dec.dimensions(), (w as u32, h as u32));
        let mut buf = vec![0u8; dec.total_bytes() as usize];
        dec.read_image(&mut buf).unwrap();
        let expect: Vec<u8> = raster.data.iter().map(|&v| (v * 255.0).round() as u8).collect();
        prop_assert_eq!(buf, expect);
    }
}

#[test]
fn quantization_rounds_half_away_from_zero() {
    assert_eq!(quantize(0.0), 0);
    assert_eq!(quantize(1.0), 255);
    assert_eq!(quantize(0.5 / 255.0), 1);
    assert_eq!(quantize(0.5), 128);
}

#[test]
fn minimal_cube_file_size() {
    let cube = HyperCube::new(1, 1, 1, vec![8000.0], CubeKind::Radiance, vec![1.5]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.hsc");
    write_cube(&cube, &path).unwrap();
    // magic 4 + dims 16 + wavelength 8 + kind 1 + sample 8
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 37);
    assert_eq!(read_cube(&path).unwrap(), cube);
}

#[test]
fn image_files_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let raster = Raster::new(2, 3, 3, (0..18).map(|i| i as f64 / 17.0).collect()).unwrap();
    let (a, b) = (dir.path().join("a.ppm"), dir.path().join("b.ppm"));
    emit_image(&raster, &a).unwrap();
    emit_image(&raster, &b).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
    let img = image::open(&a).unwrap().to_rgb8();
    assert_eq!(
        img.get_pixel(2, 1).0,
        [quantize(15.0 / 17.0), quantize(16.0 / 17.0), 255]
    );
}
