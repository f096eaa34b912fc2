use filterbench::filters::enhance::{bundled_lut_bytes, ToneCurve, LUT_SIZE};
use filterbench::filters::ENHANCEMENT_IDS;

fn lut_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/luts")
}

/// Rewrites the bundled tables from the tone-curve presets.
#[test]
#[ignore]
fn regenerate_bundled_luts() {
    for id in ENHANCEMENT_IDS {
        let bytes = ToneCurve::preset(id).unwrap().bake(LUT_SIZE).to_bytes();
        std::fs::write(lut_dir().join(format!("{id}.lut")), bytes).unwrap();
    }
}

#[test]
fn bundled_tables_match_presets() {
    for id in ENHANCEMENT_IDS {
        let baked = ToneCurve::preset(id).unwrap().bake(LUT_SIZE).to_bytes();
        assert_eq!(bundled_lut_bytes(id).unwrap(), baked.as_slice(), "{id} is stale");
    }
}
