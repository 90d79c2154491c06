use dme_core::encoding::{
    build_occ_text, encode_text, logical_fuse, EncoderParams, TextEncoding, Vocabulary, EMPTY_ID, UNK_ID,
};
use dme_nn::{multi_head_attention, seeded_rng, uniform_matrix, AttentionParams, Matrix};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn vocab() -> Vocabulary {
    Vocabulary::from_corpus([
        "I watch the vehicle ahead in my lane.",
        "Two lanes, three vehicles nearby.",
        "I will slow down.",
    ])
}

#[test]
fn tokenize_examples() {
    let v = Vocabulary::from_corpus(["Turn left."]);
    assert_eq!(
        v.tokenize("Turn left."),
        vec![v.id("turn").unwrap(), v.id("left").unwrap()]
    );
    assert_eq!(v.tokenize(""), vec![EMPTY_ID]);
    assert_eq!(v.tokenize("zzzunknownzzz"), vec![UNK_ID]);
}

#[test]
fn occ_text_stacks_gaze_then_description() {
    let v = vocab();
    let p = EncoderParams::random(v.len(), 8, 16, &mut seeded_rng(2));
    let gaze = "I watch the vehicle";
    let desc = "Two lanes, three vehicles nearby.";
    let occ = build_occ_text(gaze, desc, &v, &p).unwrap();
    assert_eq!(occ.tokens(), 4 + 5);
    let g = encode_text(&v.tokenize(gaze), &p).unwrap();
    for r in 0..g.tokens() {
        assert_eq!(occ.matrix().row(r), g.matrix().row(r));
    }
    assert_eq!(build_occ_text("", "", &v, &p).unwrap().tokens(), 2);
}

#[test]
fn token_order_shows_through_positions() {
    let p = EncoderParams::random(10, 8, 16, &mut seeded_rng(4));
    let a = encode_text(&[3, 4, 5], &p).unwrap();
    let b = encode_text(&[5, 4, 3], &p).unwrap();
    assert_ne!(a, b);
    let z = EncoderParams::zeros(10, 8, 16);
    let e = encode_text(&[7], &z).unwrap();
    assert_eq!(e.matrix().row(0), z.positional.row(0));
}

#[test]
fn single_token_fuse_adds_projected_value() {
    let mut rng = seeded_rng(9);
    let p = AttentionParams::random(8, 2, &mut rng).unwrap();
    let b = uniform_matrix(5, 8, 1, &mut rng);
    let t = uniform_matrix(1, 8, 1, &mut rng);
    let fused = logical_fuse(&b, &TextEncoding(t.clone()), &p).unwrap();
    // With one key every softmax weight is 1.
    let heads: Vec<Matrix> = p.value.iter().map(|w| t.matmul(w).unwrap()).collect();
    let joined: Vec<f64> = heads.iter().flat_map(|h| h.data().to_vec()).collect();
    let delta = Matrix::from_vec(1, 8, joined).unwrap().matmul(&p.output).unwrap();
    let want = b.add_row(&delta).unwrap();
    assert!(fused.max_abs_diff(&want).unwrap() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_output_projection_is_identity(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = seeded_rng(seed);
        let mut p = AttentionParams::random(16, 4, &mut rng).unwrap();
        p.output = Matrix::zeros(16, 16);
        let b = uniform_matrix(12, 16, 1, &mut rng).scale(5.0);
        let t = TextEncoding(uniform_matrix(n, 16, 1, &mut rng));
        prop_assert_eq!(logical_fuse(&b, &t, &p).unwrap(), b);
    }

    #[test]
    fn fuse_ignores_text_order(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let p = AttentionParams::random(16, 4, &mut rng).unwrap();
        let b = uniform_matrix(12, 16, 1, &mut rng);
        let t = uniform_matrix(7, 16, 1, &mut rng);
        let base = logical_fuse(&b, &TextEncoding(t.clone()), &p).unwrap();
        let mut perm: Vec<usize> = (0..7).collect();
        perm.shuffle(&mut rng);
        let out = logical_fuse(&b, &TextEncoding(t.select_rows(&perm)), &p).unwrap();
        prop_assert!(base.max_abs_diff(&out).unwrap() <= 1e-12);
        // Fusion is attention plus the shortcut.
        let att = multi_head_attention(&b, &t, &t, &p).unwrap();
        prop_assert!(base.max_abs_diff(&att.add(&b).unwrap()).unwrap() == 0.0);
    }
}
