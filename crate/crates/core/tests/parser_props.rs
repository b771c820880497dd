mod common;

use promo_bn::parser::{structurally_equal, tokenize};
use promo_bn::{parse_network, serialize_network, BUNDLED_MODEL};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn serialize_then_parse_is_identity(net in common::network(6)) {
        let text = serialize_network(&net);
        let back = parse_network(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert!(structurally_equal(&net, &back, 1e-9), "{text}");
        prop_assert_eq!(serialize_network(&back), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn parse_errors_point_inside_the_input(pos in 0usize..2000, byte in prop::sample::select(b"{}[]();:,=@#\"-0a ".to_vec())) {
        let mut text = BUNDLED_MODEL.as_bytes().to_vec();
        let pos = pos % text.len();
        text[pos] = byte;
        let Ok(text) = String::from_utf8(text) else { return Ok(()) };
        if let Err(e) = parse_network(&text) {
            let lines: Vec<&str> = text.split('\n').collect();
            prop_assert!(e.line >= 1 && e.line <= lines.len(), "{e}");
            prop_assert!(e.column >= 1 && e.column <= lines[e.line - 1].chars().count() + 1, "{e}");
        }
    }

    #[test]
    fn truncated_input_reports_a_position(cut in 0usize..2000) {
        let cut = cut % BUNDLED_MODEL.len();
        if !BUNDLED_MODEL.is_char_boundary(cut) {
            return Ok(());
        }
        let text = &BUNDLED_MODEL[..cut];
        let e = parse_network(text).expect_err("truncated model must not parse");
        let lines = text.split('\n').count();
        prop_assert!(e.line >= 1 && e.line <= lines, "{e}");
    }

    #[test]
    fn token_positions_are_one_based(net in common::network(4)) {
        let text = serialize_network(&net);
        let lines: Vec<&str> = text.split('\n').collect();
        for token in tokenize(&text).unwrap() {
            prop_assert!(token.line >= 1 && token.column >= 1);
            let line = lines[token.line - 1];
            let rest: String = line.chars().skip(token.column - 1).collect();
            prop_assert!(rest.starts_with(token.text.chars().next().unwrap_or(' ')) || rest.starts_with('"'),
                "{:?} at {}:{}", token.text, token.line, token.column);
        }
    }
}

#[test]
fn bundled_model_round_trips() {
    let net = parse_network(BUNDLED_MODEL).unwrap();
    let text = serialize_network(&net);
    assert!(structurally_equal(
        &net,
        &parse_network(&text).unwrap(),
        1e-9
    ));
}

#[test]
fn comments_and_layout_do_not_matter() {
    let net = parse_network(BUNDLED_MODEL).unwrap();
    let squashed: String = serialize_network(&net)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    let spaced = serialize_network(&net)
        .replace(";", " ;\n\n# note\n")
        .replace(",", " ,\t");
    assert!(structurally_equal(
        &net,
        &parse_network(&squashed).unwrap(),
        0.0
    ));
    assert!(structurally_equal(
        &net,
        &parse_network(&spaced).unwrap(),
        0.0
    ));
}
