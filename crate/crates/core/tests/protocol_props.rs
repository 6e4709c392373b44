use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revise_core::protocol::{parse_lenient, parse_with, serialize_in, ParseOptions, SummaryMode};
use revise_core::{
    format_is_valid, parse_response, serialize_response, Action, AgentResponse, AnswerSet,
    SummaryState,
};

fn field() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.:;'>?!()=éß/_-]{0,40}".prop_map(|s| s.trim().to_string())
}

fn summary() -> impl Strategy<Value = SummaryState> {
    (field(), field(), field(), field(), field()).prop_map(|(p, o, h, u, r)| SummaryState {
        previously_seen: p,
        observations: o,
        hypotheses: h,
        uncertainties: u,
        reasons: r,
    })
}

fn options() -> impl Strategy<Value = AnswerSet> {
    prop::collection::vec("[a-z]{3,8}", 2..7).prop_map(|words| {
        AnswerSet::from_texts(words.iter().enumerate().map(|(i, w)| format!("{w} {i}")))
    })
}

fn response() -> impl Strategy<Value = (AnswerSet, AgentResponse)> {
    let request = prop::collection::btree_set(0usize..200_000, 1..12)
        .prop_map(|s| s.into_iter().collect::<Vec<_>>())
        .prop_shuffle()
        .prop_map(Action::FrameRequest);
    (options(), summary(), any::<bool>(), request, any::<prop::sample::Index>(), any::<u8>())
        .prop_map(|(opts, summary, ask, request, pick, style)| {
            let action = if ask {
                request
            } else {
                let o = opts.get(pick.index(opts.len())).unwrap();
                let free_text = match style % 3 {
                    0 => o.label.clone(),
                    1 => o.label.to_lowercase(),
                    _ => o.text.to_uppercase(),
                };
                Action::FinalAnswer {
                    label: o.label.clone(),
                    free_text,
                }
            };
            (opts, AgentResponse { summary, action })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn serialize_then_parse_is_identity((opts, r) in response()) {
        prop_assert!(r.is_valid(&opts));
        let text = serialize_response(&r);
        prop_assert_eq!(parse_response(&text, &opts).unwrap(), r.clone());
        prop_assert!(format_is_valid(&text, &opts));
        prop_assert_eq!(serialize_response(&parse_response(&text, &opts).unwrap()), text);
    }

    #[test]
    fn free_text_layout_round_trips((opts, r) in response()) {
        let r = AgentResponse {
            summary: SummaryState::free_text(&r.summary.observations),
            action: r.action,
        };
        let mode = ParseOptions { mode: SummaryMode::FreeText, lenient: false };
        let text = serialize_in(&r, SummaryMode::FreeText);
        prop_assert_eq!(parse_with(&text, &opts, mode).unwrap(), r);
    }

    #[test]
    fn lenient_accepts_everything_strict_accepts((opts, r) in response()) {
        let text = serialize_response(&r);
        prop_assert_eq!(parse_lenient(&text, &opts).unwrap(), r);
    }
}

const FRAGMENTS: &[&str] = &[
    "<summary>", "</summary>", "<frames>", "</frames>", "<answer>", "</answer>", "\n", "P:", "O:",
    "H:", "U:", "R:", ",", " ", "<", ">", "/", "A", "0", "99999999999999999999999", "-1", "\r\n",
    "<SUMMARY>", "é", "\u{0}",
];

fn random_bytes(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..300);
    let bytes: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

fn random_fragments(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..40);
    (0..n).map(|_| FRAGMENTS[rng.gen_range(0..FRAGMENTS.len())]).collect()
}

fn mutated_canonical(rng: &mut ChaCha8Rng) -> String {
    let r = if rng.gen_bool(0.5) {
        AgentResponse::request(
            SummaryState::new("frames 0,4,8", "red marker", "answer A", "middle", "check 5"),
            vec![5, 6, 7],
        )
    } else {
        AgentResponse::answer(SummaryState::new("a", "b", "c", "d", "e"), "C")
    };
    let mut bytes = serialize_response(&r).into_bytes();
    for _ in 0..rng.gen_range(1..6) {
        match rng.gen_range(0..4) {
            0 if !bytes.is_empty() => {
                let i = rng.gen_range(0..bytes.len());
                bytes[i] = rng.gen();
            }
            1 if !bytes.is_empty() => {
                let i = rng.gen_range(0..bytes.len());
                bytes.remove(i);
            }
            2 => {
                let i = rng.gen_range(0..=bytes.len());
                let frag = FRAGMENTS[rng.gen_range(0..FRAGMENTS.len())].as_bytes();
                bytes.splice(i..i, frag.iter().copied());
            }
            _ => {
                let i = rng.gen_range(0..=bytes.len());
                bytes.truncate(i);
            }
        }
    }
    String::from_utf8_lossy(&bytes).into_owned()
}

fn check_total(raw: &str, opts: &AnswerSet) {
    let strict = parse_response(raw, opts);
    let _ = parse_lenient(raw, opts);
    if format_is_valid(raw, opts) {
        assert!(strict.is_ok(), "valid format must parse: {raw:?}");
    }
    if let Err(e) = &strict {
        assert!(e.span.start <= e.span.end && e.span.end <= raw.len(), "{e:?}");
    }
}

#[test]
fn ten_thousand_fuzzed_inputs_never_crash() {
    let start = Instant::now();
    let opts = AnswerSet::from_texts(["red", "green", "blue", "yellow"]);
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    for i in 0..10_000 {
        let raw = match i % 3 {
            0 => random_bytes(&mut rng),
            1 => random_fragments(&mut rng),
            _ => mutated_canonical(&mut rng),
        };
        check_total(&raw, &opts);
    }
    assert!(start.elapsed().as_secs_f64() < 10.0, "{:?}", start.elapsed());
}

#[test]
fn one_mebibyte_input_terminates() {
    let opts = AnswerSet::from_texts(["x", "y"]);
    let mut big = String::from("<summary>\nP: ");
    big.push_str(&"<frames>".repeat((1 << 20) / 8));
    check_total(&big, &opts);
    let nested = "<summary>".repeat((1 << 20) / 9);
    check_total(&nested, &opts);
}
