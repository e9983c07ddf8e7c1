use listening_core::control::{ControlCause, Empty, ExpressionPayload};
use listening_core::dialogue::Polarity;
use listening_core::protocol::{
    ControlChangeBody, ErrorBody, ErrorCode, OperatorUtteranceBody, ReasonBody, ResponseBody,
    SessionStartBody, SilenceUpdateBody, TakeoverPromptBody, UserUtteranceBody, WireBody,
    WireMessage,
};
use listening_core::{Annotation, ControlMode, Expression, ResponseKind, TakeoverCondition};
use proptest::prelude::*;
use proptest::sample::select;

fn text() -> impl Strategy<Value = String> {
    prop_oneof!["[a-zA-Z ,.?!]{0,24}", "\\PC{0,12}"]
}

fn expression() -> impl Strategy<Value = Option<Expression>> {
    proptest::option::of(select(Expression::ALL.to_vec()))
}

fn mode() -> impl Strategy<Value = ControlMode> {
    select(vec![ControlMode::AgentControl, ControlMode::OperatorControl])
}

fn annotation() -> impl Strategy<Value = Annotation> {
    prop_oneof![
        (text(), 0.0..=1.0f64, proptest::option::of("[a-z]{1,8}")).prop_map(
            |(value, confidence, category)| Annotation::FocusWord { value, confidence, category }
        ),
        (any::<bool>(), 0.0..=1.0f64).prop_map(|(p, confidence)| Annotation::Sentiment {
            value: if p { Polarity::Positive } else { Polarity::Negative },
            confidence,
        }),
    ]
}

fn response() -> impl Strategy<Value = ResponseBody> {
    (
        select(vec![
            ResponseKind::Assessment,
            ResponseKind::ElaboratingQuestion,
            ResponseKind::RepeatedResponse,
            ResponseKind::Formulaic,
            ResponseKind::BackchannelFormal,
            ResponseKind::BackchannelReactive,
            ResponseKind::SilencePrompt,
            ResponseKind::OperatorSpeech,
        ]),
        text(),
        any::<bool>(),
        expression(),
        proptest::option::of(any::<u64>()),
    )
        .prop_map(|(kind, text, has_sentiment, expression, speech_ms)| ResponseBody {
            kind,
            text,
            has_sentiment,
            expression,
            speech_ms,
        })
}

fn body() -> impl Strategy<Value = WireBody> {
    prop_oneof![
        (text(), proptest::collection::vec(annotation(), 0..3), proptest::option::of(any::<u64>()))
            .prop_map(|(text, annotations, start_ms)| WireBody::UserUtterance(UserUtteranceBody {
                text,
                annotations,
                start_ms,
            })),
        Just(WireBody::EndOfTurn(Empty {})),
        response().prop_map(WireBody::AgentResponse),
        response().prop_map(WireBody::Backchannel),
        (any::<u64>(), any::<u64>()).prop_map(|(silence_ms, threshold_ms)| {
            WireBody::SilenceUpdate(SilenceUpdateBody { silence_ms, threshold_ms })
        }),
        proptest::collection::vec((select(TakeoverCondition::ALL.to_vec()), text()), 1..3).prop_map(
            |rs| WireBody::TakeoverPrompt(TakeoverPromptBody {
                reasons: rs.into_iter().map(|(code, text)| ReasonBody { code, text }).collect(),
            })
        ),
        (
            proptest::option::of(mode()),
            proptest::option::of(select(vec![ControlCause::Toggle, ControlCause::OperatorTimeout])),
        )
            .prop_map(|(target, cause)| WireBody::ControlChange(ControlChangeBody { target, cause })),
        (text(), expression(), proptest::option::of(any::<u64>()), proptest::option::of(text()))
            .prop_map(|(text, expression, speech_ms, audio_ref)| {
                WireBody::OperatorUtterance(OperatorUtteranceBody { text, expression, speech_ms, audio_ref })
            }),
        select(Expression::ALL.to_vec())
            .prop_map(|expression| WireBody::Expression(ExpressionPayload { expression })),
        (mode(), any::<u64>(), any::<u64>()).prop_map(|(mode, threshold_ms, tick_period_ms)| {
            WireBody::SessionStart(SessionStartBody { mode, threshold_ms, tick_period_ms })
        }),
        Just(WireBody::SessionEnd(Empty {})),
        (
            select(vec![
                ErrorCode::InvalidMessage,
                ErrorCode::NotInControl,
                ErrorCode::NoSuchSession,
                ErrorCode::Unauthorized,
                ErrorCode::MalformedInput,
                ErrorCode::SessionClosed,
            ]),
            text(),
        )
            .prop_map(|(code, message)| WireBody::Error(ErrorBody { code, message })),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1024, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn messages_survive_the_wire(id in "[A-Za-z0-9_-]{1,16}", t in any::<u64>(), body in body()) {
        let m = WireMessage::new(id, t, body);
        let text = m.to_text();
        let back = WireMessage::parse(&text).unwrap();
        prop_assert_eq!(&back, &m);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(v["type"].as_str(), Some(m.body.type_name()));
    }
}
