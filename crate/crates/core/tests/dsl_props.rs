use clova_core::dsl::{parse_program, pretty_print, Assignment, ProgramAst, Value};
use proptest::prelude::*;

fn ident() -> impl Strategy<Value = String> {
    "[A-Z][A-Z0-9_]{0,6}".prop_filter("not a keyword", |s| s != "RESULT")
}

fn value(strings: &'static str) -> impl Strategy<Value = Value> {
    prop_oneof![
        ident().prop_map(Value::Var),
        strings.prop_map(Value::Str),
        (-1000i32..1000, 0u8..4).prop_map(|(n, d)| Value::Num(n as f64 / 10f64.powi(d as i32))),
        any::<bool>().prop_map(Value::Bool),
    ]
}

fn program(strings: &'static str) -> impl Strategy<Value = ProgramAst> {
    let step = (ident(), "[A-Z]{2,8}", proptest::collection::btree_map("[a-z]{1,6}", value(strings), 0..4)).prop_map(
        |(target, tool, args)| Assignment {
            target,
            tool,
            args: args.into_iter().collect(),
        },
    );
    proptest::collection::vec(step, 1..6).prop_map(|mut steps| {
        for (i, s) in steps.iter_mut().enumerate() {
            s.target = format!("{}{i}", s.target);
        }
        ProgramAst { steps }
    })
}

proptest! {
    #[test]
    fn pretty_print_round_trips(ast in program("[a-z ,']{0,12}")) {
        let text = pretty_print(&ast);
        let back = parse_program(&text).unwrap();
        prop_assert_eq!(&back, &ast);
        prop_assert_eq!(pretty_print(&back), text);
    }

    #[test]
    fn canonical_form_ignores_spacing(ast in program("[a-z ']{0,12}")) {
        let spaced = pretty_print(&ast).replace(',', " , ").replace('=', " = ").replace('\n', "\r\n");
        let back = parse_program(&spaced).unwrap();
        prop_assert_eq!(pretty_print(&back), pretty_print(&ast));
    }
}
