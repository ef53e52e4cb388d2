//! Replaying a session log rebuilds exactly the live state.

use proptest::prelude::*;
use serde_json::Value;

use patchline_core::orders::{example_dispatch, reference_time};
use patchline_core::report::load_gold;
use patchline_service::store::read_log;
use patchline_service::{ClockMode, Command, Pipeline, Session, Store};

#[derive(Debug, Clone)]
enum Step {
    Line(usize),
    Fire,
    Ack(u64),
    Placard(&'static str),
    Confirm,
}

fn lines() -> Vec<String> {
    let mut out: Vec<String> =
        load_gold(include_str!("../../../fixtures/table3_gold.json")).unwrap().into_iter().map(|g| g.transcript).collect();
    out.push("pulse is 200".into());
    out.push("requesting treatment of additional nitroglycerin".into());
    out
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        4 => (0usize..9).prop_map(Step::Line),
        2 => Just(Step::Fire),
        1 => (1u64..4).prop_map(Step::Ack),
        1 => prop::sample::select(vec!["1203", "1005", "0000", "12x"]).prop_map(Step::Placard),
        1 => Just(Step::Confirm),
    ]
}

fn state(s: &Session) -> (Value, (bool, String), Value, Value) {
    (
        s.summary(),
        s.epcr(),
        serde_json::to_value(&s.timeline).unwrap(),
        serde_json::to_value(&s.feed).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn log_replay_matches_live_state(steps in prop::collection::vec((step(), 0.0f64..120.0), 1..14)) {
        let dir = tempfile::tempdir().unwrap();
        let pipeline = Pipeline::bundled();
        let store = Store::open(pipeline.clone(), ClockMode::Simulated { base: reference_time() }, dir.path().to_path_buf()).unwrap();
        let id = store.create(example_dispatch()).unwrap()["id"].as_str().unwrap().to_string();
        let pool = lines();
        let mut time = 0.0;
        for (step, gap) in steps {
            time += gap.floor();
            let command = match step {
                Step::Line(i) => Command::Transcript { line: pool[i].clone(), time },
                Step::Fire => Command::FireReminders { now: time },
                Step::Ack(reminder_id) => Command::Acknowledge { reminder_id, time },
                Step::Placard(number) => Command::Placard { number: number.into(), time },
                Step::Confirm => {
                    let form = store.get(&id).unwrap().read(|s| s.form.clone());
                    Command::Confirm { form, time }
                }
            };
            let events = |store: &Store| store.get(&id).unwrap().read(|s| s.timeline.len());
            let before = events(&store);
            // rejected commands must leave no trace
            let ok = store.execute(&id, command).is_ok();
            let added = events(&store) - before;
            prop_assert!(added <= 1, "{added} events from one command");
            prop_assert!(ok || added == 0);
        }

        let live = store.get(&id).unwrap().read(state);
        let entries = read_log(&dir.path().join(format!("{id}.ndjson"))).unwrap();
        prop_assert_eq!(entries.len(), store.get(&id).unwrap().read(|s| s.log.len()));
        for (i, e) in entries.iter().enumerate() {
            prop_assert_eq!(e.seq, i as u64);
        }
        let replayed = Session::replay(&pipeline, &entries).unwrap();
        prop_assert_eq!(&live, &state(&replayed));

        let times: Vec<f64> = replayed.timeline.events().iter().map(|e| e.time).collect();
        prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        let seqs: Vec<u64> = replayed.feed.iter().map(|e| e.seq).collect();
        prop_assert_eq!(seqs, (1..=replayed.feed.len() as u64).collect::<Vec<_>>());
    }
}
