use foodai_core::analytics::{feedback_accuracy, usage_histogram, Window};
use foodai_core::api::{build_response, ClassifyResponse, FeedbackRecord, QueryRecord, ScoredName};
use foodai_core::corpus::{standard_spec, CorpusStore, Shape, SyntheticClass, SyntheticCorpusSpec};
use foodai_core::evaluation::{topk_accuracy, EvalReport};
use foodai_core::fams::{Actor, EventKind, FamsStore, Role, SyntheticProvider, TaskStatus};
use foodai_core::taxonomy::NON_FOOD_ID;
use chrono::FixedOffset;
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class_{i:02}")).collect()
}

fn score_rows() -> impl Strategy<Value = (usize, Vec<Vec<f64>>, Vec<usize>)> {
    (2usize..12).prop_flat_map(|c| {
        let row = proptest::collection::vec(0u8..6, c).prop_map(|r| r.into_iter().map(f64::from).collect());
        (
            Just(c),
            proptest::collection::vec((row, 0..c), 1..80)
                .prop_map(|pairs| pairs.into_iter().unzip::<Vec<f64>, usize, Vec<_>, Vec<_>>()),
        )
            .prop_map(|(c, (rows, labels))| (c, rows, labels))
    })
}

proptest! {
    #[test]
    fn topk_is_monotone_and_bounded((c, rows, labels) in score_rows()) {
        let mut last = 0.0;
        for k in 1..=c {
            let acc = topk_accuracy(&rows, &labels, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            prop_assert!(acc >= last);
            last = acc;
        }
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn recall_matches_confusion_rows((c, rows, labels) in score_rows()) {
        let report = EvalReport::from_scores(&names(c), &rows, &labels, None, "x").unwrap();
        prop_assert!(report.top1 <= report.top5);
        for (class, row) in &report.confusion {
            let total: usize = row.values().sum();
            prop_assert_eq!(total, labels.iter().filter(|&&l| names(c)[l] == *class).count());
            let diag = row.get(class).copied().unwrap_or(0);
            prop_assert_eq!(report.per_class_recall[class], diag as f64 / total as f64);
        }
        for class in report.per_class_recall.keys() {
            if let Some((wrong, _)) = report.most_common_error(class) {
                prop_assert_ne!(wrong, class.as_str());
            }
        }
    }

    #[test]
    fn categories_sum_their_members(raw in proptest::collection::vec(0.0f64..1.0, 12), merge in any::<bool>()) {
        let mut taxonomy = standard_spec(1).taxonomy().unwrap();
        let labels = taxonomy.label_space();
        if merge {
            taxonomy.merge_visual_foods("mee_rebus", "mee_kuah", "mee rebus or kuah").unwrap();
        }
        let total: f64 = raw.iter().sum::<f64>() + 1e-9;
        let probs: Vec<f64> = raw.iter().map(|p| (p + 1e-9 / 12.0) / total).collect();
        let resp = build_response(&labels, &probs, &taxonomy, "q".into(), 0.0);

        let mut expected: BTreeMap<String, f64> = BTreeMap::new();
        let mut food_mass = 0.0;
        for (label, p) in labels.iter().zip(&probs) {
            let current = taxonomy.resolve_label(label).unwrap();
            if current == NON_FOOD_ID {
                continue;
            }
            food_mass += p;
            let vf = taxonomy.visual_food(&current).unwrap();
            let n = vf.member_item_ids.len() as f64;
            for item in &vf.member_item_ids {
                *expected.entry(taxonomy.food_item(item).unwrap().super_category_id.clone()).or_default() += p / n;
            }
        }
        prop_assert_eq!(resp.food_results_by_category.len(), expected.len());
        for s in &resp.food_results_by_category {
            prop_assert!((s.score - expected[&s.name]).abs() < 1e-12);
        }
        let cat_sum: f64 = resp.food_results_by_category.iter().map(|s| s.score).sum();
        prop_assert!((cat_sum - food_mass).abs() < 1e-9);
        for list in [&resp.food_result, &resp.food_results_by_category] {
            prop_assert!(list.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }
}

fn query(qid: usize, ts: i64, ranked: &[String]) -> QueryRecord {
    QueryRecord {
        qid: format!("q{qid}"),
        timestamp: ts,
        api_key: "k".into(),
        image_ref: String::new(),
        response: ClassifyResponse {
            food_result: ranked
                .iter()
                .map(|n| ScoredName {
                    name: n.clone(),
                    score: 0.1,
                })
                .collect(),
            food_results_by_category: vec![],
            non_food: false,
            qid: format!("q{qid}"),
            status_code: 200,
            status_msg: "OK".into(),
            time_cost: 0.0,
        },
    }
}

proptest! {
    #[test]
    fn production_accuracy_is_bounded_and_stable(
        queries in proptest::collection::vec((0i64..200_000, proptest::collection::vec(0usize..8, 0..8)), 1..40),
        feedback in proptest::collection::vec((0usize..50, 0usize..9, 0i64..200_000), 0..60),
        start in 0i64..100_000,
    ) {
        let labels = names(8);
        let qs: Vec<QueryRecord> = queries
            .iter()
            .enumerate()
            .map(|(i, (ts, ranked))| query(i, *ts, &ranked.iter().map(|&r| labels[r].clone()).collect::<Vec<_>>()))
            .collect();
        let fb: Vec<FeedbackRecord> = feedback
            .iter()
            .map(|&(q, l, ts)| FeedbackRecord {
                qid: format!("q{q}"),
                chosen_label: labels.get(l).cloned().unwrap_or_else(|| "other".into()),
                challenge_tag: None,
                timestamp: ts,
            })
            .collect();
        let window = Window { start: Some(start), end: None };
        let acc = feedback_accuracy(&qs, &fb, &window);
        if acc.feedback_count > 0 {
            let (t1, t5) = (acc.top1.unwrap(), acc.top5.unwrap());
            prop_assert!(0.0 <= t1 && t1 <= t5 && t5 <= 1.0);
        } else {
            prop_assert!(acc.top1.is_none() && acc.top5.is_none());
        }
        prop_assert_eq!(&acc, &feedback_accuracy(&qs, &fb, &window));

        let hist = usage_histogram(&qs, &window, FixedOffset::east_opt(8 * 3600).unwrap());
        let in_window = qs.iter().filter(|q| q.timestamp >= start).count() as u64;
        prop_assert_eq!(hist.buckets.iter().sum::<u64>(), in_window);
        prop_assert_eq!(hist.total, in_window);
    }
}

fn small_spec() -> SyntheticCorpusSpec {
    SyntheticCorpusSpec {
        classes: vec![SyntheticClass {
            id: "laksa".into(),
            super_category: "noodles".into(),
            count: 2,
            shape: Shape::Stripes,
            base_hue: 10.0,
            hue_jitter: 4.0,
        }],
        confusable_pairs: vec![],
        non_food_count: 2,
        image_size: 8,
        seed: 1,
    }
}

/// Reference model of one task: status and assignee.
#[derive(Debug, Clone, Default)]
struct Model {
    tasks: Vec<(TaskStatus, Option<String>, usize)>,
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fams_follows_the_workflow(ops in proptest::collection::vec((0usize..4, 0usize..6, 0usize..3, any::<bool>()), 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let corpus = CorpusStore::open(dir.path().join("corpus"), 8).unwrap();
        corpus.generate_synthetic(&spec).unwrap();
        let labels: BTreeSet<String> = spec.taxonomy().unwrap().label_space().into_iter().collect();
        let provider = SyntheticProvider { seed: 2, available: 3, image_size: 8 };
        let mut store = FamsStore::open(dir.path().join("fams")).unwrap();
        let actors = [Actor::manager("m1"), Actor::manager("m2"), Actor::annotator("a1"), Actor::annotator("a2")];
        let mut model = Model::default();
        let mut corpus_total = corpus.load_version(1).unwrap().total();

        for (who, op, t, flag) in ops {
            let actor = &actors[who];
            let id = format!("t{:05}", t + 1);
            let manager = actor.role == Role::Manager;
            let slot = model.tasks.get(t).cloned();
            let status = slot.as_ref().map(|s| s.0);
            let is_assignee = slot.as_ref().and_then(|s| s.1.as_deref()) == Some(actor.id.as_str());
            let events_before = store.events().len();
            let ok = match op {
                0 => {
                    let ok = store.create_task(actor, &["laksa".into()], 2, "laksa", &labels).is_ok();
                    prop_assert_eq!(ok, manager);
                    if ok {
                        model.tasks.push((TaskStatus::Draft, None, 0));
                    }
                    ok
                }
                1 => {
                    let ok = store.fetch_candidates(&id, actor, &provider, None).is_ok();
                    prop_assert_eq!(ok, manager && matches!(status, Some(TaskStatus::Draft | TaskStatus::Assigned)));
                    if ok {
                        model.tasks[t].2 = 2;
                    }
                    ok
                }
                2 => {
                    let target = if flag { "a1" } else { "a2" };
                    let ok = store.assign(&id, actor, target, None).is_ok();
                    prop_assert_eq!(ok, manager && status == Some(TaskStatus::Draft));
                    if ok {
                        model.tasks[t].0 = TaskStatus::Assigned;
                        model.tasks[t].1 = Some(target.to_string());
                    }
                    ok
                }
                3 => {
                    let change: BTreeMap<String, bool> = [("c0001".to_string(), flag)].into();
                    let ok = store.annotate(&id, actor, &change, None).is_ok();
                    let has_c1 = slot.as_ref().is_some_and(|s| s.2 > 0);
                    prop_assert_eq!(ok, is_assignee && status == Some(TaskStatus::Assigned) && has_c1);
                    ok
                }
                4 => {
                    let ok = store.submit(&id, actor, None).is_ok();
                    prop_assert_eq!(ok, is_assignee && status == Some(TaskStatus::Assigned));
                    if ok {
                        model.tasks[t].0 = TaskStatus::Submitted;
                    }
                    ok
                }
                _ => {
                    let selected = store.task(&id).map(|x| x.selected_count()).unwrap_or(0);
                    let ok = store.confirm(&id, actor, &provider, &corpus, &labels, None).is_ok();
                    prop_assert_eq!(ok, manager && status == Some(TaskStatus::Submitted));
                    if ok {
                        model.tasks[t].0 = TaskStatus::Confirmed;
                        let total = corpus.load_version(corpus.latest().unwrap().unwrap()).unwrap().total();
                        prop_assert_eq!(total, corpus_total + selected);
                        corpus_total = total;
                    }
                    ok
                }
            };
            if !ok {
                prop_assert_eq!(store.events().len(), events_before);
            }
            for (i, (status, assignee, _)) in model.tasks.iter().enumerate() {
                let task = store.task(&format!("t{:05}", i + 1)).unwrap();
                prop_assert_eq!(task.status, *status);
                prop_assert_eq!(&task.assignee, assignee);
            }
        }

        // every recorded transition carries the role it requires
        for ev in store.events() {
            let required = match ev.event {
                EventKind::SelectionsUpdated { .. } | EventKind::Submitted { .. } => Role::Annotator,
                _ => Role::Manager,
            };
            prop_assert_eq!(ev.actor.role, required);
        }
        // the log replays to the same tasks
        let replayed = FamsStore::open(dir.path().join("fams")).unwrap();
        prop_assert_eq!(replayed.tasks().collect::<Vec<_>>(), store.tasks().collect::<Vec<_>>());
    }
}
