use std::rc::Rc;

use opfuse::autodiff::Tape;
use opfuse::dataset::{parse_corpus, Corpus, Emotion, Intensity, LabelMap, OpinionAnnotation, Polarity, Record, Span, Split};
use opfuse::eval::{
    aggregate, f1_report, mcnemar, report_predictions, stuart_maxwell_table, ExclusionPolicy, Paired, Prediction,
};
use opfuse::model::{argmax, fuse_gate};
use opfuse::tensor::Tensor;
use proptest::prelude::*;

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-30.0..30.0f64, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn emotion() -> impl Strategy<Value = Emotion> {
    (0..12usize).prop_map(|i| Emotion::from_index(i).unwrap())
}

fn span_in(len: usize) -> impl Strategy<Value = Option<Span>> {
    prop::option::of((0..len, 1..=len).prop_filter_map("non-empty", move |(a, b)| {
        (a < b).then(|| Span::new(a, b))
    }))
}

fn record(i: usize) -> impl Strategy<Value = Record> {
    let words = prop::collection::vec("[a-zé$]{1,6}", 1..8);
    (words, emotion(), 0..3usize).prop_flat_map(move |(words, emotion, split)| {
        let text = words.join(" ");
        let len = text.chars().count();
        let opinion = (span_in(len), span_in(len), span_in(len), 0..3usize).prop_map(move |(s, h, t, p)| OpinionAnnotation {
            // an opinion needs at least one span
            sentiment_expression: s.or((h.is_none() && t.is_none()).then(|| Span::new(0, len))),
            holder: h,
            target: t,
            aspect_term: None,
            qualifier: None,
            polarity: Polarity::ALL[p],
            intensity: Intensity::Average,
            aspect_category: Some("price".into()),
            target_entity: None,
        });
        prop::collection::vec(opinion, 0..3).prop_map(move |opinions| Record {
            id: format!("r{i}"),
            split: Split::ALL[split],
            text: text.clone(),
            emotion,
            opinions,
        })
    })
}

fn pairs() -> impl Strategy<Value = Vec<(Emotion, Emotion, Emotion)>> {
    prop::collection::vec((emotion(), emotion(), emotion()), 1..80)
}

fn preds(v: &[(Emotion, Emotion, Emotion)]) -> (Vec<Prediction>, Vec<Paired>) {
    let p = v
        .iter()
        .enumerate()
        .map(|(i, &(gold, pred, _))| Prediction {
            id: format!("{i}"),
            gold,
            pred,
            logits: vec![],
        })
        .collect();
    let paired = v
        .iter()
        .enumerate()
        .map(|(i, &(gold, a, b))| Paired {
            id: format!("{i}"),
            gold,
            a,
            b,
        })
        .collect();
    (p, paired)
}

fn table(paired: &[Paired], perm: &[usize]) -> Vec<Vec<u64>> {
    let mut t = vec![vec![0u64; 12]; 12];
    for p in paired {
        t[perm[p.a.index()]][perm[p.b.index()]] += 1;
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(x in tensor(3, 7)) {
        let tape = Tape::new();
        let s = tape.constant(x).softmax().unwrap().value();
        for r in 0..3 {
            let sum: f64 = s.row_slice(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.row_slice(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn masked_softmax_zero_outside_mask(x in tensor(3, 3), bits in prop::collection::vec(any::<bool>(), 9)) {
        let mut mask = bits;
        for i in 0..3 { mask[i * 3 + i] = true; }
        let mask: Rc<[bool]> = mask.into();
        let tape = Tape::new();
        let s = tape.constant(x).masked_softmax(mask.clone()).unwrap().value();
        for i in 0..3 {
            let sum: f64 = s.row_slice(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for j in 0..3 {
                if !mask[i * 3 + j] { prop_assert_eq!(s.get2(i, j), 0.0); }
            }
        }
    }

    #[test]
    fn corpus_round_trip(records in (1..6usize).prop_flat_map(|n| (0..n).map(record).collect::<Vec<_>>())) {
        let corpus = Corpus::new(records);
        let mut bytes = Vec::new();
        corpus.write_jsonl(&mut bytes).unwrap();
        let (back, diags) = parse_corpus(std::str::from_utf8(&bytes).unwrap());
        prop_assert!(diags.is_empty(), "{:?}", diags);
        prop_assert_eq!(back, corpus.records);
    }

    #[test]
    fn splits_partition_the_corpus(records in (1..12usize).prop_flat_map(|n| (0..n).map(record).collect::<Vec<_>>())) {
        let corpus = Corpus::new(records);
        let sizes = corpus.split_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), corpus.len());
        let mut ids: Vec<&str> = Split::ALL.iter().flat_map(|&s| corpus.split(s)).map(|r| r.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), corpus.len());
    }

    #[test]
    fn aggregation_respects_groups(v in pairs(), map in prop::sample::select(vec!["ekman6", "valence3"])) {
        let map = LabelMap::builtin(map).unwrap();
        let (p, _) = preds(&v);
        let agg = aggregate(&p, &map, ExclusionPolicy::Holdout).unwrap();
        prop_assert_eq!(agg.report.n as usize, p.len());
        // every prediction lands in exactly one cell, grouped consistently
        for label in Emotion::ALL {
            prop_assert!(map.group(label).is_some() != map.is_excluded(label));
        }
        let in_group_hits = p.iter().filter(|x| map.group(x.gold) == map.group(x.pred)).count();
        let diag: u64 = (0..agg.report.confusion.labels.len()).map(|i| agg.report.confusion.counts[i][i]).sum();
        prop_assert_eq!(diag as usize, in_group_hits);
    }

    #[test]
    fn confusion_marginals(v in pairs()) {
        let (p, _) = preds(&v);
        let r = report_predictions(&p).unwrap();
        let rows = r.confusion.row_sums();
        let cols = r.confusion.col_sums();
        for e in Emotion::ALL {
            prop_assert_eq!(rows[e.index()] as usize, p.iter().filter(|x| x.gold == e).count());
            prop_assert_eq!(cols[e.index()] as usize, p.iter().filter(|x| x.pred == e).count());
        }
        prop_assert_eq!(r.confusion.total() as usize, p.len());
        for c in &r.classes {
            prop_assert!((0.0..=100.0).contains(&c.f1));
        }
        prop_assert!((0.0..=100.0).contains(&r.macro_f1));
    }

    #[test]
    fn f1_ignores_label_names(v in pairs()) {
        let names: Vec<String> = (0..12).map(|i| format!("c{i}")).collect();
        let gold: Vec<usize> = v.iter().map(|x| x.0.index()).collect();
        let pred: Vec<usize> = v.iter().map(|x| x.1.index()).collect();
        let (p, _) = preds(&v);
        let a = f1_report(&names, &gold, &pred).unwrap();
        let b = report_predictions(&p).unwrap();
        prop_assert_eq!(a.macro_f1.to_bits(), b.macro_f1.to_bits());
    }

    #[test]
    fn mcnemar_antisymmetric(v in pairs()) {
        let (_, paired) = preds(&v);
        let swapped: Vec<Paired> = paired.iter().map(|p| Paired { a: p.b, b: p.a, ..p.clone() }).collect();
        let m = mcnemar(&paired).unwrap();
        let s = mcnemar(&swapped).unwrap();
        prop_assert_eq!((m.b, m.c), (s.c, s.b));
        prop_assert_eq!(m.statistic, s.statistic);
        prop_assert_eq!(m.exact_p_value, s.exact_p_value);
        for p in [m.p_value, m.corrected_p_value, Some(m.exact_p_value)].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn stuart_maxwell_permutation_invariant(v in pairs(), perm in Just((0..12usize).collect::<Vec<_>>()).prop_shuffle()) {
        let (_, paired) = preds(&v);
        let id: Vec<usize> = (0..12).collect();
        let a = stuart_maxwell_table(&table(&paired, &id)).unwrap();
        let b = stuart_maxwell_table(&table(&paired, &perm)).unwrap();
        prop_assert_eq!(a.df, b.df);
        prop_assert!((a.statistic - b.statistic).abs() <= 1e-8 * (1.0 + a.statistic.abs()));
        prop_assert!((0.0..=1.0).contains(&a.p_value));
    }

    #[test]
    fn argmax_shift_invariant(z in prop::collection::vec(-50.0..50.0f64, 12), c in -100.0..100.0f64) {
        let a = Tensor::row(&z);
        // a constant shift can round a near-tie either way, so only compare clear winners
        let mut sorted = z.clone();
        sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
        prop_assume!(sorted[0] - sorted[1] > 1e-9);
        let b = a.map(|v| v + c);
        prop_assert_eq!(argmax(a.data()), argmax(b.data()));
    }

    #[test]
    fn gate_in_unit_interval(x in tensor(1, 4), y in tensor(1, 4), w in tensor(8, 4), bias in tensor(1, 4)) {
        let tape = Tape::new();
        let w = tape.constant(w.map(|v| v / 10.0));
        let (fused, g) = fuse_gate(tape.constant(x.clone()), tape.constant(y.clone()), w, tape.constant(bias)).unwrap();
        let (g, fused) = (g.value(), fused.value());
        for i in 0..4 {
            let gi = g.data()[i];
            prop_assert!((0.0..=1.0).contains(&gi));
            let (lo, hi) = (x.data()[i].min(y.data()[i]), x.data()[i].max(y.data()[i]));
            prop_assert!(fused.data()[i] >= lo - 1e-12 && fused.data()[i] <= hi + 1e-12);
        }
    }
}
