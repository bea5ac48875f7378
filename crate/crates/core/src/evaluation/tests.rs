use super::*;
use crate::corpus::{chunk_corpus, generate_corpus, label_prior, SynthConfig};
use crate::model::ModelConfig;

fn setup(patients: usize) -> (Lahst, Vec<PatientStay>, Vec<LabeledSequence>) {
    let syn = SynthConfig { vocab_size: 150, num_labels: 6, patients, ..SynthConfig::default() };
    let stays = generate_corpus(&syn, 8).unwrap();
    let data = chunk_corpus(&stays, 16).unwrap();
    let cfg = ModelConfig { vocab_size: 150, num_labels: 6, dim: 8, chunk_tokens: 16, ..ModelConfig::default() };
    (Lahst::new(cfg, 4).unwrap(), stays, data)
}

#[test]
fn cutoff_requests_parse() {
    let r = CutoffRequest::parse_list("48, 12.5h,p25,excl-ds,full").unwrap();
    assert_eq!(
        r,
        vec![
            CutoffRequest::Hours(48.0),
            CutoffRequest::Hours(12.5),
            CutoffRequest::Percentile(0.25),
            CutoffRequest::ExcludeDischargeSummary,
            CutoffRequest::FullSequence,
        ]
    );
    for bad in ["-3", "0", "p0", "p100", "soon"] {
        assert!(bad.parse::<CutoffRequest>().is_err(), "{bad}");
    }
}

#[test]
fn percentiles_resolve_against_training_corpus() {
    let (_, stays, _) = setup(10);
    let named = resolve_cutoffs(&CutoffRequest::defaults(), &stays, VolumeWeighting::NoteCount).unwrap();
    let names: Vec<&str> = named.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["p25", "p50", "p75", "excl-ds", "full"]);
    let hours: Vec<f64> = volume_percentile_cutoffs(&stays, &[0.25, 0.5, 0.75], VolumeWeighting::NoteCount).unwrap();
    for (c, h) in named.iter().zip(hours) {
        assert_eq!(c.spec, CutoffSpec::HoursSinceAdmission(h));
    }
}

#[test]
fn full_sequence_row_equals_direct_inference() {
    let (m, stays, data) = setup(8);
    let prior = label_prior(&stays, 6);
    let cfg = InferenceConfig { nmax: 8, ..Default::default() };
    let (scores, _) = scores_at_cutoff(&m, &data, CutoffSpec::FullSequence, cfg, &prior).unwrap();
    for (i, s) in data.iter().enumerate() {
        let direct = eca_infer(&m, &s.seq, cfg).unwrap();
        assert_eq!(scores.row(i), direct.predictions.last_row().unwrap());
    }
    let row = evaluate_cutoff(&m, &data, "full", CutoffSpec::FullSequence, cfg, &prior).unwrap();
    let gold = gold_matrix(&data, 6);
    assert_eq!(row.micro_f1, micro_f1(&scores, &gold, 0.5).unwrap());
    assert_eq!(row.n_patients, 8);
}

#[test]
fn report_has_one_row_per_cutoff_and_renders() {
    let (m, stays, data) = setup(6);
    let prior = label_prior(&stays, 6);
    let cutoffs = resolve_cutoffs(&CutoffRequest::defaults(), &stays, VolumeWeighting::NoteCount).unwrap();
    let cfg = InferenceConfig { nmax: 8, ..Default::default() };
    let report = evaluate_at_cutoffs(&m, &data, &cutoffs, cfg, &prior, InferenceContext::Eca, ReportMetadata::default()).unwrap();
    assert_eq!(report.rows.len(), 5);
    let table = report.to_table();
    assert_eq!(table.lines().count(), 6);
    assert!(table.starts_with("cutoff"));
    let back: MetricsReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    for r in &report.rows {
        for v in [Some(r.micro_f1), Some(r.macro_f1), r.micro_auc, r.macro_auc, r.p_at_5].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn empty_corpus_rejected() {
    let (m, _, _) = setup(1);
    let r = evaluate_cutoff(&m, &[], "full", CutoffSpec::FullSequence, InferenceConfig::default(), &[0.0; 6]);
    assert!(r.is_err());
}

fn uniform_trace(categories: Vec<Category>) -> LabelAttentionTrace {
    let n = categories.len();
    let mut w = Tensor::zeros(&[n, 2, n]);
    for t in 0..n {
        for l in 0..2 {
            for i in 0..=t {
                w.set(&[t, l, i], 1.0 / (t + 1) as f64);
            }
        }
    }
    LabelAttentionTrace { heads: vec![w], categories }
}

#[test]
fn uniform_attention_gives_chunk_share() {
    use Category::*;
    let trace = uniform_trace(vec![Nursing, Nursing, Echo, Nursing, DischargeSummary]);
    let mass = category_mass(&trace);
    assert!((mass[Nursing.index()] - 0.6).abs() < 1e-15);
    assert!((mass[Echo.index()] - 0.2).abs() < 1e-15);
    assert!((mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let single = AttentionSummary::from_masses("full", &[category_mass(&uniform_trace(vec![Radiology; 4]))]);
    assert!((single.mean(Radiology) - 1.0).abs() < 1e-15);
    assert_eq!(single.rows.len(), Category::COUNT);
    let csv = single.to_csv();
    assert!(csv.starts_with("category,mean_weight,std,n\n"));
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn summary_statistics() {
    let mut a = [0.0; Category::COUNT];
    let mut b = [0.0; Category::COUNT];
    a[0] = 0.2;
    b[0] = 0.6;
    let s = AttentionSummary::from_masses("x", &[a, b]);
    assert!((s.rows[0].mean - 0.4).abs() < 1e-15);
    assert!((s.rows[0].std - (0.08f64).sqrt()).abs() < 1e-15);
    assert_eq!(s.rows[0].n, 2);
}

#[test]
fn trained_free_attention_summary_sums_to_one() {
    let (m, stays, data) = setup(5);
    let cutoffs = resolve_cutoffs(&[CutoffRequest::FullSequence], &stays, VolumeWeighting::NoteCount).unwrap();
    let s = attention_summary(&m, &data, &cutoffs[0], InferenceConfig { nmax: 8, ..Default::default() }).unwrap();
    let total: f64 = s.rows.iter().map(|r| r.mean).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(s.rows[0].n, 5);
}

#[test]
fn ablation_grid_shape_and_eca_column() {
    let (m, stays, data) = setup(6);
    let prior = label_prior(&stays, 6);
    let cutoffs = resolve_cutoffs(&[CutoffRequest::Percentile(0.5), CutoffRequest::FullSequence], &stays, VolumeWeighting::NoteCount).unwrap();
    let cfg = InferenceConfig { nmax: 8, ..Default::default() };
    let r = context_strategy_ablation(&m, &data, &cutoffs, &InferenceContext::ALL, cfg, &prior, 1).unwrap();
    assert_eq!(r.micro_f1.len(), 2);
    assert_eq!(r.micro_f1[0].len(), 3);
    let row = evaluate_cutoff(&m, &data, "full", CutoffSpec::FullSequence, cfg, &prior).unwrap();
    assert_eq!(r.get("full", InferenceContext::Eca), Some(row.micro_f1));
    assert_eq!(r.to_table().lines().count(), 3);
    let again = context_strategy_ablation(&m, &data, &cutoffs, &InferenceContext::ALL, cfg, &prior, 1).unwrap();
    assert_eq!(again, r);
}

#[test]
fn context_views() {
    let (_, _, data) = setup(1);
    let s = &data[0].seq;
    assert_eq!(context_view(s, InferenceContext::Eca, 4, 0, 0), *s);
    assert_eq!(context_view(s, InferenceContext::Last, 4, 0, 0), s.last(4));
    let r = context_view(s, InferenceContext::Random, 4, 0, 0);
    assert_eq!(r.len(), 4.min(s.len()));
    assert_eq!(r, context_view(s, InferenceContext::Random, 4, 0, 0));
}
