use igdbn_web::{figure, test_session, train_session};

#[test]
fn train_then_test_longer_blockage() {
    let (mut s, info) = train_session(7, -1.9).unwrap();
    assert_eq!(info.tracks, 2);
    assert!(info.models.iter().any(|m| m.dummy && m.model_id >= 1000));
    assert!(!info.gaps.is_empty());

    // no extra dropout: the trained blockage
    let same = test_session(&mut s, 1, 0).unwrap();
    assert_eq!(same.steps.len(), same.summary.total_frames);
    let gap: Vec<_> = same.steps.iter().filter(|st| st.t > 1.75 && st.t < 2.25).collect();
    assert!(gap.iter().filter(|st| st.anomaly).count() <= 1);

    // hidden on frames 23..=27 as well: unseen blockage words
    let longer = test_session(&mut s, 23, 27).unwrap();
    assert!(longer.summary.anomaly_count > same.summary.anomaly_count);
    assert!(longer.summary.unknown_word_frames > 0);

    let timeline = figure(&s, "timeline", 0).unwrap();
    assert_eq!(timeline.matches(r#"class="step""#).count(), longer.steps.len());
    assert!(figure(&s, "tm", 1000).unwrap().contains(r#"class="cell""#));
    assert!(figure(&s, "clusters", 999).is_err());
    assert!(figure(&s, "bars", 1).is_err());
}
