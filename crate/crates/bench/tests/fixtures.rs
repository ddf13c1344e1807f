use wayside_bench::{dataset, model, recordings, small_vae, windows};

#[test]
fn fixtures_are_consistent() {
    let recs = recordings(12);
    let w = windows(&recs);
    assert_eq!(w.len(), recs.len());
    assert_eq!(small_vae(&w).encode_batch(&w).unwrap().len(), 12);
    let ds = dataset(&recs);
    assert_eq!(ds.len(), 12);
    assert_eq!(model(&ds).predict_matrix(&ds.matrix()).unwrap().len(), 12);
}
