use idealbn::cpd::{family_dim, CpdKind};
use idealbn::io::{hidden_child_purity, make_synthetic_suite, SuiteKind};
use idealbn::search::SearchConfig;
use idealbn::sem::{mean_field_e_step, structural_em, variational_objective, PosteriorMoments, SemConfig};

#[test]
fn scratch_restarts() {
    for data_seed in [2u64, 4] {
        let suite = make_synthetic_suite(SuiteKind::TwoLayer, 30, 3, &[500], data_seed).unwrap();
        for attempt in 0..3u64 {
            let mut search = SearchConfig::ideal(CpdKind::LinearGaussian, 2);
            search.seed = data_seed + 1000 * attempt;
            let config = SemConfig::two_layer(search, 6);
            let (learned, _) = structural_em(&suite.train[0].1, &config).unwrap();
            let q0 = PosteriorMoments::init(&learned, &suite.train[0].1).unwrap();
            let (q, _) = mean_field_e_step(&learned, &suite.train[0].1, &q0).unwrap();
            let m = suite.train[0].1.n_instances() as f64;
            let dim: usize = (0..learned.n_nodes())
                .map(|i| family_dim(learned.node(i).kind, learned.parents(i).len()))
                .sum();
            let f = variational_objective(&learned, &suite.train[0].1, &q) - m.ln() / 2.0 * dim as f64;
            println!("data {data_seed} attempt {attempt}: edges={} purity={:.3} F={:.1}",
                learned.n_edges(), hidden_child_purity(&learned, &suite.golden).unwrap_or(-1.0), f);
        }
    }
}
