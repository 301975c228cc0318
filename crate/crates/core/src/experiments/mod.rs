//! Builders and runners for the numerical studies, plus brute-force oracles.

pub mod brute;
pub mod production;
pub mod quadratic;
pub mod study;

pub use brute::{brute_force_qn, grid_minimum, pattern_extremum, LevelSetSearch};
pub use production::{
    build_production_model, field_topology, tighten_production, tiny_instance, ProductionInstance, ProductionTopology,
    RoutingSearch,
};
pub use quadratic::{
    build_qn, choose_alpha, gen_quadratic, solve_qn, surrogate_architecture, train_surrogate, QnOutcome, QuadraticSpec,
    Surrogate,
};
pub use study::{run_output_bound_study, StudyConfig, StudyReport, StudyRow};
