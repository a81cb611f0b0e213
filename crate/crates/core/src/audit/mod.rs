//! Membership-inference scoring, ROC analysis, LiRA and the inference game.

mod game;
mod lira;
mod protocol;
mod roc;
mod score;

pub use game::{run_mi_game, Challenge, GameResult};
pub use lira::{
    balanced_assignment, lira_fit, lira_report, lira_score, lira_scores, logit_scores, shadow_lira,
    LiraFit, ShadowEnsemble, SIGMA_FLOOR,
};
pub use protocol::{
    encode_targets, run_standard_mi, run_stealthy_mi, run_stealthy_mi_obfuscated,
    run_stealthy_mi_perturbed, score_queries,
};
pub use roc::{fpr_key, roc_and_tpr, roc_curve, trapezoid_auc, MiReport, MiScoreSet, Protocol};
pub use score::{logit_scaled_score, score, ScoreKind, KAPPA};
