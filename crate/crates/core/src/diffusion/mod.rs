//! Denoising-diffusion trajectory teacher.

pub mod prior;
pub mod schedule;
pub mod teacher;

pub use prior::{fixed_mask, make_conditioned_prior, ConditionedPrior, FIXED_LEN};
pub use schedule::{forward_noise, time_embedding, NoiseSchedule, TIME_FEATURES};
pub use teacher::{
    argmax, candidate_priors, ddpm_loss, reverse_sample, reverse_sample_batch, teacher_decision, train_teacher,
    Sampler, Teacher, TeacherConfig, TeacherDecision, TeacherExample,
};
