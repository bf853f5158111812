pub mod autodiff;
pub mod evaluator;
pub mod operator;
pub mod population_losses;
pub mod landscape;
pub mod seeding;
pub mod time_codes;
pub mod trainer;
