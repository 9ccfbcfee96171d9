//! Simulated live-broadcast room.
//!
//! Customers arrive with hidden preferences over content types. Each round the
//! agent exposes one content type (or a slate of items); the customer clicks
//! with a logistic probability that falls with repeated exposure of the same
//! type, and leaves after a geometric number of rounds.

mod choice;
pub mod oracle;
mod population;
mod session;

pub use choice::{
    check_distinct, mnl_probabilities, sample_choice, Catalog, ChoiceModel, ChoiceProbabilities,
    ProfileChoiceModel,
};
pub use oracle::{ground_truth_q, optimal_slate_item_values, slate_policy_item_values, GroundTruthQ, ItemValues};
pub use population::{logistic, CustomerProfile, Population};
pub use session::{RoundRecord, Session, SlateOutcome, StepOutcome};
