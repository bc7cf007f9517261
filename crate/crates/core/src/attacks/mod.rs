//! Membership-inference and attribute-inference attacks against a trained
//! model. Attacks only read the model.

mod aia;
mod mia;

pub use aia::{
    aia_attribute, aia_attribute_in_range, attribute_risk_ratio, AiaAttributeReport, AiaOutcome,
    AiaSettings,
};
pub use mia::{
    attack_model_spec, lira_mia, salem_mia, worst_case_mia, MiaReport, MiaSeeds, RecordScore,
    Scenario,
};
