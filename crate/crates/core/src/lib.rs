//! Estimation of population-attributable fractions for event-history data
//! with a time-dependent binary exposure and two competing terminal events.

// Negated comparisons are used to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod cohort;
pub mod cox;
pub mod curve;
pub mod discrete;
pub mod error;
pub mod multistate;
pub mod paf;
pub mod simulate;
pub mod survival;

pub use cohort::{parse_cohort, Cohort, CovariateValue, EndStatus, State, Subject, TiePolicy, TransitionRecords};
pub use curve::StepCurve;
pub use error::{DataError, EstimationError};
pub use paf::{Estimand, Estimator, EstimatorSpec, PafCurve};
pub use simulate::HazardSpec;
