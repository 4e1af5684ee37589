//! Generalised Wasserstein Dice score for multi-class segmentation.
//!
//! * [`label_metric`]: label spaces and ground distance matrices.
//! * [`wasserstein`]: exact transport distances and the crisp closed form.
//! * [`dice_losses`]: Dice-family scores, the Wasserstein Dice score and
//!   analytic loss gradients.
//! * [`evaluation`]: confusion-Dice matrices, region Dice and reports.
//! * [`synth_data`]: nested-tumour synthetic datasets.
//! * [`holistic_net`]: a small multi-scale network with deep supervision.
//!
//! Data-parallel loops go through [`exec`]; the `parallel` feature (on by
//! default) runs them on rayon, and results do not depend on the thread
//! count.

pub mod dice_losses;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod holistic_net;
pub mod io;
pub mod label_metric;
pub mod segmentation;
pub mod synth_data;
pub mod wasserstein;

pub use error::{Error, Result};
pub use exec::Execution;
pub use label_metric::{GroundMetric, LabelSpace, LabelTree};
pub use segmentation::{CrispSegmentation, Dims, ProbSegmentation};
pub use wasserstein::{ProbVector, TransportPlan};
