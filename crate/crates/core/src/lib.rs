//! Forecasting, state-space identification and rolling-horizon dispatch
//! for renewable microgrids.

pub mod diffusion;
pub mod dispatch;
pub mod exec;
pub mod forecaster;
pub mod lpcore;
pub mod network;
pub mod sysid;
pub mod tscore;
