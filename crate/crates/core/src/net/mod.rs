//! Recurrent attention U-Net for per-frame surface probability maps, with
//! hand-written backpropagation.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod ops;
pub mod params;
pub mod store;
pub mod tensor;
pub mod train;
pub mod unet;

pub use loss::{loss_and_grad, w_ce_loss, w_dice_loss, LossKind, DICE_EPS};
pub use params::{ParamEntry, ParamSet};
pub use store::{load_weights, manifest_path, save_weights};
pub use tensor::Tensor;
pub use train::{predict_sequence, train, ResetPolicy, Sample, TrainConfig, TrainReport};
pub use unet::{FrameCache, GruState, UNet, UNetSpec};
