//! The learning stack: tensors, a reverse-mode tape, the convolutional
//! encoder and MLP classifier, losses, Adam, augmentation and training.

pub mod augment;
mod checkpoint;
pub mod loss;
pub mod model;
mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use augment::augment;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use loss::{cross_entropy, supcon_loss};
pub use model::{encode, Classifier, Encoder, Model, EMBED_DIM};
pub use optim::Adam;
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
pub use train::{finetune, train_encoder_supcon, train_scl, train_sl, EpochRecord, History, Stage, TrainConfig};
