//! Small neural building blocks: hashing tokenizer, seeded initializers,
//! AdamW, and the two encoders (text transformer, conv vision).

mod adamw;
mod init;
mod text_encoder;
mod tokenizer;
mod vision_encoder;

pub use adamw::{AdamW, AdamWConfig};
pub use init::{embedding_init, xavier_uniform, zeros};
pub use text_encoder::{TextEncoder, TextEncoderConfig};
pub use tokenizer::HashTokenizer;
pub use vision_encoder::{VisionEncoder, VisionEncoderConfig};
