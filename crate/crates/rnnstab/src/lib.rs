pub mod analysis;
pub mod model;
pub mod sdp;
pub mod sigmoid;
pub mod synthesis;
pub mod verify;
