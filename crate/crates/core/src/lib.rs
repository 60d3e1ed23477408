pub mod mesh;
pub mod model;
pub mod objectives;
pub mod patch;
pub mod remesh;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod trainer;
