//! Trilinear space-time finite elements: quadrature, sparse storage and assembly.

pub mod assembly;
pub mod element;
pub mod sparse;

pub use assembly::{
    assemble_data_blocks, assemble_mass, assemble_stiffness, assemble_system, project_derivatives,
    Assembler, BlockSparseSystem, DataBlocks,
};
pub use element::{slab_elements, DiffusionTensorField, Element, QuadratureRule, ReferenceBasis};
pub use sparse::{CsrMatrix, SparsityPattern};
