//! Retrieval-driven vehicle insertion toolkit.
//!
//! Given a reference vehicle photo, precomputed embeddings and masks, a CAD
//! library and fisheye background captures, this crate retrieves the closest
//! CAD model, assigns and fits procedural materials to the reference, estimates
//! spatially varying HDR environment lighting, and composites the rendered
//! vehicle into background frames.
//!
//! The crate is organized along the pipeline stages:
//!
//! - [`assets`]: meshes, embeddings, the CAD library and its manifest
//! - [`matgraph`]: differentiable procedural material graphs
//! - [`retrieval`]: embedding search, pose matching and part recognition
//! - [`render`]: software rasterizer, image-based PBR shading, compositing
//! - [`matopt`]: part-aware material losses and the fitting loop
//! - [`lighting`]: fisheye stitching and HDR environment map estimation
//! - [`pipeline`]: end-to-end orchestration and run manifests

pub mod assets;
pub mod error;
pub mod image_io;
pub mod img;
pub mod lighting;
pub mod matgraph;
pub mod math;
pub mod matopt;
pub mod pipeline;
pub mod render;
pub mod retrieval;

pub use assets::{CadAsset, EmbeddingVector, Library, TriangleMesh};
pub use error::Error;
pub use img::{ImageGray, ImageRgb};
pub use matgraph::{MaterialGraph, TextureSet};
pub use render::{CameraModel, EnvironmentMap, RenderBuffers};
pub use retrieval::{ComponentLabel, FeatureMap, MaterialIndexMap, PartAssignment, SegmentationMask};
