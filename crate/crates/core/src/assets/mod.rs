//! Data model and on-disk formats for the CAD library: triangle meshes with
//! material-indexed groups, precomputed embedding vectors, and the library
//! manifest. Also hosts the qualification filter that drops models whose
//! material index layout cannot drive part-aware assignment.

mod embedding;
mod library;
mod mesh;
mod mesh_io;
mod obj;

pub use embedding::{load_embeddings, write_embeddings, EmbeddingVector};
pub use library::{filter_assets, load_library, CadAsset, Library, LibraryManifest, ManifestAsset};
pub use mesh::{Group, TriangleMesh};
pub use mesh_io::{read_mesh, read_mesh_json, write_mesh_json};
pub use obj::read_obj;
