//! LiDAR corruption generators at five severity levels and benchmark
//! manifests describing an ordered sequence of corrupted domains.

mod benchmark;
mod generators;
mod table;

pub use benchmark::{
    build_benchmark, corrupt_domains, BenchmarkManifest, DomainSpec, MANIFEST_FILE,
};
pub use generators::{
    corrupt, cutout, density_decrease, gaussian_noise, impulse_noise, occupied_cells, space_noise,
    sunlight, uniform_noise,
};
pub use table::{CorruptionKind, Profile, SeverityTable};
