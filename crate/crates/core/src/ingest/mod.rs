//! Option chains to cumulative forward variance surfaces.

pub mod black_scholes;
pub mod build;
pub mod chain;
pub mod pchip;
pub mod strip;

pub use black_scholes::black_scholes_price;
pub use build::{build_surface, flat_vol_chain, CellSource, CoverageReport};
pub use chain::{read_chain, read_chain_from, write_chain, ChainGroup, OptionChain, OptionKind, QuoteRecord};
pub use pchip::{pchip_eval, pchip_fit, Pchip};
pub use strip::{strip_integrate, StripResult};
