//! Market data ingestion and Black analytics.

mod black;
mod curves;
mod quotes;
mod snapshot;

pub use black::{black_price, black_vega, implied_vol, OptionKind};
pub use curves::{DiscountCurve, ForwardCurve};
pub use quotes::{QuantoQuote, QuantoQuoteSet, QuoteConvention, QuoteSide, VolQuoteSurface};
pub use snapshot::{load_snapshot, MarketSnapshot, SnapshotManifest};
