#include "apfl/error.hpp"

namespace apfl {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::ok: return "Ok";
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::name_too_long: return "NameTooLong";
    case Errc::truncated: return "Truncated";
    case Errc::bad_dtype_tag: return "BadDtypeTag";
    case Errc::trailing_bytes: return "TrailingBytes";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::infeasible_partition: return "InfeasiblePartition";
    case Errc::empty_update_list: return "EmptyUpdateList";
    case Errc::negative_staleness: return "NegativeStaleness";
    case Errc::duplicate_update: return "DuplicateUpdate";
    case Errc::invalid_bounds: return "InvalidBounds";
    case Errc::unknown_client: return "UnknownClient";
    case Errc::not_clipped: return "NotClipped";
    case Errc::non_finite_value: return "NonFiniteValue";
    case Errc::corrupt_blob: return "CorruptBlob";
    case Errc::checksum_mismatch: return "ChecksumMismatch";
    case Errc::bad_magic: return "BadMagic";
    case Errc::unsupported_version: return "UnsupportedVersion";
    case Errc::oversized_payload: return "OversizedPayload";
    case Errc::unauthenticated: return "Unauthenticated";
    case Errc::unknown_connector: return "UnknownConnector";
    case Errc::missing_key: return "MissingKey";
    case Errc::unknown_type: return "UnknownType";
    case Errc::missing_leaf_update: return "MissingLeafUpdate";
    case Errc::dim_mismatch: return "DimMismatch";
    case Errc::parse_error: return "ParseError";
    case Errc::unknown_key: return "UnknownKey";
    case Errc::missing_required: return "MissingRequired";
    case Errc::unknown_strategy_name: return "UnknownStrategyName";
    case Errc::config_error: return "ConfigError";
    case Errc::non_terminating: return "NonTerminating";
    case Errc::connection_refused: return "ConnectionRefused";
    case Errc::protocol_error: return "ProtocolError";
    case Errc::io_error: return "IoError";
    case Errc::not_implemented: return "NotImplemented";
    case Errc::internal: return "Internal";
  }
  return "Unknown";
}

}  // namespace apfl
