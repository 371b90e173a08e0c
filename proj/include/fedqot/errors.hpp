#pragma once

#include <stdexcept>
#include <string>

namespace fedqot {

// Caller passed something structurally wrong (empty dataset, bad fraction, ...).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shapes/layouts disagree (batch width vs. model input, mismatched vectors).
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A field value is outside its documented range.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A byte sequence does not parse under the declared format.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parsed fine but carries values that cannot be real (NaN/Inf parameters).
struct CorruptionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AggregationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Row-addressed CSV ingestion failure.
struct IngestionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Wire-level violation: bad frame, unknown type, message out of state.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Socket/TLS/file plumbing failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedqot
