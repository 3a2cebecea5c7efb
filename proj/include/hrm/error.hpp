// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace hrm {

// Shapes that do not line up (matmul inner extents, channel counts, ...).
class dimension_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid model or run configuration.
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller broke a documented precondition.
class contract_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN / Inf where finite values are required.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file contents (IDX headers, CIFAR records, checkpoints).
class format_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Valid file, invalid values (labels out of range, ...).
class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hrm
