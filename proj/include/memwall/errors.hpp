// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace memwall {

/// Malformed or inconsistent input document (graph file, trace file, config).
class SchemaError : public std::runtime_error {
public:
    explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

/// A device profile lacks a timing entry required by the graph or model.
class IncompleteProfileError : public std::runtime_error {
public:
    explicit IncompleteProfileError(const std::string& what) : std::runtime_error(what) {}
};

/// The memory budget cannot accommodate the graph even with full reclamation.
/// Carries the tightest lower bound known at the failure point.
class InfeasibleBudgetError : public std::runtime_error {
public:
    InfeasibleBudgetError(const std::string& what, std::uint64_t min_feasible_bytes)
        : std::runtime_error(what), min_feasible_bytes(min_feasible_bytes) {}

    std::uint64_t min_feasible_bytes = 0;
};

/// A query against an empty observation window.
class NoDataError : public std::runtime_error {
public:
    explicit NoDataError(const std::string& what) : std::runtime_error(what) {}
};

/// Corrupt or truncated compressed bitstream; offset points at the failing byte.
class DecodeError : public std::runtime_error {
public:
    DecodeError(const std::string& what, std::size_t byte_offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
          byte_offset(byte_offset) {}

    std::size_t byte_offset = 0;
};

} // namespace memwall
