// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cimn {

// A caller violated a documented precondition (bad shapes, invalid labels,
// out-of-range arguments). These are programming errors, not data errors.
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// A computation produced a non-finite value. Carries the first offending
// graph node so the failure can be traced to a concrete operation.
class NumericFailure : public std::runtime_error {
public:
    NumericFailure(std::size_t node_index, const std::string& op_name, const std::string& detail)
        : std::runtime_error("numeric failure at node " + std::to_string(node_index) + " (" +
                             op_name + "): " + detail),
          node_index_(node_index),
          op_name_(op_name) {}

    std::size_t node_index() const { return node_index_; }
    const std::string& op_name() const { return op_name_; }

private:
    std::size_t node_index_;
    std::string op_name_;
};

// The batch sampler cannot satisfy a request (not enough identities or
// images on a camera). Message names the camera involved.
class InfeasibleSampling : public std::runtime_error {
public:
    explicit InfeasibleSampling(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or unreadable on-disk artifact (manifest, split, checkpoint, config).
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cimn
