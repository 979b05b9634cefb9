// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cimn/matrix.hpp"

namespace cimn::ad {

// Named matrices with a stable insertion order. Used for model parameters,
// their gradients, and batch-norm running statistics. Flatten/unflatten is
// the canonical bridge to single-vector views (finite differences,
// checkpoints); the round trip is exact.
class ParamSet {
public:
    struct Entry {
        std::string name;
        Matrix value;
    };

    void add(std::string name, Matrix value);

    bool has(std::string_view name) const;
    Matrix& at(std::string_view name);
    const Matrix& at(std::string_view name) const;
    std::size_t index_of(std::string_view name) const;

    std::size_t count() const { return entries_.size(); }
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    Matrix& value(std::size_t i) { return entries_[i].value; }
    const Matrix& value(std::size_t i) const { return entries_[i].value; }

    std::size_t total_size() const;
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> flat);

    bool all_finite() const;
    bool same_layout(const ParamSet& other) const;
    bool bit_equal(const ParamSet& other) const;

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::vector<Entry> entries_;
};

}  // namespace cimn::ad
