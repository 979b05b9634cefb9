// SPDX-License-Identifier: Apache-2.0
#include "cimn/param_set.hpp"

#include <cstring>

namespace cimn::ad {

void ParamSet::add(std::string name, Matrix value) {
    if (has(name)) throw ContractViolation("ParamSet::add: duplicate name '" + name + "'");
    entries_.push_back({std::move(name), std::move(value)});
}

bool ParamSet::has(std::string_view name) const {
    for (const Entry& e : entries_)
        if (e.name == name) return true;
    return false;
}

std::size_t ParamSet::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return i;
    throw ContractViolation("ParamSet: no entry named '" + std::string(name) + "'");
}

Matrix& ParamSet::at(std::string_view name) { return entries_[index_of(name)].value; }

const Matrix& ParamSet::at(std::string_view name) const { return entries_[index_of(name)].value; }

std::size_t ParamSet::total_size() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.value.size();
    return n;
}

std::vector<double> ParamSet::flatten() const {
    std::vector<double> flat;
    flat.reserve(total_size());
    for (const Entry& e : entries_)
        flat.insert(flat.end(), e.value.values().begin(), e.value.values().end());
    return flat;
}

void ParamSet::unflatten(std::span<const double> flat) {
    if (flat.size() != total_size()) throw ContractViolation("unflatten: size mismatch");
    std::size_t offset = 0;
    for (Entry& e : entries_) {
        std::memcpy(e.value.data(), flat.data() + offset, e.value.size() * sizeof(double));
        offset += e.value.size();
    }
}

bool ParamSet::all_finite() const {
    for (const Entry& e : entries_)
        if (!e.value.all_finite()) return false;
    return true;
}

bool ParamSet::same_layout(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name != other.entries_[i].name) return false;
        if (!entries_[i].value.same_shape(other.entries_[i].value)) return false;
    }
    return true;
}

bool ParamSet::bit_equal(const ParamSet& other) const {
    if (!same_layout(other)) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (!entries_[i].value.bit_equal(other.entries_[i].value)) return false;
    return true;
}

}  // namespace cimn::ad
