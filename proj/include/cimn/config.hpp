// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cimn::config {

// Flat `key.path = value` configuration. Values are scalars or
// comma-separated lists; `#` starts a comment. Serialization sorts keys and
// writes doubles in shortest round-trip form, so a resolved config file is
// diffable and reparses to identical values.
class FlatConfig {
public:
    static FlatConfig parse_string(const std::string& text);
    static FlatConfig parse_file(const std::string& path);

    bool has(const std::string& key) const;
    std::vector<std::string> keys() const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_real(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_real_list(const std::string& key,
                                      const std::vector<double>& fallback) const;
    std::vector<std::int64_t> get_int_list(const std::string& key,
                                           const std::vector<std::int64_t>& fallback) const;

    void set_string(const std::string& key, const std::string& value);
    void set_int(const std::string& key, std::int64_t value);
    void set_real(const std::string& key, double value);
    void set_bool(const std::string& key, bool value);
    void set_real_list(const std::string& key, const std::vector<double>& values);
    void set_int_list(const std::string& key, const std::vector<std::int64_t>& values);

    // Throws if any key is not in `known`; catches config typos early.
    void require_known(const std::vector<std::string>& known) const;

    std::string serialize() const;
    void write_file(const std::string& path) const;

private:
    const std::string* find(const std::string& key) const;
    std::vector<std::pair<std::string, std::string>> entries_;
};

std::string format_real(double v);

}  // namespace cimn::config
