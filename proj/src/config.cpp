// SPDX-License-Identifier: Apache-2.0
#include "cimn/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "cimn/errors.hpp"

namespace cimn::config {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> parts;
    std::string current;
    for (char c : value) {
        if (c == ',') {
            parts.push_back(trim(current));
            current.clear();
        } else {
            current += c;
        }
    }
    parts.push_back(trim(current));
    return parts;
}

double parse_real(const std::string& s, const std::string& key) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw IoError("config key '" + key + "': bad real value '" + s + "'");
    return v;
}

std::int64_t parse_int(const std::string& s, const std::string& key) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw IoError("config key '" + key + "': bad integer value '" + s + "'");
    return v;
}

}  // namespace

std::string format_real(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw IoError("config: real formatting failed");
    return std::string(buf, ptr);
}

FlatConfig FlatConfig::parse_string(const std::string& text) {
    FlatConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const std::string trimmed = trim(line);
        if (trimmed.empty()) continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos)
            throw IoError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(trimmed.substr(0, eq));
        const std::string value = trim(trimmed.substr(eq + 1));
        if (key.empty()) throw IoError("config line " + std::to_string(line_no) + ": empty key");
        cfg.set_string(key, value);
    }
    return cfg;
}

FlatConfig FlatConfig::parse_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open config: " + path);
    std::ostringstream buffer;
    buffer << is.rdbuf();
    return parse_string(buffer.str());
}

const std::string* FlatConfig::find(const std::string& key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return &v;
    return nullptr;
}

bool FlatConfig::has(const std::string& key) const { return find(key) != nullptr; }

std::vector<std::string> FlatConfig::keys() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

std::string FlatConfig::get_string(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
}

std::int64_t FlatConfig::get_int(const std::string& key, std::int64_t fallback) const {
    const std::string* v = find(key);
    return v ? parse_int(*v, key) : fallback;
}

double FlatConfig::get_real(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    return v ? parse_real(*v, key) : fallback;
}

bool FlatConfig::get_bool(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw IoError("config key '" + key + "': bad bool value '" + *v + "'");
}

std::vector<double> FlatConfig::get_real_list(const std::string& key,
                                              const std::vector<double>& fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    std::vector<double> out;
    for (const std::string& part : split_list(*v)) out.push_back(parse_real(part, key));
    return out;
}

std::vector<std::int64_t> FlatConfig::get_int_list(
    const std::string& key, const std::vector<std::int64_t>& fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    std::vector<std::int64_t> out;
    for (const std::string& part : split_list(*v)) out.push_back(parse_int(part, key));
    return out;
}

void FlatConfig::set_string(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = value;
            return;
        }
    }
    entries_.emplace_back(key, value);
}

void FlatConfig::set_int(const std::string& key, std::int64_t value) {
    set_string(key, std::to_string(value));
}

void FlatConfig::set_real(const std::string& key, double value) {
    set_string(key, format_real(value));
}

void FlatConfig::set_bool(const std::string& key, bool value) {
    set_string(key, value ? "true" : "false");
}

void FlatConfig::set_real_list(const std::string& key, const std::vector<double>& values) {
    std::string joined;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) joined += ", ";
        joined += format_real(values[i]);
    }
    set_string(key, joined);
}

void FlatConfig::set_int_list(const std::string& key, const std::vector<std::int64_t>& values) {
    std::string joined;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) joined += ", ";
        joined += std::to_string(values[i]);
    }
    set_string(key, joined);
}

void FlatConfig::require_known(const std::vector<std::string>& known) const {
    for (const auto& [k, v] : entries_) {
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw IoError("unknown config key '" + k + "'");
    }
}

std::string FlatConfig::serialize() const {
    std::vector<std::pair<std::string, std::string>> sorted = entries_;
    std::sort(sorted.begin(), sorted.end());
    std::string out;
    for (const auto& [k, v] : sorted) out += k + " = " + v + "\n";
    return out;
}

void FlatConfig::write_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write config: " + path);
    os << serialize();
    if (!os) throw IoError("config write failed: " + path);
}

}  // namespace cimn::config
