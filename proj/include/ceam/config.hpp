#pragma once
// Line-oriented key=value configuration shared by the synth and train
// commands. Schema lines take the form `relation hasVendor profiling=true`.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ceam/kg.hpp"

namespace ceam {

class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>");
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.contains(key); }
    std::optional<std::string> get(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    const std::vector<RelationSpec>& relations() const { return relations_; }
    // The explicit schema if any relation lines were given, else `fallback`.
    RelationPartition schema_or(const RelationPartition& fallback) const;

    // Throws ConfigError naming the first key not in `known`.
    void require_known(const std::set<std::string>& known) const;

    // Canonical text form: sorted keys, then relation lines in order.
    std::string serialize() const;

private:
    std::map<std::string, std::string> values_;
    std::vector<RelationSpec> relations_;
};

// Renders a schema as config relation lines.
std::string schema_to_config(const RelationPartition& schema);

}  // namespace ceam
