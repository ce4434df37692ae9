#include "ceam/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ceam {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        auto where = origin + ":" + std::to_string(lineno) + ": ";
        if (line.rfind("relation ", 0) == 0) {
            std::istringstream words(line.substr(9));
            RelationSpec spec;
            std::string flag;
            words >> spec.name >> flag;
            std::string extra;
            if (spec.name.empty() || (words >> extra)) {
                throw ConfigError(where + "expected `relation <name> profiling=<bool>`");
            }
            if (!flag.empty()) {
                if (flag.rfind("profiling=", 0) != 0) {
                    throw ConfigError(where + "unknown relation attribute '" + flag + "'");
                }
                spec.profiling = parse_bool(flag.substr(10), spec.name);
            } else {
                throw ConfigError(where + "relation " + spec.name + " has no profiling flag");
            }
            cfg.relations_.push_back(spec);
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
        auto key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(where + "empty key");
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        double d = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + *v + "'");
    }
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    long long out = 0;
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc{} || ptr != v->data() + v->size()) {
        throw ConfigError(key + ": expected an integer, got '" + *v + "'");
    }
    return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    return parse_bool(*v, key);
}

RelationPartition KeyValueConfig::schema_or(const RelationPartition& fallback) const {
    if (relations_.empty()) return fallback;
    return partition_relations(relations_);
}

void KeyValueConfig::require_known(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_) {
        if (!known.contains(k)) throw ConfigError("unknown config key: " + k);
    }
}

std::string KeyValueConfig::serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
    for (const auto& r : relations_) {
        out << "relation " << r.name << " profiling=" << (r.profiling ? "true" : "false") << '\n';
    }
    return out.str();
}

std::string schema_to_config(const RelationPartition& schema) {
    std::ostringstream out;
    for (std::size_t r = 0; r < schema.size(); ++r) {
        out << "relation " << schema.relations[r]
            << " profiling=" << (schema.profiling[r] ? "true" : "false") << '\n';
    }
    return out.str();
}

}  // namespace ceam
