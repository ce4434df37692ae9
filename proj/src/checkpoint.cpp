#include "ceam/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace ceam {

namespace {

constexpr const char* kMagic = "ceam-checkpoint";

std::string hex(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", x);
    return buf;
}

double parse_hex(const std::string& tok) {
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw CheckpointError("bad number '" + tok + "' in checkpoint");
    return v;
}

}  // namespace

std::string serialize_params(const ModelParams& params) {
    std::ostringstream out;
    out << kMagic << ' ' << kCheckpointVersion << '\n';
    for (const auto& [k, v] : params.meta) out << "meta " << k << ' ' << v << '\n';
    for (const auto& t : params.tensors()) {
        out << "tensor " << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << '\n';
        for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
                if (c) out << ' ';
                out << hex(t.value(r, c));
            }
            out << '\n';
        }
    }
    out << "end\n";
    return out.str();
}

ModelParams parse_params(const std::string& text) {
    std::istringstream in(text);
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != kMagic) throw CheckpointError("not a checkpoint file");
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    ModelParams params;
    std::string kind;
    bool ended = false;
    while (in >> kind) {
        if (kind == "meta") {
            std::string key;
            std::string value;
            in >> key;
            std::getline(in, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            params.meta[key] = value;
        } else if (kind == "tensor") {
            std::string name;
            Eigen::Index rows = 0;
            Eigen::Index cols = 0;
            if (!(in >> name >> rows >> cols) || rows < 0 || cols < 0) {
                throw CheckpointError("bad tensor header in checkpoint");
            }
            Matrix m(rows, cols);
            std::string tok;
            for (Eigen::Index r = 0; r < rows; ++r) {
                for (Eigen::Index c = 0; c < cols; ++c) {
                    if (!(in >> tok)) throw CheckpointError("truncated tensor " + name);
                    m(r, c) = parse_hex(tok);
                }
            }
            params.add(name, std::move(m));
        } else if (kind == "end") {
            ended = true;
            break;
        } else {
            throw CheckpointError("unexpected record '" + kind + "' in checkpoint");
        }
    }
    if (!ended) throw CheckpointError("checkpoint is truncated");
    return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out << serialize_params(params);
    if (!out) throw CheckpointError("write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_params(buf.str());
}

}  // namespace ceam
