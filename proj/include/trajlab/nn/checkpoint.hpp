#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <trajlab/common/error.hpp>
#include <trajlab/nn/tensor.hpp>

namespace trajlab::nn {

// Checkpoint container: magic line, a structured-text header listing
// parameter names/shapes/byte offsets, then raw little-endian float64 blobs.
// Round-trips are bit-exact.
inline constexpr const char* kCheckpointMagic = "TGCKPT1";

namespace detail {
inline void write_doubles_le(std::ostream& out, const Mat& m) {
    static_assert(sizeof(double) == 8);
    // Mat is row-major, so the buffer already matches the declared layout.
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}
}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, const Mat*>>& tensors) {
    std::ostringstream header;
    header << kCheckpointMagic << '\n';
    std::uint64_t offset = 0;
    for (const auto& [name, m] : tensors) {
        require(name.find_first_of(" \n") == std::string::npos,
                "checkpoint tensor name contains whitespace: ", name);
        header << "param " << name << " 2 " << m->rows() << ' ' << m->cols() << ' ' << offset
               << ' ' << m->size() << '\n';
        offset += sizeof(double) * static_cast<std::uint64_t>(m->size());
    }
    header << "end\n";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out << header.str();
    for (const auto& [name, m] : tensors) detail::write_doubles_le(out, *m);
    if (!out) throw IoError("checkpoint write failed: " + path);
}

inline std::map<std::string, Mat> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointMagic)
        throw IoError("not a checkpoint file (bad magic): " + path);
    struct Entry {
        std::string name;
        Eigen::Index rows, cols;
        std::uint64_t offset, count;
    };
    std::vector<Entry> entries;
    while (std::getline(in, line)) {
        if (line == "end") break;
        std::istringstream ls(line);
        std::string kind;
        int rank;
        Entry e;
        if (!(ls >> kind >> e.name >> rank >> e.rows >> e.cols >> e.offset >> e.count) ||
            kind != "param" || rank != 2)
            throw IoError("malformed checkpoint header line: " + line);
        if (e.count != static_cast<std::uint64_t>(e.rows * e.cols))
            throw IoError("checkpoint shape/count mismatch for " + e.name);
        entries.push_back(std::move(e));
    }
    std::streampos base = in.tellg();
    std::map<std::string, Mat> out;
    for (const Entry& e : entries) {
        Mat m(e.rows, e.cols);
        in.seekg(base + static_cast<std::streamoff>(e.offset));
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * e.count));
        if (!in) throw IoError("truncated checkpoint blob for " + e.name);
        auto [it, fresh] = out.emplace(e.name, std::move(m));
        if (!fresh) throw IoError("duplicate tensor name in checkpoint: " + e.name);
    }
    return out;
}

inline void save_params(const std::string& path, const std::vector<Param*>& params) {
    std::vector<std::pair<std::string, const Mat*>> tensors;
    tensors.reserve(params.size());
    for (const Param* p : params) tensors.emplace_back(p->name, &p->value);
    save_checkpoint(path, tensors);
}

inline void load_params(const std::map<std::string, Mat>& tensors,
                        const std::vector<Param*>& params) {
    for (Param* p : params) {
        auto it = tensors.find(p->name);
        if (it == tensors.end()) throw IoError("checkpoint is missing tensor " + p->name);
        require(it->second.rows() == p->value.rows() && it->second.cols() == p->value.cols(),
                "checkpoint tensor ", p->name, " has shape ", shape_str(it->second),
                ", expected ", shape_str(p->value));
        p->value = it->second;
        p->reset_state();
    }
}

}  // namespace trajlab::nn
