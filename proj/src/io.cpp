#include "qdyn/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "qdyn/errors.hpp"

namespace qdyn::io {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// All binary payloads are little-endian on disk.
void doubles_to_le(const double* src, char* dst, size_t n) {
    std::memcpy(dst, src, n * sizeof(double));
    if constexpr (std::endian::native == std::endian::big) {
        for (size_t i = 0; i < n; ++i) {
            char* p = dst + i * sizeof(double);
            std::reverse(p, p + sizeof(double));
        }
    }
}

void doubles_from_le(const char* src, double* dst, size_t n) {
    std::memcpy(dst, src, n * sizeof(double));
    if constexpr (std::endian::native == std::endian::big) {
        for (size_t i = 0; i < n; ++i) {
            char* p = reinterpret_cast<char*>(dst) + i * sizeof(double);
            std::reverse(p, p + sizeof(double));
        }
    }
}

std::vector<char> blob_bytes(const nn::ParamStore& params) {
    size_t total = 0;
    for (const auto& e : params.entries()) total += e.value.size();
    std::vector<char> bytes(total * sizeof(double));
    size_t off = 0;
    for (const auto& e : params.entries()) {
        doubles_to_le(e.value.data(), bytes.data() + off * sizeof(double), e.value.size());
        off += e.value.size();
    }
    return bytes;
}

} // namespace

KvMap parse_kv(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("key-value line " + std::to_string(lineno) + " has no '='");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty())
            throw ConfigError("key-value line " + std::to_string(lineno) + " has empty key");
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

KvMap read_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_kv(buf.str());
}

void write_kv_file(const std::string& path, const KvMap& kv) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
}

uint64_t fnv1a(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        const auto got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

uint64_t param_hash(const nn::ParamStore& params) {
    const auto bytes = blob_bytes(params);
    return fnv1a(bytes.data(), bytes.size());
}

void save_checkpoint(const std::string& path, const KvMap& header,
                     const nn::ParamStore& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    out << "qdyn-checkpoint v1\n";
    for (const auto& [k, v] : header) out << k << " = " << v << "\n";
    size_t off = 0;
    for (const auto& e : params.entries()) {
        out << "param = " << e.name << " " << (e.learnable ? 1 : 0) << " " << e.shape.size();
        for (int64_t d : e.shape) out << " " << d;
        out << " " << off << "\n";
        off += e.value.size();
    }
    out << "blob = " << off << "\n";
    const auto bytes = blob_bytes(params);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || trim(line) != "qdyn-checkpoint v1")
        throw ConfigError(path + ": not a qdyn checkpoint");

    Checkpoint ck;
    struct Pending {
        std::string name;
        ad::Shape shape;
        size_t offset;
        bool learnable;
    };
    std::vector<Pending> pending;
    size_t blob_count = 0;
    bool saw_blob = false;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(path + ": malformed manifest line");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "param") {
            std::istringstream fields(val);
            Pending p;
            int learnable = 1;
            size_t rank = 0;
            if (!(fields >> p.name >> learnable >> rank))
                throw ConfigError(path + ": malformed param line");
            p.shape.resize(rank);
            for (size_t i = 0; i < rank; ++i)
                if (!(fields >> p.shape[i])) throw ConfigError(path + ": malformed param line");
            if (!(fields >> p.offset)) throw ConfigError(path + ": malformed param line");
            p.learnable = learnable != 0;
            pending.push_back(std::move(p));
        } else if (key == "blob") {
            blob_count = std::stoull(val);
            saw_blob = true;
            break;
        } else {
            ck.header[key] = val;
        }
    }
    if (!saw_blob) throw ConfigError(path + ": missing blob marker");

    std::vector<char> bytes(blob_count * sizeof(double));
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<size_t>(in.gcount()) != bytes.size())
        throw ConfigError(path + ": truncated parameter blob");

    for (const auto& p : pending) {
        const size_t n = static_cast<size_t>(ad::numel(p.shape));
        if (p.offset + n > blob_count)
            throw ConfigError(path + ": parameter " + p.name + " exceeds blob");
        std::vector<double> v(n);
        doubles_from_le(bytes.data() + p.offset * sizeof(double), v.data(), n);
        ck.params.add(p.name, p.shape, std::move(v), p.learnable);
    }
    return ck;
}

} // namespace qdyn::io
