#include "audiobert/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace ab::num {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'B', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

struct ManifestEntry {
    std::string name;
    Shape shape;
    uint64_t offset;  // into the data section, in bytes
};

std::vector<ManifestEntry> read_manifest(std::istream& is, const std::string& path) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error(path + ": not a parameter container");
    const uint32_t version = read_u32(is);
    if (version != kVersion)
        throw std::runtime_error(path + ": unsupported container version " + std::to_string(version));
    const uint32_t count = read_u32(is);
    std::vector<ManifestEntry> entries(count);
    for (auto& e : entries) {
        const uint32_t name_len = read_u32(is);
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        const uint32_t ndim = read_u32(is);
        e.shape.resize(ndim);
        for (auto& d : e.shape) d = static_cast<int64_t>(read_u64(is));
        e.offset = read_u64(is);
    }
    if (!is) throw std::runtime_error(path + ": truncated manifest");
    return entries;
}

}  // namespace

void save_params(const std::string& path, const std::vector<NamedTensor>& params) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("save_params: cannot open " + tmp);
        os.write(kMagic, 4);
        write_u32(os, kVersion);
        write_u32(os, static_cast<uint32_t>(params.size()));
        uint64_t offset = 0;
        for (const auto& p : params) {
            write_u32(os, static_cast<uint32_t>(p.name.size()));
            os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
            const Shape& s = p.tensor.shape();
            write_u32(os, static_cast<uint32_t>(s.size()));
            for (int64_t d : s) write_u64(os, static_cast<uint64_t>(d));
            write_u64(os, offset);
            offset += static_cast<uint64_t>(p.tensor.numel()) * sizeof(double);
        }
        for (const auto& p : params) {
            const auto& d = p.tensor.data();
            os.write(reinterpret_cast<const char*>(d.data()),
                     static_cast<std::streamsize>(d.size() * sizeof(double)));
        }
        if (!os) throw std::runtime_error("save_params: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::vector<NamedTensor> load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_params: cannot open " + path);
    auto entries = read_manifest(is, path);
    const std::streampos data_start = is.tellg();
    std::vector<NamedTensor> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        const int64_t n = shape_numel(e.shape);
        std::vector<double> data(static_cast<size_t>(n));
        is.seekg(data_start + static_cast<std::streamoff>(e.offset));
        is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!is) throw std::runtime_error(path + ": truncated data for " + e.name);
        out.push_back({e.name, Tensor::from(e.shape, std::move(data))});
    }
    return out;
}

size_t load_params_into(const std::string& path, std::vector<NamedTensor>& dst, bool require_all) {
    auto loaded = load_params(path);
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& p : loaded) by_name[p.name] = &p.tensor;
    size_t filled = 0;
    for (auto& d : dst) {
        auto it = by_name.find(d.name);
        if (it == by_name.end()) {
            if (require_all)
                throw std::runtime_error(path + ": parameter " + d.name + " missing from container");
            continue;
        }
        if (it->second->shape() != d.tensor.shape())
            throw std::runtime_error(path + ": shape mismatch for parameter " + d.name);
        d.tensor.mutable_data() = it->second->data();
        ++filled;
    }
    return filled;
}

uint64_t params_fingerprint(const std::vector<NamedTensor>& params) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& p : params) {
        mix(p.name.data(), p.name.size());
        for (int64_t d : p.tensor.shape()) mix(&d, sizeof(d));
        const auto& data = p.tensor.data();
        mix(data.data(), data.size() * sizeof(double));
    }
    return h;
}

}  // namespace ab::num
