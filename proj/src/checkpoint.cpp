#include "jacmatch/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace jm::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts need byte swaps");

namespace {

constexpr char kMagic[8] = {'J', 'M', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    JM_CHECK(is.good(), "checkpoint '", path, "': truncated file");
    return value;
}

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, ad::Tensor>>& tensors) {
    std::ofstream os(path, std::ios::binary);
    JM_CHECK(os.good(), "checkpoint '", path, "': cannot open for writing");
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        JM_CHECK(name.size() < 65536, "checkpoint: tensor name too long");
        write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<std::uint8_t>(os, 0);  // dtype tag: f64
        write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.ndim()));
        for (int d : t.shape()) write_pod<std::int32_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    JM_CHECK(os.good(), "checkpoint '", path, "': write failed");
}

std::vector<std::pair<std::string, ad::Tensor>> load_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    JM_CHECK(is.good(), "checkpoint '", path, "': cannot open");
    char magic[8];
    is.read(magic, sizeof(magic));
    JM_CHECK(is.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
             "checkpoint '", path, "': bad magic");
    const auto count = read_pod<std::uint32_t>(is, path);
    std::vector<std::pair<std::string, ad::Tensor>> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint16_t>(is, path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        JM_CHECK(is.good(), "checkpoint '", path, "': truncated file");
        const auto dtype = read_pod<std::uint8_t>(is, path);
        JM_CHECK(dtype == 0, "checkpoint '", path, "': unsupported dtype tag ", int(dtype),
                 " for '", name, "'");
        const auto ndim = read_pod<std::uint8_t>(is, path);
        ad::Shape shape(ndim);
        for (auto& d : shape) d = read_pod<std::int32_t>(is, path);
        const std::int64_t n = ad::numel_of(shape);
        std::vector<double> data(static_cast<std::size_t>(n));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        JM_CHECK(is.good(), "checkpoint '", path, "': truncated payload for '", name, "'");
        out.emplace_back(std::move(name), ad::Tensor::from(std::move(shape), std::move(data)));
    }
    return out;
}

void save_network(const std::string& path, const Network& net) {
    save_tensors(path, net.named_params());
}

void load_network_params(const std::string& path, Network& net) {
    auto stored = load_tensors(path);
    std::map<std::string, ad::Tensor> by_name(stored.begin(), stored.end());
    auto current = net.named_params();
    std::vector<ad::Tensor> values;
    values.reserve(current.size());
    for (const auto& [name, t] : current) {
        auto it = by_name.find(name);
        JM_CHECK(it != by_name.end(), "checkpoint '", path, "': missing tensor '", name, "'");
        JM_CHECK(it->second.shape() == t.shape(), "checkpoint '", path, "': shape mismatch for '",
                 name, "': stored ", ad::shape_str(it->second.shape()), " vs network ",
                 ad::shape_str(t.shape()));
        values.push_back(it->second);
    }
    net.set_params(values);
}

}  // namespace jm::nn
