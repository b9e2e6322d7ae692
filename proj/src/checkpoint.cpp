#include "adagan/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "adagan/errors.hpp"

namespace adagan {

namespace {

constexpr uint32_t kVersion = 1;
constexpr char kNetworkMagic[4] = {'A', 'G', 'C', 'K'};
constexpr char kPairMagic[4] = {'A', 'G', 'P', 'R'};

// All multi-byte fields are little-endian regardless of host order.

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_i32(std::ostream& out, int32_t v) { put_u32(out, static_cast<uint32_t>(v)); }

void put_u64(std::ostream& out, uint64_t v) {
    put_u32(out, static_cast<uint32_t>(v));
    put_u32(out, static_cast<uint32_t>(v >> 32));
}

void put_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void put_f64(std::ostream& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw FormatError("checkpoint truncated: " + path);
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

int32_t get_i32(std::istream& in, const std::string& path) {
    return static_cast<int32_t>(get_u32(in, path));
}

uint64_t get_u64(std::istream& in, const std::string& path) {
    uint64_t lo = get_u32(in, path);
    uint64_t hi = get_u32(in, path);
    return lo | (hi << 32);
}

float get_f32(std::istream& in, const std::string& path) {
    uint32_t bits = get_u32(in, path);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

double get_f64(std::istream& in, const std::string& path) {
    uint64_t bits = get_u64(in, path);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string get_string(std::istream& in, const std::string& path) {
    uint32_t len = get_u32(in, path);
    if (len > (1u << 20)) throw FormatError("checkpoint string length implausible: " + path);
    std::string s(len, '\0');
    if (len > 0 && !in.read(s.data(), len)) {
        throw FormatError("checkpoint truncated: " + path);
    }
    return s;
}

void put_shape(std::ostream& out, const Shape& shape) {
    put_u32(out, static_cast<uint32_t>(shape.size()));
    for (int64_t d : shape) put_u64(out, static_cast<uint64_t>(d));
}

Shape get_shape(std::istream& in, const std::string& path) {
    uint32_t rank = get_u32(in, path);
    if (rank > 8) throw FormatError("checkpoint tensor rank implausible: " + path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(get_u64(in, path));
    return shape;
}

void write_network_block(std::ostream& out, Network<float>& network) {
    put_string(out, network.spec.name);
    put_shape(out, network.spec.input_shape);
    put_u32(out, static_cast<uint32_t>(network.spec.output_kind));
    put_i32(out, network.class_count);
    put_u32(out, static_cast<uint32_t>(network.spec.layers.size()));
    for (const LayerSpec& layer : network.spec.layers) {
        put_u32(out, static_cast<uint32_t>(layer.kind));
        put_i32(out, layer.units);
        put_i32(out, layer.filters);
        put_i32(out, layer.kernel);
        put_i32(out, layer.stride);
        put_i32(out, layer.padding);
        put_i32(out, layer.window);
        put_f64(out, layer.alpha);
        put_u32(out, static_cast<uint32_t>(layer.widths.size()));
        for (int w : layer.widths) put_i32(out, w);
    }
    std::vector<Tensor<float>> params = network.parameters();
    put_u32(out, static_cast<uint32_t>(params.size()));
    for (Tensor<float>& p : params) {
        put_shape(out, p.shape());
        for (float v : p.values()) put_f32(out, v);
    }
}

Network<float> read_network_block(std::istream& in, const std::string& path) {
    NetworkSpec spec;
    spec.name = get_string(in, path);
    spec.input_shape = get_shape(in, path);
    uint32_t kind_raw = get_u32(in, path);
    if (kind_raw > static_cast<uint32_t>(OutputKind::scalar_prob)) {
        throw FormatError("checkpoint has unknown output kind in " + path);
    }
    spec.output_kind = static_cast<OutputKind>(kind_raw);
    int32_t class_count = get_i32(in, path);
    uint32_t layer_count = get_u32(in, path);
    if (layer_count > 256) throw FormatError("checkpoint layer count implausible: " + path);
    spec.layers.reserve(layer_count);
    for (uint32_t i = 0; i < layer_count; ++i) {
        LayerSpec layer = LayerSpec::relu();
        uint32_t lk = get_u32(in, path);
        if (lk > static_cast<uint32_t>(LayerKind::multi_width)) {
            throw FormatError("checkpoint has unknown layer kind in " + path);
        }
        layer.kind = static_cast<LayerKind>(lk);
        layer.units = get_i32(in, path);
        layer.filters = get_i32(in, path);
        layer.kernel = get_i32(in, path);
        layer.stride = get_i32(in, path);
        layer.padding = get_i32(in, path);
        layer.window = get_i32(in, path);
        layer.alpha = get_f64(in, path);
        uint32_t widths = get_u32(in, path);
        if (widths > 64) throw FormatError("checkpoint width list implausible: " + path);
        layer.widths.resize(widths);
        for (auto& w : layer.widths) w = get_i32(in, path);
        spec.layers.push_back(std::move(layer));
    }

    // Rebuild through the normal constructor so shape validation runs, then
    // overwrite the freshly initialized parameters with the stored values.
    Rng rng(0);
    Network<float> network = build_network<float>(spec, rng);
    if (network.class_count != class_count) {
        throw FormatError("checkpoint class count " + std::to_string(class_count) +
                          " does not match rebuilt network in " + path);
    }

    std::vector<Tensor<float>> params = network.parameters();
    uint32_t stored = get_u32(in, path);
    if (stored != params.size()) {
        throw FormatError("checkpoint stores " + std::to_string(stored) + " tensors, network has " +
                          std::to_string(params.size()) + ": " + path);
    }
    for (Tensor<float>& p : params) {
        Shape shape = get_shape(in, path);
        if (shape != p.shape()) {
            throw FormatError("checkpoint tensor shape mismatch in " + path);
        }
        auto v = p.mutable_values();
        for (auto& x : v) x = get_f32(in, path);
    }
    return network;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint: " + path);
    return in;
}

void check_magic(std::istream& in, const char expect[4], const std::string& path) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, expect, 4) != 0) {
        throw FormatError("not a " + std::string(expect, 4) + " checkpoint: " + path);
    }
    uint32_t version = get_u32(in, path);
    if (version != kVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " +
                          path);
    }
}

}  // namespace

void save_network(const std::string& path, Network<float>& network) {
    std::ofstream out = open_out(path);
    out.write(kNetworkMagic, 4);
    put_u32(out, kVersion);
    write_network_block(out, network);
    if (!out) throw IoError("short write while saving checkpoint: " + path);
}

Network<float> load_network(const std::string& path) {
    std::ifstream in = open_in(path);
    check_magic(in, kNetworkMagic, path);
    return read_network_block(in, path);
}

void save_gan_pair(const std::string& path, GanPair& pair) {
    std::ofstream out = open_out(path);
    out.write(kPairMagic, 4);
    put_u32(out, kVersion);
    put_i32(out, pair.class_id);
    put_i32(out, pair.latent_dim);
    put_i32(out, pair.epochs_trained);
    write_network_block(out, pair.generator);
    write_network_block(out, pair.discriminator);
    if (!out) throw IoError("short write while saving checkpoint: " + path);
}

GanPair load_gan_pair(const std::string& path) {
    std::ifstream in = open_in(path);
    check_magic(in, kPairMagic, path);
    GanPair pair;
    pair.class_id = get_i32(in, path);
    pair.latent_dim = get_i32(in, path);
    pair.epochs_trained = get_i32(in, path);
    pair.generator = read_network_block(in, path);
    pair.discriminator = read_network_block(in, path);
    return pair;
}

}  // namespace adagan
