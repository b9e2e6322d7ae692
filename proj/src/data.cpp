#include "adagan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <utility>

#include "adagan/errors.hpp"

namespace fs = std::filesystem;

namespace adagan {

namespace {

// rng stream tags, unique across the codebase
constexpr uint64_t kSplitStream = 0x73706C6974ULL;       // "split"
constexpr uint64_t kGlyphSpecStream = 0x676C7970ULL;     // "glyp"
constexpr uint64_t kGlyphJitterStream = 0x6A697474ULL;   // "jitt"

uint32_t be32(const unsigned char* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void put_be32(std::ostream& os, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

unsigned char quantize_byte(float v) {
    // round half up, clamped to the byte range
    const float scaled = std::floor(255.0f * v + 0.5f);
    return static_cast<unsigned char>(std::clamp(scaled, 0.0f, 255.0f));
}

}  // namespace

// ---- LabeledDataset ---------------------------------------------------------

void LabeledDataset::validate() const {
    if (!images.defined() || images.rank() != 4 || images.dim(1) != 1) {
        throw ContractError("dataset images must be [N x 1 x H x W]");
    }
    if (static_cast<int64_t>(labels.size()) != images.dim(0)) {
        throw ContractError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                            std::to_string(labels.size()) + " labels");
    }
    if (class_count < 1) throw ContractError("dataset class_count must be >= 1");
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= class_count) {
            throw ContractError("label " + std::to_string(labels[i]) + " at index " +
                                std::to_string(i) + " outside [0," + std::to_string(class_count) +
                                ")");
        }
    }
    for (float v : images.values()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw ContractError("dataset pixel " + std::to_string(v) + " outside [0,1]");
        }
    }
    if (!class_names.empty() && static_cast<int>(class_names.size()) != class_count) {
        throw ContractError("class_names size does not match class_count");
    }
}

Tensor<float> LabeledDataset::batch_images(const std::vector<int64_t>& idx) const {
    const int64_t h = images.dim(2), w = images.dim(3);
    const int64_t px = h * w;
    Tensor<float> out(Shape{static_cast<int64_t>(idx.size()), 1, h, w});
    float* o = out.mutable_values().data();
    const float* src = images.values().data();
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= size()) {
            throw ContractError("image index " + std::to_string(idx[i]) + " out of range");
        }
        std::copy(src + idx[i] * px, src + (idx[i] + 1) * px, o + static_cast<int64_t>(i) * px);
    }
    return out;
}

std::vector<int> LabeledDataset::batch_labels(const std::vector<int64_t>& idx) const {
    std::vector<int> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = labels[static_cast<size_t>(idx[i])];
    return out;
}

std::vector<int64_t> LabeledDataset::class_indices(int class_id) const {
    std::vector<int64_t> out;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == class_id) out.push_back(static_cast<int64_t>(i));
    }
    return out;
}

std::vector<int64_t> LabeledDataset::per_class_counts() const {
    std::vector<int64_t> counts(static_cast<size_t>(class_count), 0);
    for (int lab : labels) counts[static_cast<size_t>(lab)]++;
    return counts;
}

LabeledDataset LabeledDataset::subset(const std::vector<int64_t>& idx) const {
    LabeledDataset out;
    out.images = batch_images(idx);
    out.labels = batch_labels(idx);
    out.class_count = class_count;
    out.class_names = class_names;
    out.group_tag = group_tag;
    return out;
}

// ---- IDX --------------------------------------------------------------------

Tensor<float> load_idx_images(const std::string& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 16) throw FormatError(path + ": truncated IDX image header");
    const uint32_t magic = be32(bytes.data());
    if (magic != 0x00000803u) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "expected image magic 0x00000803, got 0x%08x", magic);
        throw FormatError(path + ": " + buf);
    }
    const int64_t count = be32(bytes.data() + 4);
    const int64_t rows = be32(bytes.data() + 8);
    const int64_t cols = be32(bytes.data() + 12);
    const size_t expected = static_cast<size_t>(count * rows * cols);
    const size_t actual = bytes.size() - 16;
    if (actual != expected) {
        throw FormatError(path + ": payload has " + std::to_string(actual) +
                          " bytes, header implies " + std::to_string(expected));
    }
    Tensor<float> out(Shape{count, 1, rows, cols});
    float* o = out.mutable_values().data();
    for (size_t i = 0; i < expected; ++i) o[i] = bytes[16 + i] / 255.0f;
    return out;
}

std::vector<int> load_idx_labels(const std::string& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 8) throw FormatError(path + ": truncated IDX label header");
    const uint32_t magic = be32(bytes.data());
    if (magic != 0x00000801u) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "expected label magic 0x00000801, got 0x%08x", magic);
        throw FormatError(path + ": " + buf);
    }
    const size_t count = be32(bytes.data() + 4);
    if (bytes.size() - 8 != count) {
        throw FormatError(path + ": payload has " + std::to_string(bytes.size() - 8) +
                          " bytes, header implies " + std::to_string(count));
    }
    std::vector<int> labels(count);
    for (size_t i = 0; i < count; ++i) labels[i] = bytes[8 + i];
    return labels;
}

void save_idx_images(const std::string& path, const Tensor<float>& images) {
    if (images.rank() != 4 || images.dim(1) != 1) {
        throw ContractError("save_idx_images expects [N x 1 x H x W], got " +
                            shape_str(images.shape()));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    put_be32(out, 0x00000803u);
    put_be32(out, static_cast<uint32_t>(images.dim(0)));
    put_be32(out, static_cast<uint32_t>(images.dim(2)));
    put_be32(out, static_cast<uint32_t>(images.dim(3)));
    std::vector<unsigned char> bytes(static_cast<size_t>(images.size()));
    const float* v = images.values().data();
    for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize_byte(v[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

void save_idx_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    put_be32(out, 0x00000801u);
    put_be32(out, static_cast<uint32_t>(labels.size()));
    std::vector<unsigned char> bytes(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] > 255) {
            throw ContractError("label " + std::to_string(labels[i]) + " does not fit in a byte");
        }
        bytes[i] = static_cast<unsigned char>(labels[i]);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

// ---- PGM --------------------------------------------------------------------

namespace {

// next header token, skipping whitespace and #-to-end-of-line comments
std::string pgm_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw FormatError(path + ": unexpected end of PGM header");
    return tok;
}

int64_t pgm_int(std::istream& in, const std::string& path, const char* field) {
    const std::string tok = pgm_token(in, path);
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(tok, &pos);
        if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw FormatError(path + ": bad PGM " + field + " '" + tok + "'");
    }
}

}  // namespace

Tensor<float> load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    if (pgm_token(in, path) != "P5") throw FormatError(path + ": not a P5 PGM file");
    const int64_t w = pgm_int(in, path, "width");
    const int64_t h = pgm_int(in, path, "height");
    const int64_t maxval = pgm_int(in, path, "maxval");
    if (maxval > 255) throw FormatError(path + ": 16-bit PGM (maxval > 255) not supported");
    // the tokenizer consumed the single whitespace byte after maxval, so the
    // stream now sits on the first raster byte
    std::vector<unsigned char> bytes(static_cast<size_t>(w * h));
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw FormatError(path + ": raster truncated, expected " + std::to_string(w * h) +
                          " bytes, got " + std::to_string(in.gcount()));
    }
    Tensor<float> out(Shape{1, h, w});
    float* o = out.mutable_values().data();
    const float denom = static_cast<float>(maxval);
    for (size_t i = 0; i < bytes.size(); ++i) o[i] = std::min(1.0f, bytes[i] / denom);
    return out;
}

void save_pgm(const std::string& path, const Tensor<float>& image) {
    if (image.rank() != 3 || image.dim(0) != 1) {
        throw ContractError("save_pgm expects [1 x H x W], got " + shape_str(image.shape()));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << image.dim(2) << " " << image.dim(1) << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<size_t>(image.size()));
    const float* v = image.values().data();
    for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize_byte(v[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

void dump_image_grid(const Tensor<float>& images, int columns, const std::string& path) {
    if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != 28 || images.dim(3) != 28) {
        throw ContractError("dump_image_grid expects [N x 1 x 28 x 28], got " +
                            shape_str(images.shape()));
    }
    const int64_t n = images.dim(0);
    if (n < 1 || columns < 1) {
        throw ContractError("dump_image_grid needs at least one image and one column");
    }
    const int64_t cols = std::min<int64_t>(columns, n);
    const int64_t rows = (n + cols - 1) / cols;
    const int64_t width = cols * 28 + (cols - 1) * 2;
    const int64_t height = rows * 28 + (rows - 1) * 2;

    Tensor<float> canvas(Shape{1, height, width});  // separators stay 0
    float* dst = canvas.mutable_values().data();
    const float* src = images.values().data();
    for (int64_t i = 0; i < n; ++i) {
        const int64_t top = (i / cols) * 30;
        const int64_t left = (i % cols) * 30;
        for (int64_t y = 0; y < 28; ++y) {
            std::copy_n(src + i * 784 + y * 28, 28, dst + (top + y) * width + left);
        }
    }
    save_pgm(path, canvas);
}

// ---- preprocessing ----------------------------------------------------------

Tensor<float> rescale_to_28(const Tensor<float>& image) {
    if (image.rank() != 3 || image.dim(0) != 1) {
        throw ContractError("rescale_to_28 expects [1 x H x W], got " + shape_str(image.shape()));
    }
    const int64_t h = image.dim(1), w = image.dim(2);
    Tensor<float> out(Shape{1, 28, 28});
    const float* src = image.values().data();
    float* dst = out.mutable_values().data();
    for (int64_t oy = 0; oy < 28; ++oy) {
        const double sy = std::clamp((oy + 0.5) * h / 28.0 - 0.5, 0.0, double(h - 1));
        const int64_t y0 = static_cast<int64_t>(sy);
        const int64_t y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - double(y0);
        for (int64_t ox = 0; ox < 28; ++ox) {
            const double sx = std::clamp((ox + 0.5) * w / 28.0 - 0.5, 0.0, double(w - 1));
            const int64_t x0 = static_cast<int64_t>(sx);
            const int64_t x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - double(x0);
            const double top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            const double bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            dst[oy * 28 + ox] = static_cast<float>(top * (1.0 - fy) + bot * fy);
        }
    }
    return out;
}

LabeledDataset load_directory_dataset(const std::string& root, DirectoryLoadReport* report) {
    if (!fs::is_directory(root)) throw InputError(root + " is not a directory");
    std::vector<std::string> class_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
    }
    if (class_dirs.empty()) throw InputError(root + " contains no class sub-directories");
    std::sort(class_dirs.begin(), class_dirs.end());

    std::vector<float> pixels;
    std::vector<int> labels;
    for (size_t c = 0; c < class_dirs.size(); ++c) {
        const fs::path dir = fs::path(root) / class_dirs[c];
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
                files.push_back(entry.path().string());
            }
        }
        if (files.empty()) throw InputError("class sub-directory " + dir.string() + " has no .pgm images");
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            Tensor<float> img = rescale_to_28(load_pgm(file));
            double mean = 0.0;
            for (float v : img.values()) mean += v;
            mean /= static_cast<double>(img.size());
            if (mean > 0.5) {
                for (float& v : img.mutable_values()) v = 1.0f - v;
                if (report) report->inverted_files.push_back(file);
            }
            if (report) report->files.push_back(file);
            pixels.insert(pixels.end(), img.values().begin(), img.values().end());
            labels.push_back(static_cast<int>(c));
        }
    }

    LabeledDataset data;
    data.images = Tensor<float>(Shape{static_cast<int64_t>(labels.size()), 1, 28, 28},
                                std::move(pixels));
    data.labels = std::move(labels);
    data.class_count = static_cast<int>(class_dirs.size());
    data.class_names = std::move(class_dirs);
    data.validate();
    return data;
}

std::map<std::string, std::string> parse_class_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::map<std::string, std::string> map;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string name, tag, extra;
        if (!(ls >> name)) continue;  // blank line
        if (!(ls >> tag) || (ls >> extra)) {
            throw FormatError(path + ":" + std::to_string(line_no) +
                              ": expected 'class_name group_tag'");
        }
        map[name] = tag;
    }
    return map;
}

LabeledDataset filter_by_group(const LabeledDataset& data,
                               const std::map<std::string, std::string>& class_map,
                               const std::string& group_tag) {
    if (data.class_names.empty()) {
        throw ContractError("filter_by_group requires a dataset with class names");
    }
    std::vector<int> selected;  // old class ids, in original order
    for (int c = 0; c < data.class_count; ++c) {
        const auto it = class_map.find(data.class_names[static_cast<size_t>(c)]);
        if (it != class_map.end() && it->second == group_tag) selected.push_back(c);
    }
    if (selected.empty()) throw InputError("no classes carry group tag '" + group_tag + "'");
    std::vector<int> relabel(static_cast<size_t>(data.class_count), -1);
    for (size_t i = 0; i < selected.size(); ++i) relabel[static_cast<size_t>(selected[i])] = static_cast<int>(i);

    std::vector<int64_t> rows;
    for (size_t i = 0; i < data.labels.size(); ++i) {
        if (relabel[static_cast<size_t>(data.labels[i])] >= 0) rows.push_back(static_cast<int64_t>(i));
    }
    LabeledDataset out;
    out.images = data.batch_images(rows);
    out.labels.reserve(rows.size());
    for (int64_t r : rows) out.labels.push_back(relabel[static_cast<size_t>(data.labels[static_cast<size_t>(r)])]);
    out.class_count = static_cast<int>(selected.size());
    for (int c : selected) out.class_names.push_back(data.class_names[static_cast<size_t>(c)]);
    out.group_tag = group_tag;
    out.validate();
    return out;
}

// ---- synthetic glyphs ---------------------------------------------------------

GlyphSpec make_glyph_spec(uint64_t seed, int class_id, int complexity) {
    if (complexity < 1) throw ContractError("glyph complexity must be >= 1");
    GlyphSpec spec;
    spec.class_id = class_id;
    spec.complexity = complexity;
    spec.seed = seed;
    Rng rng = Rng::derive(seed, kGlyphSpecStream,
                          (uint64_t(uint32_t(class_id)) << 32) | uint64_t(uint32_t(complexity)));
    const int stroke_count = 2 + complexity;
    double px = rng.uniform(0.2, 0.8);
    double py = rng.uniform(0.2, 0.8);
    for (int k = 0; k < stroke_count; ++k) {
        GlyphSpec::Stroke s{};
        s.x0 = px;
        s.y0 = py;
        s.x1 = rng.uniform(0.05, 0.95);
        s.y1 = rng.uniform(0.05, 0.95);
        s.x2 = rng.uniform(0.05, 0.95);
        s.y2 = rng.uniform(0.05, 0.95);
        s.x3 = rng.uniform(0.1, 0.9);
        s.y3 = rng.uniform(0.1, 0.9);
        px = s.x3;
        py = s.y3;
        spec.strokes.push_back(s);
    }
    return spec;
}

Tensor<float> rasterize_glyph(const GlyphSpec& spec, int64_t sample_index) {
    const uint64_t substream = (uint64_t(uint32_t(spec.class_id)) << 48) |
                               (uint64_t(uint32_t(spec.complexity) & 0xFF) << 40) |
                               (uint64_t(sample_index) & 0xFFFFFFFFFFULL);
    Rng rng = Rng::derive(spec.seed, kGlyphJitterStream, substream);

    // per-sample jitter: control-point noise, small rotation, stroke width
    std::vector<GlyphSpec::Stroke> strokes = spec.strokes;
    for (auto& s : strokes) {
        for (double* coord : {&s.x0, &s.y0, &s.x1, &s.y1, &s.x2, &s.y2, &s.x3, &s.y3}) {
            *coord += rng.normal() * 0.03;
        }
    }
    constexpr double kPi = 3.14159265358979323846;
    const double theta = rng.uniform(-10.0, 10.0) * kPi / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (auto& s : strokes) {
        const std::pair<double*, double*> points[4] = {
            {&s.x0, &s.y0}, {&s.x1, &s.y1}, {&s.x2, &s.y2}, {&s.x3, &s.y3}};
        for (auto [xp, yp] : points) {
            const double dx = *xp - 0.5, dy = *yp - 0.5;
            *xp = 0.5 + ct * dx - st * dy;
            *yp = 0.5 + st * dx + ct * dy;
        }
    }
    const double radius = rng.uniform(1.0, 2.0) / 2.0;

    Tensor<float> img(Shape{1, 28, 28});
    float* px = img.mutable_values().data();
    constexpr int kSteps = 64;  // fixed-step curve sampling keeps output deterministic
    for (const auto& s : strokes) {
        for (int i = 0; i < kSteps; ++i) {
            const double t = double(i) / double(kSteps - 1);
            const double u = 1.0 - t;
            const double bx = u * u * u * s.x0 + 3 * u * u * t * s.x1 + 3 * u * t * t * s.x2 + t * t * t * s.x3;
            const double by = u * u * u * s.y0 + 3 * u * u * t * s.y1 + 3 * u * t * t * s.y2 + t * t * t * s.y3;
            const double cx = 2.0 + 24.0 * bx;
            const double cy = 2.0 + 24.0 * by;
            const int64_t x_lo = std::max<int64_t>(0, int64_t(std::floor(cx - radius - 1)));
            const int64_t x_hi = std::min<int64_t>(27, int64_t(std::ceil(cx + radius + 1)));
            const int64_t y_lo = std::max<int64_t>(0, int64_t(std::floor(cy - radius - 1)));
            const int64_t y_hi = std::min<int64_t>(27, int64_t(std::ceil(cy + radius + 1)));
            for (int64_t y = y_lo; y <= y_hi; ++y) {
                for (int64_t x = x_lo; x <= x_hi; ++x) {
                    const double dist = std::hypot(double(x) - cx, double(y) - cy);
                    const double cover = std::clamp(radius + 0.5 - dist, 0.0, 1.0);
                    float& p = px[y * 28 + x];
                    p = std::max(p, static_cast<float>(cover));
                }
            }
        }
    }
    return img;
}

LabeledDataset synth_glyph_dataset(int class_count, int per_class, int complexity, uint64_t seed) {
    if (class_count < 2) throw ContractError("synth_glyph_dataset needs class_count >= 2");
    if (per_class < 1) throw ContractError("synth_glyph_dataset needs per_class >= 1");
    if (complexity < 1) throw ContractError("synth_glyph_dataset needs complexity >= 1");

    const int64_t total = int64_t(class_count) * per_class;
    Tensor<float> images(Shape{total, 1, 28, 28});
    std::vector<int> labels(static_cast<size_t>(total));
    float* dst = images.mutable_values().data();
    int64_t row = 0;
    for (int c = 0; c < class_count; ++c) {
        const GlyphSpec spec = make_glyph_spec(seed, c, complexity);
        for (int s = 0; s < per_class; ++s, ++row) {
            const Tensor<float> img = rasterize_glyph(spec, s);
            std::copy(img.values().begin(), img.values().end(), dst + row * 28 * 28);
            labels[static_cast<size_t>(row)] = c;
        }
    }

    LabeledDataset data;
    data.images = std::move(images);
    data.labels = std::move(labels);
    data.class_count = class_count;
    data.class_names.reserve(static_cast<size_t>(class_count));
    for (int c = 0; c < class_count; ++c) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "glyph_%02d", c);
        data.class_names.emplace_back(buf);
    }
    data.validate();
    return data;
}

// ---- splitting ------------------------------------------------------------------

std::pair<LabeledDataset, LabeledDataset> train_test_split(const LabeledDataset& data,
                                                           double test_fraction, uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ContractError("test_fraction must lie strictly between 0 and 1");
    }
    std::vector<int64_t> train_rows, test_rows;
    for (int c = 0; c < data.class_count; ++c) {
        std::vector<int64_t> rows = data.class_indices(c);
        if (rows.size() < 2) {
            throw InputError("class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                             " samples; need at least 2 to split");
        }
        Rng rng = Rng::derive(seed, kSplitStream, static_cast<uint64_t>(c));
        rng.shuffle(rows);
        const int64_t n = static_cast<int64_t>(rows.size());
        const int64_t k = std::clamp<int64_t>(std::llround(double(n) * test_fraction), 1, n - 1);
        test_rows.insert(test_rows.end(), rows.begin(), rows.begin() + k);
        train_rows.insert(train_rows.end(), rows.begin() + k, rows.end());
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(test_rows.begin(), test_rows.end());
    return {data.subset(train_rows), data.subset(test_rows)};
}

}  // namespace adagan
