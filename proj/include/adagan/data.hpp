#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adagan/rng.hpp"
#include "adagan/tensor.hpp"

namespace adagan {

/// Images are [N x 1 x H x W] with pixels in [0,1], bright strokes on a
/// dark background. Labels index into [0, class_count).
struct LabeledDataset {
    Tensor<float> images;
    std::vector<int> labels;
    int class_count = 0;
    std::vector<std::string> class_names;  // empty or one per class
    std::string group_tag;                 // "", "V", "C", "N", "X", or "All"

    int64_t size() const { return images.defined() ? images.dim(0) : 0; }

    void validate() const;

    Tensor<float> batch_images(const std::vector<int64_t>& idx) const;
    std::vector<int> batch_labels(const std::vector<int64_t>& idx) const;

    /// Single image as a [1 x 1 x H x W] batch.
    Tensor<float> image_at(int64_t i) const { return batch_images({i}); }

    std::vector<int64_t> class_indices(int class_id) const;
    std::vector<int64_t> per_class_counts() const;

    /// Rows picked by index, in the order given.
    LabeledDataset subset(const std::vector<int64_t>& idx) const;
};

// ---- IDX container (big-endian header, raw unsigned bytes) ---------------

Tensor<float> load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);
void save_idx_images(const std::string& path, const Tensor<float>& images);
void save_idx_labels(const std::string& path, const std::vector<int>& labels);

// ---- PGM (P5, 8-bit) ------------------------------------------------------

Tensor<float> load_pgm(const std::string& path);
/// Pixels quantized round-half-up to bytes.
void save_pgm(const std::string& path, const Tensor<float>& image);

/// Tile [N x 1 x 28 x 28] images row-major onto one PGM canvas with 2-px
/// black separators; unused cells in the last row stay black.
void dump_image_grid(const Tensor<float>& images, int columns, const std::string& path);

// ---- preprocessing --------------------------------------------------------

/// Bilinear resample of a [1 x H x W] image to [1 x 28 x 28], pixel-center
/// convention (28x28 input comes back unchanged).
Tensor<float> rescale_to_28(const Tensor<float>& image);

/// One sub-directory of PGM files per class; classes indexed by sorted
/// directory name. Images are rescaled to 28x28 and flipped to
/// bright-on-dark when their mean exceeds 0.5.
struct DirectoryLoadReport {
    std::vector<std::string> files;           // every image loaded, in order
    std::vector<std::string> inverted_files;  // subset that had polarity flipped
};
LabeledDataset load_directory_dataset(const std::string& root,
                                      DirectoryLoadReport* report = nullptr);

/// Class-map file: one "class_name group_tag" pair per line.
std::map<std::string, std::string> parse_class_map(const std::string& path);

/// Classes whose map entry equals group_tag, relabeled densely in sorted
/// class-name order.
LabeledDataset filter_by_group(const LabeledDataset& data,
                               const std::map<std::string, std::string>& class_map,
                               const std::string& group_tag);

// ---- synthetic glyphs ------------------------------------------------------

/// A glyph is a chain of cubic curves in the unit square; stroke count is
/// 2 + complexity. Identical (class_id, complexity, seed) gives identical
/// strokes.
struct GlyphSpec {
    int class_id = 0;
    int complexity = 1;
    uint64_t seed = 0;
    struct Stroke {
        double x0, y0, x1, y1, x2, y2, x3, y3;  // cubic control points
    };
    std::vector<Stroke> strokes;
};

GlyphSpec make_glyph_spec(uint64_t seed, int class_id, int complexity);

/// Rasterize one jittered sample of a glyph onto 28x28. sample_index selects
/// the jitter substream, so each (spec, sample_index) pair is reproducible.
Tensor<float> rasterize_glyph(const GlyphSpec& spec, int64_t sample_index);

LabeledDataset synth_glyph_dataset(int class_count, int per_class, int complexity,
                                   uint64_t seed);

// ---- splitting --------------------------------------------------------------

/// Stratified per class; per-class test counts are round(n * fraction)
/// clamped so both sides stay nonempty.
std::pair<LabeledDataset, LabeledDataset> train_test_split(const LabeledDataset& data,
                                                           double test_fraction,
                                                           uint64_t seed);

}  // namespace adagan
